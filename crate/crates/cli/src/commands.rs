use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use schmidt_core::diophantine::{
    badness_witness, badness_witness_between, continued_fraction, BadnessWitness, ContinuedFraction, MAX_CF_TERMS,
};
use schmidt_core::dimension::{box_dimension, box_scales, pack_count, dim_lower_bound};
use schmidt_core::game::Transcript;
use schmidt_core::geometry::Point;
use schmidt_core::ifs::IfSystem;
use schmidt_core::measure::MeasureCertificate;
use schmidt_core::pipeline::{self, certify_ifs, run_winning_game, RunOptions, WinningRun, AUTO_ALPHA_DIVISOR};
use schmidt_core::session::{parse_session_spec, Param, SessionSpec};
use schmidt_core::Error;

use crate::Global;

/// Used when `beta` is `"auto"` and no `--beta` is given.
const DEFAULT_BETA: f64 = 0.25;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Builds the session from `--spec` or `--preset` plus flag overrides.
fn load_session(g: &Global, default_preset: Option<&str>) -> Result<SessionSpec, CliError> {
    let mut spec = match (&g.spec, &g.preset) {
        (Some(_), Some(_)) => return Err(CliError::Validation("give --spec or --preset, not both".into())),
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            parse_session_spec(&text).map_err(|e| CliError::Validation(format!("{}:\n{e}", path.display())))?
        }
        (None, preset) => {
            let Some(name) = preset.as_deref().or(default_preset) else {
                return Err(CliError::Validation("give --spec FILE or --preset NAME".into()));
            };
            let Some(seed) = g.seed else {
                return Err(CliError::Validation("missing --seed (required for randomised commands)".into()));
            };
            SessionSpec::for_preset(name, seed)?
        }
    };
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    for (name, flag, slot) in [("alpha", g.alpha, &mut spec.alpha), ("beta", g.beta, &mut spec.beta)] {
        if let Some(v) = flag {
            if !(v > 0.0 && v < 1.0) {
                return Err(CliError::Validation(format!("--{name} must lie in (0,1), got {v}")));
            }
            *slot = Param::Value(v);
        }
    }
    if let Some(t) = g.target_radius {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Validation(format!("--target-radius must lie in (0,1), got {t}")));
        }
        spec.target_radius = t;
    }
    Ok(spec)
}

fn out_dir(g: &Global, spec: Option<&SessionSpec>) -> Result<Option<std::path::PathBuf>, CliError> {
    let dir = g
        .out
        .clone()
        .or_else(|| spec.and_then(|s| s.out.clone()).map(Into::into));
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

fn certificate(spec: &SessionSpec, ifs: &IfSystem) -> Result<MeasureCertificate, CliError> {
    Ok(certify_ifs(ifs, &spec.certify.clone().unwrap_or_default(), spec.seed)?)
}

fn resolve_alpha(spec: &SessionSpec, cert: &MeasureCertificate) -> f64 {
    match spec.alpha {
        Param::Value(a) => a,
        Param::Auto => cert.alpha_prime / AUTO_ALPHA_DIVISOR,
    }
}

fn resolve_beta(spec: &SessionSpec) -> f64 {
    match spec.beta {
        Param::Value(b) => b,
        Param::Auto => DEFAULT_BETA,
    }
}

pub fn certify_measure(g: &Global) -> Result<(), CliError> {
    let spec = load_session(g, None)?;
    let ifs = spec.ifs_system()?;
    let cert = certificate(&spec, &ifs)?;
    let json = to_json(&cert);
    if let Some(dir) = out_dir(g, Some(&spec))? {
        write_file(&dir, "certificate.json", &json)?;
    }
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct PlayReport<'a> {
    session: &'a SessionSpec,
    certificate: &'a MeasureCertificate,
    all_pass: bool,
    run: &'a WinningRun,
}

fn play_session(spec: &SessionSpec) -> Result<(MeasureCertificate, WinningRun), CliError> {
    let ifs = Arc::new(spec.ifs_system()?);
    let cert = certificate(spec, &ifs)?;
    let opts = RunOptions {
        alpha: resolve_alpha(spec, &cert),
        beta: resolve_beta(spec),
        target_radius: spec.target_radius,
        seed: spec.seed,
        adversary: spec.adversary,
        initial_radius: None,
    };
    let run = run_winning_game(ifs, &cert, spec.families(), &opts)?;
    Ok((cert, run))
}

fn moves_csv(t: &Transcript) -> String {
    let n = t.header.initial_ball.center.dim();
    let mut s = String::from("index,owner,radius");
    for i in 0..n {
        let _ = write!(s, ",x{i}");
    }
    s.push('\n');
    for m in &t.history {
        let _ = write!(s, "{},{:?},{:e}", m.index, m.owner, m.radius);
        for i in 0..n {
            let _ = write!(s, ",{:e}", m.center[i]);
        }
        s.push('\n');
    }
    s
}

pub fn play(g: &Global, adversary: Option<&str>) -> Result<(), CliError> {
    let mut spec = load_session(g, None)?;
    if let Some(a) = adversary {
        spec.adversary = a.parse()?;
    }
    let (cert, run) = play_session(&spec)?;
    let report = PlayReport {
        session: &spec,
        certificate: &cert,
        all_pass: run.all_pass(),
        run: &run,
    };
    let json = to_json(&report);
    if let Some(dir) = out_dir(g, Some(&spec))? {
        write_file(&dir, "report.json", &json)?;
        if let Some(t) = &run.transcript {
            write_file(&dir, "transcript.jsonl", &t.to_jsonl())?;
            write_file(&dir, "moves.csv", &moves_csv(t))?;
        }
    }
    print!("{json}");
    if run.all_pass() {
        Ok(())
    } else {
        Err(CliError::Runtime("the outcome failed a check; see the report".into()))
    }
}

#[derive(Serialize)]
struct BaReport {
    x: Point,
    q_max: u64,
    witness: BadnessWitness,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail: Option<BadnessWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    continued_fraction: Option<ContinuedFraction>,
}

pub fn verify_ba(g: &Global, x: &[f64], q_max: u64, q_from: Option<u64>) -> Result<(), CliError> {
    let point = Point::new(x)?;
    let report = BaReport {
        x: point,
        q_max,
        witness: badness_witness(&point, q_max)?,
        tail: q_from.map(|lo| badness_witness_between(&point, lo, q_max)).transpose()?,
        continued_fraction: (x.len() == 1).then(|| continued_fraction(x[0], MAX_CF_TERMS)).transpose()?,
    };
    let json = to_json(&report);
    if let Some(dir) = out_dir(g, None)? {
        write_file(&dir, "verify_ba.json", &json)?;
    }
    print!("{json}");
    Ok(())
}

pub fn simplex_check(g: &Global, dim: usize, trials: usize) -> Result<(), CliError> {
    let Some(seed) = g.seed else {
        return Err(CliError::Validation("missing --seed (required for randomised commands)".into()));
    };
    let report = pipeline::simplex_check(dim, trials, seed)?;
    let json = to_json(&report);
    if let Some(dir) = out_dir(g, None)? {
        write_file(&dir, "simplex_check.json", &json)?;
    }
    print!("{json}");
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} simplex violations", report.violations.len())))
    }
}

pub fn dim(g: &Global, ms: &[u32], n_points: usize) -> Result<(), CliError> {
    let spec = load_session(g, None)?;
    let ifs = spec.ifs_system()?;
    let alpha = match spec.alpha {
        Param::Value(a) => a,
        Param::Auto => resolve_alpha(&spec, &certificate(&spec, &ifs)?),
    };
    let points = ifs.chaos_sample(n_points, spec.seed)?;
    let box_dim = box_dimension(&points, &box_scales(&ifs, n_points))?;
    let rho = ifs.max_ratio();
    let x = *ifs.anchor();
    let mut tsv = String::from("beta\tn_beta\tbound\tbox_dim\n");
    for &m in ms {
        let beta = rho.powi(m as i32);
        let n_beta = pack_count(&ifs, &x, 1.0, beta)?;
        let bound = dim_lower_bound(n_beta, alpha, beta).map_or("NA".to_string(), |b| format!("{b:.6}"));
        let _ = writeln!(tsv, "{beta:e}\t{n_beta}\t{bound}\t{box_dim:.6}");
    }
    if let Some(dir) = out_dir(g, Some(&spec))? {
        write_file(&dir, "sweep.tsv", &tsv)?;
        let n = ifs.dim();
        let mut csv = (0..n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
        csv.push('\n');
        for p in &points {
            let row: Vec<String> = (0..n).map(|i| format!("{:e}", p[i])).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&dir, "points.csv", &csv)?;
    }
    print!("{tsv}");
    Ok(())
}

pub fn demo(g: &Global) -> Result<(), CliError> {
    let spec = load_session(g, Some("cantor3"))?;
    let (cert, run) = play_session(&spec)?;
    let mut text = String::new();
    let _ = writeln!(text, "alpha'            {:.6}", cert.alpha_prime);
    let _ = writeln!(text, "alpha, beta       {:.6e}, {}", run.alpha, run.beta);
    let _ = writeln!(text, "outcome point     {:?}", run.outcome_point);
    let _ = writeln!(text, "outcome radius    {:.3e}", run.outcome_radius);
    for f in &run.families {
        let _ = writeln!(
            text,
            "family {}: guaranteed delta {:.3e}, enforced {:.3e}, stages {}, Q {}",
            f.family, f.state.delta_guaranteed, f.state.delta_effective, f.state.stage, f.q_checked
        );
        match &f.witness {
            Some(w) => {
                let _ = writeln!(
                    text,
                    "  witness {:.6e} at p = {:?}, q = {}{}",
                    w.delta_hat,
                    w.argmin.p,
                    w.argmin.q,
                    if f.passes { "" } else { "  FAIL" }
                );
            }
            None => {
                let _ = writeln!(text, "  no stage completed");
            }
        }
    }
    if run.outcome_point.dim() == 1 {
        let cf = continued_fraction(run.outcome_point[0], MAX_CF_TERMS)?;
        let _ = writeln!(text, "continued fraction {:?}", cf.trusted_quotients());
    }
    let _ = writeln!(
        text,
        "replay violations {}, separation violations {}",
        run.replay.violations.len(),
        run.separation.violations.len()
    );
    if let Some(dir) = out_dir(g, Some(&spec))? {
        let report = PlayReport {
            session: &spec,
            certificate: &cert,
            all_pass: run.all_pass(),
            run: &run,
        };
        write_file(&dir, "report.json", &to_json(&report))?;
        if let Some(t) = &run.transcript {
            write_file(&dir, "transcript.jsonl", &t.to_jsonl())?;
        }
    }
    print!("{text}");
    if run.all_pass() {
        Ok(())
    } else {
        Err(CliError::Runtime("the outcome failed a check".into()))
    }
}
