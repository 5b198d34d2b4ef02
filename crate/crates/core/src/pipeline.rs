//! End-to-end runs: certify the measure, play the winning strategy against
//! an adversary, and check the result.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::{
    mapped_badness_witness, simplex_hyperplane, simplex_radius_bound, window, window_ratio, AffineMap, BadnessWitness,
};
use crate::error::{Error, Result};
use crate::game::{check_transcript, play_game, Concentric, GameConfig, GreedyAdversary, Player, ReplayReport, Transcript};
use crate::geometry::{Ball, Matrix, Point};
use crate::ifs::IfSystem;
use crate::measure::{certify, default_eps_ratios, MeasureCertificate, SamplePlan};
use crate::strategy::{check_separation, SeparationReport, StrategyState, TargetFamily, WinningStrategy};

/// Safety factor between α′ and the α used by "auto".
pub const AUTO_ALPHA_DIVISOR: f64 = 13.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub n_centers: usize,
    /// Number of radii, `seed diameter · ρ_max^j` for `j = 1..=levels`.
    pub levels: usize,
    pub n_planes: usize,
    pub eps_ratios: Vec<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            n_centers: 24,
            levels: 6,
            n_planes: 3,
            eps_ratios: default_eps_ratios(),
        }
    }
}

/// Certifies the natural measure of `ifs` with a plan derived from `opts`.
pub fn certify_ifs(ifs: &IfSystem, opts: &CertifyOptions, seed: u64) -> Result<MeasureCertificate> {
    let finest = opts
        .eps_ratios
        .iter()
        .copied()
        .filter(|e| *e <= crate::measure::DECAY_FIT_MAX)
        .fold(1.0, f64::min);
    let plan = SamplePlan::for_ifs(ifs, opts.n_centers, opts.levels, finest, seed);
    certify(ifs, &plan, opts.n_planes, &opts.eps_ratios)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    #[default]
    Greedy,
    Concentric,
}

impl std::str::FromStr for AdversaryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "concentric" => Ok(Self::Concentric),
            other => Err(Error::invalid(format!("unknown adversary '{other}' (greedy, concentric)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub alpha: f64,
    pub beta: f64,
    pub target_radius: f64,
    pub seed: u64,
    pub adversary: AdversaryKind,
    /// Radius of B's opening ball; defaults to the seed ball's radius
    /// (capped at 1).
    pub initial_radius: Option<f64>,
}

/// Witness for one target family at the outcome point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyWitness {
    pub family: usize,
    pub state: StrategyState,
    /// Largest `q` the completed stages cover.
    pub q_checked: u64,
    pub witness: Option<BadnessWitness>,
    /// `witness ≥ 0.99 · delta_guaranteed`.
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinningRun {
    pub alpha: f64,
    pub beta: f64,
    pub initial_ball: Ball,
    pub outcome_point: Point,
    pub outcome_radius: f64,
    pub moves: usize,
    pub repairs: usize,
    pub families: Vec<FamilyWitness>,
    pub replay: ReplayReport,
    pub separation: SeparationReport,
    #[serde(skip)]
    pub transcript: Option<Transcript>,
}

impl WinningRun {
    pub fn all_pass(&self) -> bool {
        self.replay.is_clean() && self.separation.violations.is_empty() && self.families.iter().all(|f| f.passes)
    }
}

/// Plays the winning strategy for `families` on `ifs` and checks the
/// transcript, the separation invariant and the outcome's witnesses.
pub fn run_winning_game(
    ifs: Arc<IfSystem>,
    cert: &MeasureCertificate,
    families: Vec<TargetFamily>,
    opts: &RunOptions,
) -> Result<WinningRun> {
    let start = ifs.chaos_sample(1, opts.seed)?[0];
    let radius = opts
        .initial_radius
        .unwrap_or_else(|| ifs.seed_ball().radius.min(cert.r0));
    let initial_ball = Ball::new(start, radius)?;
    let mut config = GameConfig::new(opts.alpha, opts.beta, initial_ball, ifs.clone());
    config.target_radius = Some(opts.target_radius);
    config.validate()?;

    let mut a = WinningStrategy::new(ifs.clone(), cert.clone(), opts.alpha, opts.beta, families.clone())?;
    let mut b: Box<dyn Player> = match opts.adversary {
        AdversaryKind::Greedy => Box::new(GreedyAdversary::new(families.iter().map(|f| f.lam.clone()).collect())),
        AdversaryKind::Concentric => Box::new(Concentric),
    };
    let transcript = play_game(&config, &mut a, b.as_mut()).map_err(|aborted| aborted.error)?;
    let replay = check_transcript(&transcript, &ifs);
    let separation = check_separation(&transcript, &families, a.states());
    let witnesses = a
        .states()
        .iter()
        .zip(&families)
        .map(|(st, fam)| family_witness(st, &fam.lam, &transcript.outcome_point))
        .collect::<Result<Vec<_>>>()?;
    Ok(WinningRun {
        alpha: opts.alpha,
        beta: opts.beta,
        initial_ball,
        outcome_point: transcript.outcome_point,
        outcome_radius: transcript.outcome_radius,
        moves: transcript.history.len(),
        repairs: transcript.repairs(),
        families: witnesses,
        replay,
        separation,
        transcript: Some(transcript),
    })
}

fn family_witness(st: &StrategyState, lam: &AffineMap, x: &Point) -> Result<FamilyWitness> {
    let q = st.q_guaranteed();
    let witness = if q >= 1 {
        Some(mapped_badness_witness(lam, x, q)?)
    } else {
        None
    };
    let passes = witness
        .as_ref()
        .is_some_and(|w| w.delta_hat >= 0.99 * st.delta_guaranteed);
    Ok(FamilyWitness {
        family: st.family,
        state: st.clone(),
        q_checked: q,
        witness,
        passes,
    })
}

/// One randomised input to the simplex lemma.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexInstance {
    pub lam: AffineMap,
    pub theta: f64,
    pub k: u32,
    pub x: Point,
    pub r: f64,
}

/// Draws `Λ` with entries in `[−2, 2]` and `|det| ≥ 0.2`, `θ ∈ [0.05, 0.9]`,
/// `k ∈ 1..=5` and `r = 0.9 ×` the radius bound. The centre is placed near a
/// target from window `k` so that most instances are not vacuous.
pub fn random_simplex_instance(n: usize, rng: &mut impl Rng) -> Result<SimplexInstance> {
    let lam = loop {
        let entries: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = Matrix::from_row_major(n, &entries)?;
        if m.determinant().abs() >= 0.2 {
            let shift = Point::from_fn(n, |_| rng.random_range(-1.0..1.0));
            break AffineMap::new(m, shift)?;
        }
    };
    let theta = rng.random_range(0.05..=0.9);
    let k = rng.random_range(1..=5u32);
    let r = 0.9 * simplex_radius_bound(&lam, theta);
    let (q_lo, q_hi) = window(window_ratio(theta, n), k);
    let q = rng.random_range(q_lo.ceil().max(1.0)..q_hi.max(q_lo.ceil().max(1.0) + 1.0)).floor() as u64;
    let p: Vec<i64> = (0..n).map(|_| rng.random_range(-3 * q as i64..=3 * q as i64)).collect();
    let reach = theta.powi(k as i32 - 1) * r / (n as f64).sqrt();
    let x = lam.image_of(&p, q) + Point::from_fn(n, |_| rng.random_range(-reach..reach));
    Ok(SimplexInstance { lam, theta, k, x, r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexCheckReport {
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    /// Instances whose ball held at least one target.
    pub nonempty: usize,
    pub max_targets: usize,
    pub max_span_dim: usize,
    /// Largest `residual / r`.
    pub max_residual_ratio: f64,
    pub violations: Vec<String>,
}

/// Runs [`simplex_hyperplane`] on `trials` random instances. Instance `i`
/// draws from its own stream, so results do not depend on the thread count.
pub fn simplex_check(n: usize, trials: usize, seed: u64) -> Result<SimplexCheckReport> {
    if !(1..=3).contains(&n) {
        return Err(Error::invalid(format!("simplex check supports dimensions 1..=3, got {n}")));
    }
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let inst = random_simplex_instance(n, &mut rng)?;
            Ok(match simplex_hyperplane(&inst.lam, inst.theta, inst.k, &inst.x, inst.r) {
                Ok(out) => Ok((out.targets.len(), out.span_dim, out.residual / inst.r)),
                Err(Error::SimplexViolated(msg)) => Err(format!("instance {i}: {msg}")),
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SimplexCheckReport {
        dim: n,
        trials,
        seed,
        nonempty: 0,
        max_targets: 0,
        max_span_dim: 0,
        max_residual_ratio: 0.0,
        violations: Vec::new(),
    };
    for o in outcomes {
        match o {
            Ok((count, span, resid)) => {
                report.nonempty += usize::from(count > 0);
                report.max_targets = report.max_targets.max(count);
                report.max_span_dim = report.max_span_dim.max(span);
                report.max_residual_ratio = report.max_residual_ratio.max(resid);
            }
            Err(msg) => report.violations.push(msg),
        }
    }
    Ok(report)
}
