//! Empirical certification of the natural measure: power law, doubling at
//! ratio 5/6, and absolute decay near hyperplanes.
//!
//! Every estimate is conservative with respect to the cylinder bracketing
//! of [`IfSystem::measure_bounds_in`]: lower bounds go into numerators of
//! "at least" claims and upper bounds into numerators of "at most" claims.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Hyperplane, Point};
use crate::ifs::{BallSlab, IfSystem};

/// Ratio of the inner ball in the doubling condition.
pub const DOUBLING_RATIO: f64 = 5.0 / 6.0;
/// Only `ε/r` up to this value enter the decay exponent fit.
pub const DECAY_FIT_MAX: f64 = 1.0 / 3.0;

/// Which balls to sample and how finely to refine them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_centers: usize,
    pub radii: Vec<f64>,
    pub depth: usize,
    pub seed: u64,
}

impl SamplePlan {
    /// Radii `seed diameter · ρ_max^j` for `j = 1..=levels` (capped at 1),
    /// with a depth resolving `finest` times the smallest radius.
    pub fn for_ifs(ifs: &IfSystem, n_centers: usize, levels: usize, finest: f64, seed: u64) -> Self {
        let diam = ifs.seed_ball().diameter();
        let rho = ifs.max_ratio();
        let radii: Vec<f64> = (1..=levels as i32).map(|j| (diam * rho.powi(j)).min(1.0)).collect();
        let min_r = radii.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            n_centers,
            depth: depth_for(ifs, min_r * finest / 10.0),
            radii,
            seed,
        }
    }

    fn check(&self, ifs: &IfSystem) -> Result<()> {
        if self.n_centers == 0 {
            return Err(Error::invalid("n_centers must be at least 1"));
        }
        if self.radii.len() < 2 {
            return Err(Error::DegenerateFit(format!(
                "need at least 2 radii, got {}",
                self.radii.len()
            )));
        }
        if let Some(r) = self.radii.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::invalid(format!("radii must lie in (0,1], got {r}")));
        }
        let min_r = self.radii.iter().copied().fold(f64::INFINITY, f64::min);
        let leaf = ifs.seed_ball().diameter() * ifs.max_ratio().powi(self.depth as i32);
        if leaf > min_r / 10.0 * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "depth {} leaves cylinders of diameter {leaf:.3e}, above min radius/10 = {:.3e}",
                self.depth,
                min_r / 10.0
            )));
        }
        Ok(())
    }

    fn centers(&self, ifs: &IfSystem) -> Result<Vec<Point>> {
        ifs.chaos_sample(self.n_centers, self.seed)
    }
}

/// Smallest depth whose cylinders have diameter at most `target`.
pub fn depth_for(ifs: &IfSystem, target: f64) -> usize {
    let diam = ifs.seed_ball().diameter();
    let rho = ifs.max_ratio();
    let mut depth = 0;
    while diam * rho.powi(depth as i32) > target && depth < 200 {
        depth += 1;
    }
    depth
}

/// Least-squares slope and intercept of `ys` against `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} points", xs.len().min(ys.len()))));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub a_pl: f64,
    pub b_pl: f64,
    pub delta_hat: f64,
}

/// Ball masses `(lower, upper)` for every sampled centre and radius, in
/// centre-major order.
fn ball_masses(ifs: &IfSystem, centers: &[Point], radii: &[f64], depth: usize) -> Result<Vec<Vec<(f64, f64)>>> {
    centers
        .par_iter()
        .map(|x| {
            radii
                .iter()
                .map(|&r| ifs.measure_bounds(&Ball { center: *x, radius: r }, depth))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Fits `a r^δ ≤ μ(B(x,r)) ≤ b r^δ` over chaos-sampled centres.
pub fn certify_power_law(ifs: &IfSystem, plan: &SamplePlan) -> Result<PowerLaw> {
    plan.check(ifs)?;
    let centers = plan.centers(ifs)?;
    let masses = ball_masses(ifs, &centers, &plan.radii, plan.depth)?;
    power_law_from(ifs.moran_dimension(), &plan.radii, &masses)
}

fn power_law_from(delta: f64, radii: &[f64], masses: &[Vec<(f64, f64)>]) -> Result<PowerLaw> {
    let (mut a, mut b) = (f64::INFINITY, 0.0f64);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for row in masses {
        for (&r, &(lo, hi)) in radii.iter().zip(row) {
            let scale = r.powf(delta);
            a = a.min(lo / scale);
            b = b.max(hi / scale);
            let mid = 0.5 * (lo + hi);
            if mid > 0.0 {
                xs.push(r.ln());
                ys.push(mid.ln());
            }
        }
    }
    let (delta_hat, _) = least_squares(&xs, &ys)?;
    if !(a > 0.0) {
        return Err(Error::NoUsableSamples("a sampled ball has zero certified mass".into()));
    }
    Ok(PowerLaw {
        a_pl: a,
        b_pl: b,
        delta_hat,
    })
}

/// `min μ(B(x, 5r/6)) / μ(B(x, r))` with lower bounds on top and upper
/// bounds below.
pub fn certify_doubling(ifs: &IfSystem, plan: &SamplePlan) -> Result<f64> {
    plan.check(ifs)?;
    let centers = plan.centers(ifs)?;
    let mut radii = plan.radii.clone();
    radii.extend(plan.radii.iter().map(|r| r * DOUBLING_RATIO));
    let masses = ball_masses(ifs, &centers, &radii, plan.depth)?;
    doubling_from(plan.radii.len(), &masses)
}

fn doubling_from(n_radii: usize, masses: &[Vec<(f64, f64)>]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for row in masses {
        for j in 0..n_radii {
            let outer = row[j].1;
            let inner = row[n_radii + j].0;
            if outer > 0.0 {
                let q = (inner / outer).min(1.0);
                best = Some(best.map_or(q, |b| b.min(q)));
            }
        }
    }
    best.ok_or_else(|| Error::NoUsableSamples("every outer ball had zero mass".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub c_hat: f64,
    pub a_hat: f64,
    /// Number of `(ε/r, q)` pairs behind the envelope.
    pub n_samples: usize,
    pub n_skipped: usize,
}

/// Fits `μ(B ∩ 𝓛^(ε)) ≤ C (ε/r)^a μ(B)` over sampled balls and hyperplanes.
pub fn certify_decay(ifs: &IfSystem, plan: &SamplePlan, n_planes: usize, eps_ratios: &[f64]) -> Result<Decay> {
    plan.check(ifs)?;
    if n_planes == 0 {
        return Err(Error::invalid("n_planes must be at least 1"));
    }
    if eps_ratios.is_empty() || eps_ratios.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::invalid("eps_ratios must be a nonempty subset of (0,1]"));
    }
    let samples = decay_samples(ifs, plan, n_planes, eps_ratios)?;
    decay_from(&samples)
}

/// One ball-slab comparison behind the decay envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySample {
    pub ball: Ball,
    pub plane: Hyperplane,
    pub eps_ratio: f64,
    /// Upper bound on `μ(B ∩ slab) / μ(B)`; `None` when the ball had no
    /// certified mass.
    pub ratio: Option<f64>,
}

/// The samples [`certify_decay`] fits, in a deterministic order.
pub fn decay_samples(ifs: &IfSystem, plan: &SamplePlan, n_planes: usize, eps_ratios: &[f64]) -> Result<Vec<DecaySample>> {
    let centers = plan.centers(ifs)?;
    let n = ifs.dim();
    let rows: Vec<Vec<DecaySample>> = centers
        .par_iter()
        .enumerate()
        .map(|(ci, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9_7f4a_7c15 ^ ci as u64);
            let mut out = Vec::new();
            for &r in &plan.radii {
                let ball = Ball { center: *x, radius: r };
                let (lo, _) = ifs.measure_bounds(&ball, plan.depth)?;
                for k in 0..n_planes {
                    let through = if k == 0 {
                        *x
                    } else {
                        let offset = Point::from_fn(n, |_| rng.random_range(-1.0..1.0)) * (r / (n as f64).sqrt());
                        ifs.nearest_support_point(&(*x + offset), Some(&ball), r * 1e-6, 0.0)
                            .unwrap_or(*x)
                    };
                    let plane = Hyperplane::through(&through, random_unit(&mut rng, n))?;
                    for &e in eps_ratios {
                        let ratio = if lo > 0.0 {
                            let slab = BallSlab { ball, plane, eps: e * r };
                            let (_, hi) = ifs.measure_bounds_in(&slab, plan.depth)?;
                            Some(hi / lo)
                        } else {
                            None
                        };
                        out.push(DecaySample {
                            ball,
                            plane,
                            eps_ratio: e,
                            ratio,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Point {
    loop {
        let v = Point::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-9 {
            return v * (1.0 / norm);
        }
    }
}

fn decay_from(samples: &[DecaySample]) -> Result<Decay> {
    let usable: Vec<(f64, f64)> = samples.iter().filter_map(|s| s.ratio.map(|q| (s.eps_ratio, q))).collect();
    let n_skipped = samples.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::NoUsableSamples("no sampled ball had certified mass".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable
        .iter()
        .filter(|(e, q)| *e <= DECAY_FIT_MAX && *q > 0.0)
        .map(|(e, q)| (e.ln(), q.ln()))
        .unzip();
    let (a_hat, _) = least_squares(&xs, &ys)?;
    if !(a_hat > 0.0) {
        return Err(Error::DegenerateFit(format!("decay exponent {a_hat} is not positive")));
    }
    // Inflate slightly so the envelope is strict at its maximiser.
    let c_hat = usable
        .iter()
        .map(|(e, q)| q * e.powf(-a_hat))
        .fold(0.0, f64::max)
        * (1.0 + 1e-9);
    Ok(Decay {
        c_hat,
        a_hat,
        n_samples: usable.len(),
        n_skipped,
    })
}

/// `(D/C)^{1/a}`.
pub fn alpha_prime(c: f64, a_decay: f64, d: f64) -> Result<f64> {
    if !(c > 0.0 && a_decay > 0.0 && d > 0.0) {
        return Err(Error::invalid(format!(
            "alpha_prime needs positive inputs, got C={c}, a={a_decay}, D={d}"
        )));
    }
    Ok((d / c).powf(1.0 / a_decay))
}

/// Everything a run of [`certify`] measured, plus the inputs needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureCertificate {
    pub a_pl: f64,
    pub b_pl: f64,
    pub delta: f64,
    pub delta_hat: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub a_decay: f64,
    pub r0: f64,
    pub alpha_prime: f64,
    pub plan: SamplePlan,
    pub n_planes: usize,
    pub eps_ratios: Vec<f64>,
    pub decay_samples: usize,
    pub decay_skipped: usize,
}

impl MeasureCertificate {
    /// Checks the field invariants, including that `alpha_prime` is
    /// reproduced exactly from `C`, `a_decay` and `D`.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.a_pl > 0.0 && self.a_pl <= self.b_pl) {
            problems.push("need 0 < a_pl <= b_pl");
        }
        if !(self.d > 0.0 && self.d <= 1.0) {
            problems.push("need 0 < D <= 1");
        }
        if !(self.c > 0.0) {
            problems.push("need C > 0");
        }
        if !(self.a_decay > 0.0) {
            problems.push("need a_decay > 0");
        }
        if !(self.r0 > 0.0 && self.r0 <= 1.0) {
            problems.push("need 0 < r0 <= 1");
        }
        if alpha_prime(self.c, self.a_decay, self.d).ok() != Some(self.alpha_prime) {
            problems.push("alpha_prime does not match (D/C)^(1/a_decay)");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}

/// Default ε/r ladder: 1, 1/2, then powers of 1/3 down to 1/81.
pub fn default_eps_ratios() -> Vec<f64> {
    vec![1.0, 0.5, 1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0, 1.0 / 81.0]
}

/// Runs all three certifications on a shared set of centres.
pub fn certify(ifs: &IfSystem, plan: &SamplePlan, n_planes: usize, eps_ratios: &[f64]) -> Result<MeasureCertificate> {
    plan.check(ifs)?;
    let centers = plan.centers(ifs)?;
    let mut radii = plan.radii.clone();
    radii.extend(plan.radii.iter().map(|r| r * DOUBLING_RATIO));
    let masses = ball_masses(ifs, &centers, &radii, plan.depth)?;
    // Fitting on r and 5r/6 together makes D ≥ (a/b)(5/6)^δ hold exactly.
    let pl = power_law_from(ifs.moran_dimension(), &radii, &masses)?;
    let d = doubling_from(plan.radii.len(), &masses)?;
    let decay = certify_decay(ifs, plan, n_planes, eps_ratios)?;
    let cert = MeasureCertificate {
        a_pl: pl.a_pl,
        b_pl: pl.b_pl,
        delta: ifs.moran_dimension(),
        delta_hat: pl.delta_hat,
        d,
        c: decay.c_hat,
        a_decay: decay.a_hat,
        r0: 1.0,
        alpha_prime: alpha_prime(decay.c_hat, decay.a_hat, d)?,
        plan: plan.clone(),
        n_planes,
        eps_ratios: eps_ratios.to_vec(),
        decay_samples: decay.n_samples,
        decay_skipped: decay.n_skipped,
    };
    log::info!(
        "certificate: a={:.4} b={:.4} D={:.4} C={:.4} a_decay={:.4} alpha'={:.4e}",
        cert.a_pl,
        cert.b_pl,
        cert.d,
        cert.c,
        cert.a_decay,
        cert.alpha_prime
    );
    Ok(cert)
}
