//! Player A's winning strategy against rational targets `Λ(p/q)`.
//!
//! Each target family is handled in stages. At stage `k` the family looks
//! at the current B-ball, collects the targets with `q` in the window
//! `[R^{k−1}, R^k)` that lie inside it (they all sit on one hyperplane by
//! the simplex lemma) and moves to a centre whose A-ball keeps clear of that
//! hyperplane and of the B-ball's boundary. Several families take turns.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diophantine::{rate_exponent, simplex_hyperplane, simplex_radius_bound, window, window_ratio, AffineMap};
use crate::error::{Error, Result};
use crate::game::{GameConfig, GameState, MoveTag, Owner, Player, Proposal, Transcript};
use crate::geometry::{Ball, Hyperplane, Point};
use crate::ifs::IfSystem;
use crate::measure::MeasureCertificate;

/// `[R^{k−1}, R^k)` with `R = (αβ)^{−N/(N+1)}`; `[0, 1)` for `k = 0`.
pub fn stage_windows(alpha: f64, beta: f64, n: usize, k: u32) -> (f64, f64) {
    window(window_ratio(alpha * beta, n), k)
}

/// `(αβ)^{k0+1} β^{k0} r0`.
pub fn guaranteed_delta(alpha: f64, beta: f64, k0: u32, r0: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 && r0 > 0.0) {
        return Err(Error::invalid("guaranteed_delta needs alpha, beta in (0,1) and r0 > 0"));
    }
    Ok((alpha * beta).powi(k0 as i32 + 1) * beta.powi(k0 as i32) * r0)
}

/// The `k0` with `β^{k0+1} r0 < r_I ≤ β^{k0} r0`.
pub fn start_index(beta: f64, r_i: f64, r0: f64) -> Result<u32> {
    if !(r_i > 0.0 && r_i <= r0) {
        return Err(Error::invalid(format!("need 0 < r_I <= r0, got r_I = {r_i}, r0 = {r0}")));
    }
    let mut k0 = ((r_i / r0).ln() / beta.ln()).floor().max(0.0) as u32;
    while k0 > 0 && r_i > beta.powi(k0 as i32) * r0 {
        k0 -= 1;
    }
    while r_i <= beta.powi(k0 as i32 + 1) * r0 {
        k0 += 1;
    }
    Ok(k0)
}

/// Targets `Λ(p/q)` with badness rate `q^{−(N+1)/N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFamily {
    pub lam: AffineMap,
}

impl TargetFamily {
    pub fn new(lam: AffineMap) -> Self {
        Self { lam }
    }

    pub fn dim(&self) -> usize {
        self.lam.dim()
    }

    /// `ρ(t) = t^{−(N+1)/N}`.
    pub fn rate(&self, t: f64) -> f64 {
        t.powf(-rate_exponent(self.dim()))
    }
}

/// Checks the hypotheses under which a single geo_select step is proven
/// to succeed.
fn check_geo_preconditions(cert: &MeasureCertificate, region: &Ball, eps0: f64, alpha: f64) -> Result<()> {
    let a = cert.alpha_prime;
    if !(alpha > 0.0 && alpha < a / 12.0) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, alpha'/12 = {})", a / 12.0)));
    }
    if !(eps0 >= 0.0 && eps0 < a * region.radius / 12.0) {
        return Err(Error::invalid(format!("eps0 = {eps0} must lie in [0, alpha' r/12)")));
    }
    if region.radius > cert.r0 {
        return Err(Error::invalid(format!("radius {} exceeds r0 = {}", region.radius, cert.r0)));
    }
    Ok(())
}

/// Picks `x0` near K with `B(x0, αr) ⊂ B(x, r)`, the A-ball more than `αr`
/// from `𝓛^(ε0)` and more than `αr` from the boundary of `B(x, r)`.
///
/// Keeps `x` when it already works; otherwise scans cylinders of diameter
/// at most `αr/4` meeting `B(x, 5r/6)` and returns the admissible
/// representative farthest from the plane (first in word order on ties).
pub fn geo_select(
    ifs: &IfSystem,
    cert: &MeasureCertificate,
    region: &Ball,
    plane: Option<&Hyperplane>,
    eps0: f64,
    alpha: f64,
) -> Result<Point> {
    check_geo_preconditions(cert, region, eps0, alpha)?;
    let (x, r) = (region.center, region.radius);
    let margin = 2.0 * alpha * r;
    let Some(plane) = plane else {
        return Ok(x);
    };
    if plane.signed_distance(&x).abs() - eps0 > margin {
        return Ok(x);
    }
    let tau = 1e-9 * r + 4.0 * f64::EPSILON * (x.max_abs() + 1.0);
    let reach = r - margin - tau;
    let search = Ball {
        center: x,
        radius: r * 5.0 / 6.0,
    };
    let mut best: Option<(f64, Point)> = None;
    let scanned = ifs.for_each_cylinder_meeting(&search, alpha * r / 4.0, |c| {
        let rep = c.representative();
        if rep.dist(&x) >= reach {
            return;
        }
        let clearance = plane.signed_distance(&rep).abs() - eps0;
        if clearance > margin && best.as_ref().is_none_or(|(b, _)| clearance > *b) {
            best = Some((clearance, rep));
        }
    })?;
    best.map(|(_, p)| p).ok_or_else(|| {
        Error::GeoSelectExhausted(format!(
            "none of {scanned} cylinders near {x:?} (r = {r:.3e}) clears the plane by {margin:.3e}; try a smaller alpha"
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Active,
}

/// Bookkeeping for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyState {
    pub family: usize,
    pub phase: Phase,
    /// Contraction between this family's consecutive B-balls is
    /// `alpha · beta_eff`.
    pub beta_eff: f64,
    pub theta: f64,
    pub window_ratio: f64,
    /// Radius `r_I` of the first B-ball at which the family went active.
    pub r_prime: f64,
    pub k0: u32,
    /// `(αβ)^{k0+1} β^{k0} r0`, with `β = beta_eff`.
    pub delta_guaranteed: f64,
    /// `α r′`, the separation the stages actually enforce.
    pub delta_effective: f64,
    /// Stages completed so far; windows `1..=stage` are cleared.
    pub stage: u32,
}

impl StrategyState {
    fn new(family: usize, alpha: f64, beta_eff: f64, n: usize) -> Self {
        let theta = alpha * beta_eff;
        Self {
            family,
            phase: Phase::Pre,
            beta_eff,
            theta,
            window_ratio: window_ratio(theta, n),
            r_prime: 0.0,
            k0: 0,
            delta_guaranteed: 0.0,
            delta_effective: 0.0,
            stage: 0,
        }
    }

    /// `F(stage)`: every `q` below it has been cleared.
    pub fn cleared_up_to(&self) -> f64 {
        if self.stage == 0 {
            1.0
        } else {
            window(self.window_ratio, self.stage).1
        }
    }

    /// Largest integer strictly below `F(stage)`.
    pub fn q_guaranteed(&self) -> u64 {
        let f = self.cleared_up_to();
        if f.fract() == 0.0 {
            f as u64 - 1
        } else {
            f.floor() as u64
        }
    }
}

/// The winning strategy for a finite list of target families, played
/// round-robin: A-move `t` belongs to family `t mod m`.
pub struct WinningStrategy {
    ifs: Arc<IfSystem>,
    cert: MeasureCertificate,
    alpha: f64,
    families: Vec<TargetFamily>,
    states: Vec<StrategyState>,
}

impl WinningStrategy {
    pub fn new(
        ifs: Arc<IfSystem>,
        cert: MeasureCertificate,
        alpha: f64,
        beta: f64,
        families: Vec<TargetFamily>,
    ) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::invalid("at least one target family is required"));
        }
        if families.len() > 16 {
            return Err(Error::invalid("at most 16 interleaved families are supported"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid("beta must lie in (0,1)"));
        }
        let n = ifs.dim();
        if families.iter().any(|f| f.dim() != n) {
            return Err(Error::invalid("target family dimension differs from the IFS"));
        }
        let m = families.len() as i32;
        let beta_eff = beta * (alpha * beta).powi(m - 1);
        let states = (0..families.len())
            .map(|i| StrategyState::new(i, alpha, beta_eff, n))
            .collect();
        Ok(Self {
            ifs,
            cert,
            alpha,
            families,
            states,
        })
    }

    pub fn states(&self) -> &[StrategyState] {
        &self.states
    }

    pub fn families(&self) -> &[TargetFamily] {
        &self.families
    }

    fn try_activate(&mut self, i: usize, r_cur: f64) -> Result<bool> {
        let n = self.ifs.dim();
        let st = &mut self.states[i];
        let bound = simplex_radius_bound(&self.families[i].lam, st.theta);
        if r_cur > self.cert.r0 || r_cur >= bound {
            return Ok(false);
        }
        let k0 = start_index(st.beta_eff, r_cur, self.cert.r0)?;
        st.phase = Phase::Active;
        st.r_prime = r_cur;
        st.k0 = k0;
        st.delta_guaranteed = guaranteed_delta(self.alpha, st.beta_eff, k0, self.cert.r0)?;
        st.delta_effective = self.alpha * r_cur;
        log::debug!(
            "family {i} active at r = {r_cur:.3e} (N = {n}, k0 = {k0}, delta = {:.3e})",
            st.delta_guaranteed
        );
        Ok(true)
    }
}

impl Player for WinningStrategy {
    fn propose(&mut self, state: &GameState, _config: &GameConfig) -> Result<Proposal> {
        if state.whose_turn() != Owner::A {
            return Err(Error::Strategy("asked to move on B's turn".into()));
        }
        let i = state.a_moves() % self.families.len();
        let ball = state.current().ball();
        if self.states[i].phase == Phase::Pre && !self.try_activate(i, ball.radius)? {
            return Ok(Proposal::plain(ball.center));
        }
        let st = &self.states[i];
        let k = st.stage + 1;
        let expected = st.r_prime * st.theta.powi(k as i32 - 1);
        if ((ball.radius - expected) / expected).abs() > 1e-9 {
            return Err(Error::Strategy(format!(
                "family {i} stage {k}: B-ball radius {:.6e} is off schedule ({expected:.6e})",
                ball.radius
            )));
        }
        let simplex = simplex_hyperplane(&self.families[i].lam, st.theta, k, &ball.center, st.r_prime)?;
        let center = geo_select(&self.ifs, &self.cert, &ball, simplex.plane.as_ref(), 0.0, self.alpha)?;
        self.states[i].stage = k;
        Ok(Proposal {
            center,
            tag: Some(MoveTag { family: i, stage: k }),
        })
    }
}

/// Findings of [`check_separation`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub moves_checked: usize,
    pub targets_checked: usize,
    /// Breaches of `δ_guaranteed · q^{−(N+1)/N}`.
    pub violations: Vec<String>,
    /// Breaches of `δ_effective · q^{−(N+1)/N}`.
    pub effective_violations: Vec<String>,
}

impl SeparationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.effective_violations.is_empty()
    }
}

/// After every tagged A-move at stage `k` of family `i`, every target of
/// that family with `q < F(k)` must keep its distance from the A-ball.
/// Targets are found by a direct scan independent of the strategy's own
/// enumeration.
pub fn check_separation(t: &Transcript, families: &[TargetFamily], states: &[StrategyState]) -> SeparationReport {
    let mut report = SeparationReport::default();
    for m in &t.history {
        let (Some(i), Some(k)) = (m.family, m.stage) else {
            continue;
        };
        let (Some(fam), Some(st)) = (families.get(i), states.get(i)) else {
            report.violations.push(format!("move {}: unknown family {i}", m.index));
            continue;
        };
        report.moves_checked += 1;
        let n = fam.dim();
        let e = rate_exponent(n);
        let f_k = window(st.window_ratio, k).1;
        let q_top = if f_k.fract() == 0.0 { f_k as u64 - 1 } else { f_k.floor() as u64 };
        let delta = st.delta_guaranteed.max(st.delta_effective);
        let centre = fam.lam.pull_back(&m.center);
        let inv_norm = frobenius_inverse_norm(&fam.lam);
        for q in 1..=q_top {
            let qf = q as f64;
            let need_g = st.delta_guaranteed * qf.powf(-e) - 1e-12;
            let need_e = st.delta_effective * qf.powf(-e) - 1e-12;
            let half = qf * (m.radius + delta * qf.powf(-e)) * inv_norm;
            let lo: Vec<i64> = (0..n).map(|d| (qf * centre[d] - half).floor() as i64).collect();
            let hi: Vec<i64> = (0..n).map(|d| (qf * centre[d] + half).ceil() as i64).collect();
            for_each_in_box(&lo, &hi, |p| {
                let gap = fam.lam.image_of(p, q).dist(&m.center) - m.radius;
                report.targets_checked += 1;
                if gap <= need_g {
                    report.violations.push(format!(
                        "move {} (family {i}, stage {k}): target {p:?}/{q} at {gap:.3e} from the A-ball, needs {need_g:.3e}",
                        m.index
                    ));
                }
                if gap <= need_e {
                    report.effective_violations.push(format!(
                        "move {} (family {i}, stage {k}): target {p:?}/{q} at {gap:.3e}, effective bound {need_e:.3e}",
                        m.index
                    ));
                }
            });
        }
    }
    report
}

fn for_each_in_box(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return;
    }
    let mut p = lo.to_vec();
    loop {
        f(&p);
        let mut d = p.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if p[d] < hi[d] {
                p[d] += 1;
                break;
            }
            p[d] = lo[d];
        }
    }
}

/// Frobenius norm of `A⁻¹`, an upper bound on its operator norm.
fn frobenius_inverse_norm(lam: &AffineMap) -> f64 {
    let inv = lam.matrix().inverse().expect("affine maps are non-singular");
    (0..lam.dim()).map(|i| inv.row_norm(i).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::SamplePlan;

    fn p1(x: f64) -> Point {
        Point::new(&[x]).unwrap()
    }

    fn cert_with(alpha_prime: f64) -> MeasureCertificate {
        MeasureCertificate {
            a_pl: 1.0,
            b_pl: 1.0,
            delta: 0.63,
            delta_hat: 0.63,
            d: 1.0,
            c: 1.0,
            a_decay: 1.0,
            r0: 1.0,
            alpha_prime,
            plan: SamplePlan {
                n_centers: 1,
                radii: vec![1.0, 0.5],
                depth: 1,
                seed: 0,
            },
            n_planes: 1,
            eps_ratios: vec![1.0],
            decay_samples: 0,
            decay_skipped: 0,
        }
    }

    #[test]
    fn windows_examples() {
        assert_eq!(stage_windows(0.5, 0.5, 1, 1), (1.0, 2.0));
        assert_eq!(stage_windows(0.5, 0.5, 1, 2), (2.0, 4.0));
        assert_eq!(stage_windows(0.5, 0.5, 1, 0), (0.0, 1.0));
    }

    #[test]
    fn guaranteed_delta_examples() {
        assert!((guaranteed_delta(0.1, 0.5, 0, 1.0).unwrap() - 0.05).abs() < 1e-15);
        assert!((guaranteed_delta(0.1, 0.5, 1, 1.0).unwrap() - 0.00125).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k0 in 0..10 {
            let d = guaranteed_delta(0.2, 0.7, k0, 1.0).unwrap();
            assert!(d < prev);
            prev = d;
        }
        assert!(guaranteed_delta(1.5, 0.5, 0, 1.0).is_err());
    }

    #[test]
    fn start_index_examples() {
        assert_eq!(start_index(0.5, 0.4, 1.0).unwrap(), 1);
        assert_eq!(start_index(0.5, 0.5, 1.0).unwrap(), 1);
        assert_eq!(start_index(0.5, 0.50001, 1.0).unwrap(), 0);
        assert_eq!(start_index(0.5, 1.0, 1.0).unwrap(), 0);
        assert!(start_index(0.5, 1.5, 1.0).is_err());
    }

    #[test]
    fn geo_select_keeps_centre_far_from_plane() {
        let ifs = IfSystem::preset("cantor3").unwrap();
        let cert = cert_with(0.5);
        let region = Ball::new(p1(0.0), 0.3).unwrap();
        let plane = Hyperplane::through(&p1(0.2), p1(1.0)).unwrap();
        assert_eq!(geo_select(&ifs, &cert, &region, Some(&plane), 0.0, 0.03).unwrap(), p1(0.0));
        assert_eq!(geo_select(&ifs, &cert, &region, None, 0.0, 0.03).unwrap(), p1(0.0));
    }

    #[test]
    fn geo_select_gap_centre_plane() {
        // The plane {1/2} sits in the middle gap; any x in K is at least
        // 1/6 away, more than 2αr for small α r.
        let ifs = IfSystem::preset("cantor3").unwrap();
        let cert = cert_with(0.5);
        let plane = Hyperplane::through(&p1(0.5), p1(1.0)).unwrap();
        for &x in &[0.0, 2.0 / 9.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
            let region = Ball::new(p1(x), 0.5).unwrap();
            assert_eq!(geo_select(&ifs, &cert, &region, Some(&plane), 1e-3, 0.04).unwrap(), p1(x));
        }
    }

    #[test]
    fn geo_select_moves_off_the_plane() {
        let ifs = IfSystem::preset("cantor3").unwrap();
        let cert = cert_with(0.5);
        let alpha = 0.04;
        let region = Ball::new(p1(2.0 / 9.0), 1.0 / 9.0).unwrap();
        let plane = Hyperplane::through(&p1(2.0 / 9.0), p1(1.0)).unwrap();
        let x0 = geo_select(&ifs, &cert, &region, Some(&plane), 0.0, alpha).unwrap();
        let r = region.radius;
        let a_ball = Ball::new(x0, alpha * r).unwrap();
        assert!(crate::geometry::ball_in_ball(&a_ball, &region));
        assert!(plane.signed_distance(&x0).abs() - alpha * r > alpha * r);
        assert!(r - x0.dist(&region.center) - alpha * r > alpha * r);
        assert!(ifs.near_support(&x0, 1e-12));
    }

    #[test]
    fn geo_select_preconditions() {
        let ifs = IfSystem::preset("cantor3").unwrap();
        let cert = cert_with(0.12);
        let region = Ball::new(p1(0.0), 0.3).unwrap();
        assert!(geo_select(&ifs, &cert, &region, None, 0.0, 0.01).is_err());
        assert!(geo_select(&ifs, &cert, &region, None, 0.1, 0.001).is_err());
        let big = Ball::new(p1(0.0), 1.5).unwrap();
        assert!(geo_select(&ifs, &cert, &big, None, 0.0, 0.001).is_err());
    }

    #[test]
    fn geo_select_can_run_dry() {
        // K is the single point 1/2, so nothing clears a plane through it.
        let spec = crate::ifs::IfsSpec {
            dim: 1,
            maps: vec![crate::ifs::MapSpec {
                ratio: 0.5,
                rotation: vec![1.0],
                translation: vec![0.25],
            }],
            open_set: crate::ifs::OpenSet::Declared,
            seed_ball: Some(Ball::new(p1(0.5), 0.5).unwrap()),
            irreducible: false,
        };
        let ifs = IfSystem::from_spec(&spec).unwrap();
        let region = Ball::new(p1(0.5), 0.1).unwrap();
        let plane = Hyperplane::through(&p1(0.5), p1(1.0)).unwrap();
        let err = geo_select(&ifs, &cert_with(0.5), &region, Some(&plane), 0.0, 0.04).unwrap_err();
        assert!(matches!(err, Error::GeoSelectExhausted(_)));
    }

    #[test]
    fn interleaving_needs_a_family() {
        let ifs = Arc::new(IfSystem::preset("cantor3").unwrap());
        assert!(WinningStrategy::new(ifs, cert_with(0.5), 0.01, 0.5, vec![]).is_err());
    }

    #[test]
    fn effective_beta_for_two_families() {
        let ifs = Arc::new(IfSystem::preset("cantor3").unwrap());
        let fams = vec![TargetFamily::new(AffineMap::identity(1)); 2];
        let s = WinningStrategy::new(ifs, cert_with(0.5), 0.02, 0.5, fams).unwrap();
        let st = &s.states()[0];
        assert!((st.theta - (0.02f64 * 0.5).powi(2)).abs() < 1e-18);
    }

    #[test]
    fn q_guaranteed_is_strictly_below_threshold() {
        let mut st = StrategyState::new(0, 0.5, 0.5, 1);
        assert_eq!(st.q_guaranteed(), 0);
        st.stage = 3; // R = 2, F(3) = 8
        assert_eq!(st.q_guaranteed(), 7);
    }
}
