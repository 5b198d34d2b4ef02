//! Rational targets `Λ(p/q)`, the simplex lemma, and badness witnesses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_affine_span, Ball, Hyperplane, Matrix, Point};

/// Largest denominator any enumeration will touch.
pub const Q_CAP: f64 = 1e7;
/// Largest number of `(p, q)` pairs an enumeration may scan.
pub const SCAN_CAP: f64 = 2e8;
/// Longest continued fraction expansion on offer.
pub const MAX_CF_TERMS: usize = 40;

/// `x ↦ A x + shift` with `A` non-singular.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix: Matrix,
    shift: Point,
    det_abs: f64,
    inverse: Matrix,
}

#[derive(Serialize, Deserialize)]
struct AffineMapRepr {
    matrix: Vec<Vec<f64>>,
    shift: Vec<f64>,
}

impl Serialize for AffineMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AffineMapRepr {
            matrix: self.matrix.rows(),
            shift: self.shift.coords().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AffineMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = AffineMapRepr::deserialize(d)?;
        let build = || AffineMap::new(Matrix::from_rows(&repr.matrix)?, Point::new(&repr.shift)?);
        build().map_err(serde::de::Error::custom)
    }
}

impl AffineMap {
    pub fn new(matrix: Matrix, shift: Point) -> Result<Self> {
        if matrix.dim() != shift.dim() {
            return Err(Error::invalid("affine map matrix and shift dimensions differ"));
        }
        let det_abs = matrix.determinant().abs();
        if !(det_abs > 1e-12) {
            return Err(Error::invalid(format!("affine map is singular (|det| = {det_abs:e})")));
        }
        let inverse = matrix
            .inverse()
            .ok_or_else(|| Error::invalid("affine map is singular"))?;
        Ok(Self {
            matrix,
            shift,
            det_abs,
            inverse,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(Matrix::identity(dim), Point::origin(dim)).expect("identity is non-singular")
    }

    pub fn dim(&self) -> usize {
        self.shift.dim()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn shift(&self) -> &Point {
        &self.shift
    }

    pub fn det_abs(&self) -> f64 {
        self.det_abs
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.matrix.mul_vec(p) + self.shift
    }

    /// `Λ⁻¹(y)`.
    pub fn pull_back(&self, y: &Point) -> Point {
        self.inverse.mul_vec(&(*y - self.shift))
    }

    /// `Λ(p/q)`, forming `A p` on integers before dividing.
    pub fn image_of(&self, p: &[i64], q: u64) -> Point {
        let v = Point::from_fn(self.dim(), |i| p[i] as f64);
        self.matrix.mul_vec(&v) * (1.0 / q as f64) + self.shift
    }

    /// Smallest singular value of `A`.
    fn min_stretch(&self) -> f64 {
        let svd = self.matrix.to_nalgebra().svd(false, false);
        svd.singular_values.min()
    }
}

/// `Λ(p/q)` together with its integer data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTarget {
    pub p: Vec<i64>,
    pub q: u64,
    pub image: Point,
}

/// The smallest value of `q^{(N+1)/N} · d(x, Λ(p/q))` seen up to `q_max_checked`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadnessWitness {
    pub delta_hat: f64,
    pub argmin: RationalTarget,
    pub q_max_checked: u64,
}

/// `(N+1)/N`.
pub fn rate_exponent(n: usize) -> f64 {
    (n as f64 + 1.0) / n as f64
}

/// `q^{−(N+1)/N}`.
pub fn rate(q: f64, n: usize) -> f64 {
    q.powf(-rate_exponent(n))
}

fn membership_tol(region: &Ball) -> f64 {
    1e-12 * region.radius + 8.0 * f64::EPSILON * (region.center.max_abs() + 1.0)
}

/// All `Λ(p/q)` in `region` with `⌈q_lo⌉ ≤ q < q_hi`, ordered by `q` and
/// then lexicographically by `p`. Fractions are not reduced.
pub fn rational_targets_in_window(
    lam: &AffineMap,
    q_lo: f64,
    q_hi: f64,
    region: &Ball,
) -> Result<Vec<RationalTarget>> {
    if !(q_lo >= 0.0 && q_lo < q_hi) {
        return Err(Error::invalid(format!("need 0 <= q_lo < q_hi, got [{q_lo}, {q_hi})")));
    }
    if region.dim() != lam.dim() {
        return Err(Error::invalid("region and affine map dimensions differ"));
    }
    if q_hi > Q_CAP {
        return Err(Error::EnumerationCap {
            what: "denominator window".into(),
            estimate: q_hi,
            cap: Q_CAP,
        });
    }
    let first = q_lo.ceil().max(1.0) as u64;
    // Largest integer strictly below q_hi.
    let last = if q_hi.fract() == 0.0 { q_hi as u64 - 1 } else { q_hi.floor() as u64 };
    if first > last {
        return Ok(Vec::new());
    }
    let n = lam.dim();
    let centre = lam.pull_back(&region.center);
    let tol = membership_tol(region);
    let half: Vec<f64> = (0..n).map(|i| (region.radius + tol) * lam.inverse.row_norm(i)).collect();

    let estimate: f64 = (first..=last)
        .step_by(((last - first) / 1000 + 1) as usize)
        .map(|q| {
            let per_q: f64 = half.iter().map(|h| 2.0 * q as f64 * h + 1.0).product();
            per_q * ((last - first) / 1000 + 1) as f64
        })
        .sum();
    if estimate > SCAN_CAP {
        return Err(Error::EnumerationCap {
            what: "lattice points in the preimage box".into(),
            estimate,
            cap: SCAN_CAP,
        });
    }

    let scan = |q: u64| -> Vec<RationalTarget> {
        let qf = q as f64;
        let lo: Vec<i64> = (0..n).map(|i| (qf * (centre[i] - half[i])).ceil() as i64).collect();
        let hi: Vec<i64> = (0..n).map(|i| (qf * (centre[i] + half[i])).floor() as i64).collect();
        if (0..n).any(|i| lo[i] > hi[i]) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut p = lo.clone();
        loop {
            let image = lam.image_of(&p, q);
            if image.dist(&region.center) <= region.radius + tol {
                out.push(RationalTarget { p: p.clone(), q, image });
            }
            // Odometer over the box, last coordinate fastest.
            let mut i = n;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if p[i] < hi[i] {
                    p[i] += 1;
                    break;
                }
                p[i] = lo[i];
            }
        }
    };
    let found: Vec<Vec<RationalTarget>> = if last - first > 64 {
        (first..=last).into_par_iter().map(scan).collect()
    } else {
        (first..=last).map(scan).collect()
    };
    Ok(found.into_iter().flatten().collect())
}

/// `V_N`, the volume of the unit ball in `R^N`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Window ratio `R = θ^{−N/(N+1)}`.
pub fn window_ratio(theta: f64, n: usize) -> f64 {
    theta.powf(-(n as f64) / (n as f64 + 1.0))
}

/// `[R^{k−1}, R^k)`, with `[0, 1)` for `k = 0`.
pub fn window(ratio: f64, k: u32) -> (f64, f64) {
    if k == 0 {
        (0.0, 1.0)
    } else {
        (ratio.powi(k as i32 - 1), ratio.powi(k as i32))
    }
}

/// The window `k ≥ 1` holding the integer `q ≥ 1`.
pub fn window_index(ratio: f64, q: u64) -> u32 {
    let qf = q as f64;
    let mut k = (qf.ln() / ratio.ln()).floor().max(0.0) as u32 + 1;
    while k > 1 && window(ratio, k).0 > qf {
        k -= 1;
    }
    while window(ratio, k).1 <= qf {
        k += 1;
    }
    k
}

/// Largest radius `r` with `r^N < |det A| θ^N / (N! V_N)`, as the right side
/// `(lhs bound)` raised to `1/N`.
pub fn simplex_radius_bound(lam: &AffineMap, theta: f64) -> f64 {
    let n = lam.dim();
    (lam.det_abs * theta.powi(n as i32) / (factorial(n) * unit_ball_volume(n))).powf(1.0 / n as f64)
}

/// Output of [`simplex_hyperplane`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    /// A hyperplane through every target; absent when there are none.
    pub plane: Option<Hyperplane>,
    pub targets: Vec<RationalTarget>,
    pub span_dim: usize,
    pub residual: f64,
}

/// Finds a hyperplane through every `Λ(p/q)` with `q` in window `k` that lies
/// in `B(x, θ^{k−1} r)`, asserting that one exists.
pub fn simplex_hyperplane(lam: &AffineMap, theta: f64, k: u32, x: &Point, r: f64) -> Result<SimplexOutcome> {
    let n = lam.dim();
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0,1), got {theta}")));
    }
    if k == 0 {
        return Err(Error::invalid("simplex windows start at k = 1"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let lhs = r.powi(n as i32);
    let rhs = lam.det_abs * theta.powi(n as i32) / (factorial(n) * unit_ball_volume(n));
    if !(lhs < rhs) {
        return Err(Error::RadiusTooLarge { lhs, rhs });
    }
    let (q_lo, q_hi) = window(window_ratio(theta, n), k);
    let region = Ball::new(*x, theta.powi(k as i32 - 1) * r)?;
    let targets = rational_targets_in_window(lam, q_lo, q_hi, &region)?;
    if targets.is_empty() {
        return Ok(SimplexOutcome {
            plane: None,
            targets,
            span_dim: 0,
            residual: 0.0,
        });
    }
    let images: Vec<Point> = targets.iter().map(|t| t.image).collect();
    let span = fit_affine_span(&images)?;
    // Images of unreduced fractions agree only to rounding, so very small
    // balls need an absolute floor next to the relative one.
    let residual_tol = 1e-9 * r + 16.0 * f64::EPSILON * (x.max_abs() + 1.0);
    if span.span_dim >= n || span.residual >= residual_tol {
        return Err(Error::SimplexViolated(format!(
            "{} targets in window {k} span dimension {} with residual {:.3e}",
            targets.len(),
            span.span_dim,
            span.residual
        )));
    }
    Ok(SimplexOutcome {
        plane: span.plane,
        targets,
        span_dim: span.span_dim,
        residual: span.residual,
    })
}

/// `min_{1≤q≤Q} q^{(N+1)/N} · |x − round(qx)/q|` for the standard embedding.
pub fn badness_witness(x: &Point, q_max: u64) -> Result<BadnessWitness> {
    badness_witness_between(x, 1, q_max)
}

/// [`badness_witness`] restricted to `q_min ≤ q ≤ q_max`.
pub fn badness_witness_between(x: &Point, q_min: u64, q_max: u64) -> Result<BadnessWitness> {
    if q_min < 1 || q_max < q_min {
        return Err(Error::invalid(format!("need 1 <= q_min <= q_max, got {q_min}..{q_max}")));
    }
    let n = x.dim();
    let root = 1.0 / n as f64;
    let mut best: Option<(f64, u64, Vec<i64>)> = None;
    for q in q_min..=q_max {
        let qf = q as f64;
        let p: Vec<i64> = (0..n).map(|i| (qf * x[i]).round() as i64).collect();
        // q^{(N+1)/N} · |x − p/q| = q^{1/N} · |qx − p|
        let gap = (0..n)
            .map(|i| {
                let d = qf * x[i] - p[i] as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let value = qf.powf(root) * gap;
        if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
            best = Some((value, q, p));
        }
    }
    let (delta_hat, q, p) = best.expect("range is nonempty");
    let image = Point::from_fn(n, |i| p[i] as f64 / q as f64);
    Ok(BadnessWitness {
        delta_hat,
        argmin: RationalTarget { p, q, image },
        q_max_checked: q_max,
    })
}

/// `min_{1≤q≤Q} q^{(N+1)/N} · min_p d(x, Λ(p/q))` measured in the image
/// space of `lam`. For the identity this is [`badness_witness`].
pub fn mapped_badness_witness(lam: &AffineMap, x: &Point, q_max: u64) -> Result<BadnessWitness> {
    if q_max < 1 {
        return Err(Error::invalid("q_max must be at least 1"));
    }
    if x.dim() != lam.dim() {
        return Err(Error::invalid("point and affine map dimensions differ"));
    }
    let n = x.dim();
    let e = rate_exponent(n);
    let y = lam.pull_back(x);
    let stretch = lam.min_stretch();
    let mut best: Option<(f64, RationalTarget)> = None;
    for q in 1..=q_max {
        let qf = q as f64;
        let rounded: Vec<i64> = (0..n).map(|i| (qf * y[i]).round() as i64).collect();
        let mut d_best = lam.image_of(&rounded, q).dist(x);
        let mut p_best = rounded.clone();
        // Any better p satisfies σ_min |p/q − y| < d_best.
        let reach = qf * d_best / stretch;
        if reach >= 0.5 {
            let lo: Vec<i64> = (0..n).map(|i| (qf * y[i] - reach).ceil() as i64).collect();
            let hi: Vec<i64> = (0..n).map(|i| (qf * y[i] + reach).floor() as i64).collect();
            let mut p = lo.clone();
            'odometer: loop {
                let d = lam.image_of(&p, q).dist(x);
                if d < d_best {
                    d_best = d;
                    p_best = p.clone();
                }
                let mut i = n;
                loop {
                    if i == 0 {
                        break 'odometer;
                    }
                    i -= 1;
                    if p[i] < hi[i] {
                        p[i] += 1;
                        break;
                    }
                    p[i] = lo[i];
                }
            }
        }
        let value = qf.powf(e) * d_best;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            let image = lam.image_of(&p_best, q);
            best = Some((value, RationalTarget { p: p_best, q, image }));
        }
    }
    let (delta_hat, argmin) = best.expect("q range is nonempty");
    Ok(BadnessWitness {
        delta_hat,
        argmin,
        q_max_checked: q_max,
    })
}

/// Partial quotients of a number in (0, 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuedFraction {
    pub quotients: Vec<u64>,
    /// How many leading quotients the double can vouch for.
    pub trusted: usize,
    /// The expansion ended because the remainder vanished (or fell below
    /// 1e-15), not because `n_terms` ran out.
    pub terminating: bool,
}

impl ContinuedFraction {
    pub fn trusted_quotients(&self) -> &[u64] {
        &self.quotients[..self.trusted]
    }

    pub fn max_trusted_quotient(&self) -> Option<u64> {
        self.trusted_quotients().iter().copied().max()
    }
}

/// Gauss-map expansion of `x`, carried out exactly on the binary fraction
/// the double represents. A quotient is trusted while its convergent
/// denominator satisfies `q_k < 2^24`: past `q_k² ≈ 2^53` a rounding error of
/// a few ulps in `x` can already change the next quotient.
pub fn continued_fraction(x: f64, n_terms: usize) -> Result<ContinuedFraction> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::invalid(format!("continued_fraction needs x in (0,1), got {x}")));
    }
    if n_terms > MAX_CF_TERMS {
        return Err(Error::invalid(format!("at most {MAX_CF_TERMS} terms, got {n_terms}")));
    }
    if x < 1e-15 {
        return Ok(ContinuedFraction {
            quotients: Vec::new(),
            trusted: 0,
            terminating: true,
        });
    }
    // x = mantissa / 2^shift exactly; x ≥ 1e-15 keeps shift ≤ 103.
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    let shift = (1075 - exp) as u32;
    let (mut num, mut den) = (mantissa as u128, 1u128 << shift);
    let g = gcd(num, den);
    num /= g;
    den /= g;

    let mut quotients = Vec::new();
    let mut trusted = 0usize;
    let (mut q_prev, mut q_cur) = (0u128, 1u128);
    let mut terminating = false;
    let trust_limit = 1u128 << 24;
    while quotients.len() < n_terms {
        let a = den / num;
        let rem = den % num;
        quotients.push(a as u64);
        let q_next = a.saturating_mul(q_cur).saturating_add(q_prev);
        q_prev = q_cur;
        q_cur = q_next;
        if q_cur < trust_limit && trusted + 1 == quotients.len() {
            trusted += 1;
        }
        if rem == 0 || (rem as f64) / (num as f64) < 1e-15 {
            terminating = true;
            break;
        }
        den = num;
        num = rem;
    }
    Ok(ContinuedFraction {
        quotients,
        trusted,
        terminating,
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
