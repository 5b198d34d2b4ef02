//! Ball packings and the dimension bounds they give.
//!
//! If every ball `B(x, r)` centred on the winning set holds at least `n(β)`
//! interior-disjoint balls of radius `βr`, the winning set has Hausdorff
//! dimension at least `ln n(β) / |ln αβ|`.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Point};
use crate::ifs::IfSystem;
use crate::measure::least_squares;

/// Greedy lower bound on the number of interior-disjoint balls of radius
/// `βr` centred on K and contained in `B(x, r)`.
pub fn pack_count(ifs: &IfSystem, x: &Point, r: f64, beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0,1), got {beta}")));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let small = beta * r;
    let tau = 1e-9 * small;
    let reach = (1.0 - beta) * r;
    let region = Ball {
        center: *x,
        radius: reach,
    };
    let max_diam = (small / 2.0).min(reach.max(small * 1e-3));
    let mut reps = Vec::new();
    ifs.for_each_cylinder_meeting(&region, max_diam, |c| {
        let rep = c.representative();
        if rep.dist(x) <= reach + tau {
            reps.push(rep);
        }
    })?;
    Ok(greedy_pack(&reps, 2.0 * small - tau))
}

/// Greedily keeps points at least `sep` from every point kept before.
fn greedy_pack(points: &[Point], sep: f64) -> usize {
    let Some(first) = points.first() else {
        return 0;
    };
    let n = first.dim();
    let cell = |p: &Point| -> Vec<i64> { (0..n).map(|i| (p[i] / sep).floor() as i64).collect() };
    let mut grid: HashMap<Vec<i64>, Vec<Point>> = HashMap::new();
    let mut kept = 0;
    for p in points {
        let home = cell(p);
        let mut clash = false;
        let mut offset = vec![-1i64; n];
        'scan: loop {
            let key: Vec<i64> = home.iter().zip(&offset).map(|(h, o)| h + o).collect();
            if let Some(bucket) = grid.get(&key) {
                if bucket.iter().any(|q| q.dist(p) < sep) {
                    clash = true;
                    break 'scan;
                }
            }
            let mut d = n;
            loop {
                if d == 0 {
                    break 'scan;
                }
                d -= 1;
                if offset[d] < 1 {
                    offset[d] += 1;
                    break;
                }
                offset[d] = -1;
            }
        }
        if !clash {
            grid.entry(home).or_default().push(*p);
            kept += 1;
        }
    }
    kept
}

/// `a b⁻¹ 3⁻¹ 2⁻ᴺ`.
pub fn packing_constant_m(a_pl: f64, b_pl: f64, n: usize) -> Result<f64> {
    if !(a_pl > 0.0 && b_pl > 0.0) {
        return Err(Error::invalid("power-law constants must be positive"));
    }
    Ok(a_pl / b_pl / 3.0 / 2f64.powi(n as i32))
}

/// `ln n / |ln αβ|`; needs `n ≥ 2`.
pub fn dim_lower_bound(n_beta: usize, alpha: f64, beta: f64) -> Result<f64> {
    if n_beta < 2 {
        return Err(Error::invalid(format!("bound is vacuous for n_beta = {n_beta} < 2")));
    }
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("alpha and beta must lie in (0,1)"));
    }
    Ok((n_beta as f64).ln() / (alpha * beta).ln().abs())
}

/// `δ |ln β| / (|ln α| + |ln β|)`, the value the bound approaches when
/// `n(β) ≈ β^{−δ}`.
pub fn limit_bound(delta: f64, alpha: f64, beta: f64) -> f64 {
    delta * beta.ln().abs() / (alpha.ln().abs() + beta.ln().abs())
}

/// `δ |ln C₀β| / (|ln α| + |ln β|)` with `C₀ = (2/M)^{1/δ}`.
pub fn limit_bound_with_c0(delta: f64, alpha: f64, beta: f64, m: f64) -> f64 {
    let c0 = (2.0 / m).powf(1.0 / delta);
    delta * (c0 * beta).ln().abs() / (alpha.ln().abs() + beta.ln().abs())
}

/// Slope of `ln #(occupied grid boxes)` against `ln(1/s)`.
pub fn box_dimension(points: &[Point], scales: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    if scales.len() < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 scales, got {}", scales.len())));
    }
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("scales must be positive"));
    }
    let n = points[0].dim();
    let (xs, ys): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .map(|&s| {
            let boxes: HashSet<Vec<i64>> = points
                .iter()
                .map(|p| (0..n).map(|i| (p[i] / s).floor() as i64).collect())
                .collect();
            ((1.0 / s).ln(), (boxes.len() as f64).ln())
        })
        .unzip();
    Ok(least_squares(&xs, &ys)?.0)
}

/// Grid scales `diam · ρ_max^j`, `j ≥ 1`, stopping once the expected number of
/// occupied boxes, `ρ_max^{−jδ}`, exceeds `n_points / 20`.
pub fn box_scales(ifs: &IfSystem, n_points: usize) -> Vec<f64> {
    let diam = 2.0 * ifs.seed_ball().radius;
    let rho = ifs.max_ratio();
    let delta = ifs.moran_dimension();
    (1..64)
        .map(|j| (j, diam * rho.powi(j)))
        .take_while(|(j, _)| rho.powf(-(*j as f64) * delta) <= n_points as f64 / 20.0)
        .map(|(_, s)| s)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSample {
    pub x: Point,
    pub r: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingReport {
    pub beta: f64,
    pub samples: Vec<PackingSample>,
    pub n_beta: usize,
    /// `M β^{−δ}`, the count the power law promises.
    pub m_expected: f64,
    /// `ln n_beta / |ln αβ|`, absent when `n_beta < 2`.
    pub bound: Option<f64>,
}

/// Packs every `B(x, r)` for the given centres and reports the minimum.
pub fn packing_report(
    ifs: &IfSystem,
    centers: &[Point],
    r: f64,
    alpha: f64,
    beta: f64,
    m: f64,
) -> Result<PackingReport> {
    if centers.is_empty() {
        return Err(Error::NoPoints);
    }
    let samples = centers
        .par_iter()
        .map(|x| {
            Ok(PackingSample {
                x: *x,
                r,
                count: pack_count(ifs, x, r, beta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_beta = samples.iter().map(|s| s.count).min().expect("nonempty");
    Ok(PackingReport {
        beta,
        n_beta,
        m_expected: m * beta.powf(-ifs.moran_dimension()),
        bound: dim_lower_bound(n_beta, alpha, beta).ok(),
        samples,
    })
}

/// The constant `w` with: a ball meeting three interior-disjoint balls of
/// radius `r` in the plane has radius at least `w r`.
pub fn three_ball_constant() -> f64 {
    2.0 / 3f64.sqrt() - 1.0
}

/// Smallest radius of a ball meeting three unit discs centred at `c`.
fn meeting_radius(c: &[[f64; 2]; 3]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let (a, b, e) = (d(c[1], c[2]), d(c[0], c[2]), d(c[0], c[1]));
    let mut sides = [a, b, e];
    sides.sort_by(f64::total_cmp);
    let [s0, s1, s2] = sides;
    // Smallest enclosing circle: half the longest side for non-acute
    // triangles, the circumradius otherwise.
    let enclosing = if s2 * s2 >= s0 * s0 + s1 * s1 {
        s2 / 2.0
    } else {
        let area2 = ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1])).abs();
        a * b * e / (2.0 * area2)
    };
    enclosing - 1.0
}

/// Samples `trials` triples of interior-disjoint unit discs and returns the
/// smallest ball radius meeting all three that was seen, together with
/// the number of triples that beat `w`.
pub fn three_ball_search(w: f64, trials: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut smallest = f64::INFINITY;
    let mut beaten = 0;
    let mut done = 0;
    while done < trials {
        let mut c = [[0.0f64; 2]; 3];
        for p in c.iter_mut() {
            *p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        }
        let ok = (0..3).all(|i| {
            let j = (i + 1) % 3;
            ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt() >= 2.0
        });
        if !ok {
            continue;
        }
        done += 1;
        let m = meeting_radius(&c);
        smallest = smallest.min(m);
        if m < w - 1e-12 {
            beaten += 1;
        }
    }
    (smallest, beaten)
}
