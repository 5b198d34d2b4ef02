//! Euclidean primitives: points, closed balls, affine hyperplanes, small
//! dense matrices, and affine-span fitting.
//!
//! Everything is double precision. Containment uses the absolute slack
//! [`CONTAIN_TOL`]; rank decisions use a threshold relative to the size of
//! the point cloud so that tiny game balls are not mistaken for degenerate
//! ones.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 8;
/// Absolute slack for containment and intersection tests.
pub const CONTAIN_TOL: f64 = 1e-12;
/// Relative singular-value threshold used to decide affine rank.
pub const RANK_TOL: f64 = 1e-9;

/// A point of R^N with N <= [`MAX_DIM`], stored inline so it is `Copy`.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    dim: usize,
    coords: [f64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "point dimension {} outside 1..={MAX_DIM}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point has non-finite coordinates"));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            dim: coords.len(),
            coords: c,
        })
    }

    /// Origin of R^dim. Panics if `dim` is outside `1..=MAX_DIM`.
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Self {
            dim,
            coords: [0.0; MAX_DIM],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut p = Self::origin(dim);
        for i in 0..dim {
            p.coords[i] = f(i);
        }
        p
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        Self::from_fn(dim, |i| if i == axis { 1.0 } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let d = self.coords[i] - other.coords[i];
            s += d * d;
        }
        s.sqrt()
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> f64 {
        self.coords().iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        let dim = self.dim;
        &mut self.coords[..dim][i]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(mut self, rhs: Point) -> Point {
        for i in 0..self.dim {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(mut self, rhs: Point) -> Point {
        for i in 0..self.dim {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(mut self, s: f64) -> Point {
        for i in 0..self.dim {
            self.coords[i] *= s;
        }
        self
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self * -1.0
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.coords())
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// Closed Euclidean ball `{z : d(center, z) <= radius}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains_point(&self, p: &Point, tol: f64) -> bool {
        self.center.dist(p) <= self.radius + tol
    }

    /// Closed-ball intersection test with [`CONTAIN_TOL`] slack.
    pub fn meets(&self, other: &Ball) -> bool {
        self.center.dist(&other.center) <= self.radius + other.radius + CONTAIN_TOL
    }

    /// Distance from `p` to the ball (zero inside).
    pub fn distance_to(&self, p: &Point) -> f64 {
        (self.center.dist(p) - self.radius).max(0.0)
    }
}

/// `inner ⊆ outer` up to the absolute slack [`CONTAIN_TOL`].
pub fn ball_in_ball(inner: &Ball, outer: &Ball) -> bool {
    inner.center.dist(&outer.center) + inner.radius <= outer.radius + CONTAIN_TOL
}

/// Affine hyperplane `{z : <normal, z> = offset}` with a unit normal.
///
/// Its ε-neighbourhood is never materialised; callers carry `(plane, eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hyperplane {
    normal: Point,
    offset: f64,
}

impl Hyperplane {
    /// Builds a plane from any non-zero normal, rescaling `offset` with it.
    pub fn new(normal: Point, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !offset.is_finite() {
            return Err(Error::invalid("hyperplane needs a non-zero normal"));
        }
        Ok(Self {
            normal: normal * (1.0 / n),
            offset: offset / n,
        })
    }

    pub fn through(point: &Point, normal: Point) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) {
            return Err(Error::invalid("hyperplane needs a non-zero normal"));
        }
        let unit = normal * (1.0 / n);
        Ok(Self {
            normal: unit,
            offset: unit.dot(point),
        })
    }

    pub fn normal(&self) -> &Point {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Same plane with `(normal, offset)` negated.
    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }
}

pub fn point_hyperplane_distance(p: &Point, plane: &Hyperplane) -> f64 {
    plane.signed_distance(p).abs()
}

/// Small dense row-major matrix, at most `MAX_DIM` square.
#[derive(Clone, Copy, PartialEq)]
pub struct Matrix {
    dim: usize,
    a: [f64; MAX_DIM * MAX_DIM],
}

impl Matrix {
    pub fn identity(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        let mut m = Self {
            dim,
            a: [0.0; MAX_DIM * MAX_DIM],
        };
        for i in 0..dim {
            m.a[i * MAX_DIM + i] = 1.0;
        }
        m
    }

    /// From `dim * dim` entries in row-major order.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} matrix entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let mut m = Self::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.a[i * MAX_DIM + j] = entries[i * dim + j];
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("matrix must be square"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(dim, &flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * MAX_DIM + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * MAX_DIM + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.rows().into_iter().flatten().collect()
    }

    pub fn mul_vec(&self, p: &Point) -> Point {
        let mut out = Point::origin(self.dim);
        for i in 0..self.dim {
            let mut s = 0.0;
            for j in 0..self.dim {
                s += self.get(i, j) * p[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.dim;
        let mut out = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn scaled(&self, f: f64) -> Matrix {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.set(i, j, self.get(i, j) * f);
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.set(i, j, self.get(j, i));
            }
        }
        out
    }

    /// `max |(MᵀM − I)_ij|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = self.transpose().mul(self);
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    /// True when every entry is 0 or ±1 (a signed permutation, given
    /// orthogonality). Such maps send axis boxes to axis boxes.
    pub fn is_signed_permutation(&self) -> bool {
        (0..self.dim).all(|i| {
            (0..self.dim).all(|j| {
                let v = self.get(i, j).abs();
                v < 1e-12 || (v - 1.0).abs() < 1e-12
            })
        })
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        (0..self.dim).map(|j| self.get(i, j).powi(2)).sum::<f64>().sqrt()
    }

    pub(crate) fn to_nalgebra(self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::identity(m.nrows());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, m[(i, j)]);
            }
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        self.to_nalgebra().determinant()
    }

    pub fn inverse(&self) -> Option<Matrix> {
        self.to_nalgebra()
            .try_inverse()
            .map(|m| Matrix::from_nalgebra(&m))
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

/// Result of [`fit_affine_span`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSpan {
    pub span_dim: usize,
    /// A hyperplane containing the span, present iff `span_dim < N`.
    pub plane: Option<Hyperplane>,
    /// Largest distance from an input point to the best-fit hyperplane.
    pub residual: f64,
}

/// Affine rank of a point cloud via singular values of the centred points.
///
/// Singular values below `RANK_TOL * diameter` count as zero. A floor of a
/// few hundred ulps of the coordinate magnitude is added so that clouds
/// which are exactly flat but carry rounding noise are not promoted to full
/// rank when the cloud itself is tiny.
pub fn fit_affine_span(points: &[Point]) -> Result<AffineSpan> {
    let first = points.first().ok_or(Error::NoPoints)?;
    let n = first.dim();
    if points.iter().any(|p| p.dim() != n) {
        return Err(Error::invalid("points of mixed dimension"));
    }
    let m = points.len() as f64;
    let centroid = points
        .iter()
        .fold(Point::origin(n), |acc, p| acc + *p)
        * (1.0 / m);

    let rows = points.len().max(n);
    let mut centred = DMatrix::<f64>::zeros(rows, n);
    let mut spread = 0.0f64;
    let mut magnitude = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let d = *p - centroid;
        spread = spread.max(d.norm());
        magnitude = magnitude.max(p.max_abs());
        for j in 0..n {
            centred[(i, j)] = d[j];
        }
    }
    let threshold = RANK_TOL * 2.0 * spread + 1e-13 * (1.0 + magnitude);

    let svd = centred.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateFit("singular value decomposition failed".into()))?;
    let sv = svd.singular_values;
    let span_dim = sv.iter().filter(|s| **s > threshold).count();

    let weakest = (0..sv.len())
        .min_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    let normal = Point::from_fn(n, |j| v_t[(weakest, j)]);
    let best_fit = Hyperplane::through(&centroid, normal)?;
    let residual = points
        .iter()
        .map(|p| point_hyperplane_distance(p, &best_fit))
        .fold(0.0, f64::max);

    Ok(AffineSpan {
        span_dim,
        plane: (span_dim < n).then_some(best_fit),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    #[test]
    fn distance_to_diagonal_line() {
        let plane = Hyperplane::new(pt(&[1.0, 1.0]), 1.0).unwrap();
        let d = point_hyperplane_distance(&pt(&[0.0, 0.0]), &plane);
        assert!((d - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(point_hyperplane_distance(&pt(&[0.25, 0.75]), &plane) < 1e-15);
    }

    #[test]
    fn distance_in_one_dimension() {
        let plane = Hyperplane::new(pt(&[1.0]), 1.0).unwrap();
        assert_eq!(point_hyperplane_distance(&pt(&[2.0]), &plane), 1.0);
    }

    #[test]
    fn zero_normal_rejected() {
        assert!(Hyperplane::new(pt(&[0.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn ball_containment_examples() {
        let outer = Ball::new(pt(&[0.0]), 1.0).unwrap();
        assert!(ball_in_ball(&Ball::new(pt(&[0.5]), 0.5).unwrap(), &outer));
        assert!(!ball_in_ball(&Ball::new(pt(&[0.6]), 0.5).unwrap(), &outer));
        assert!(ball_in_ball(&outer, &outer));
    }

    #[test]
    fn nonpositive_radius_rejected() {
        assert!(Ball::new(pt(&[0.0]), 0.0).is_err());
        assert!(Ball::new(pt(&[0.0]), f64::NAN).is_err());
    }

    #[test]
    fn collinear_points_have_span_one() {
        let pts = [pt(&[0.0, 0.0]), pt(&[1.0, 2.0]), pt(&[-0.5, -1.0])];
        let span = fit_affine_span(&pts).unwrap();
        assert_eq!(span.span_dim, 1);
        assert!(span.residual < 1e-12);
        assert!(span.plane.is_some());
    }

    #[test]
    fn single_point_span_zero() {
        let p = pt(&[0.3, -0.2]);
        let span = fit_affine_span(&[p]).unwrap();
        assert_eq!(span.span_dim, 0);
        let plane = span.plane.unwrap();
        assert!(point_hyperplane_distance(&p, &plane) < 1e-15);
    }

    #[test]
    fn triangle_spans_plane() {
        // Rank oracle: the centred 3x2 matrix has two non-zero singular
        // values because the edge vectors (1,0) and (0,1) are independent.
        let pts = [pt(&[0.0, 0.0]), pt(&[1.0, 0.0]), pt(&[0.0, 1.0])];
        let span = fit_affine_span(&pts).unwrap();
        assert_eq!(span.span_dim, 2);
        assert!(span.plane.is_none());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(fit_affine_span(&[]), Err(Error::NoPoints));
    }

    #[test]
    fn tiny_flat_cloud_far_from_origin() {
        // Exactly collinear in exact arithmetic, but only ~1e-11 wide and
        // sitting at coordinates of order 1.
        let base = pt(&[0.7, -0.4, 0.1]);
        let dir = pt(&[1.0, 2.0, -1.0]);
        let other = pt(&[0.5, 0.0, 0.5]);
        let pts: Vec<Point> = (0..5)
            .map(|i| base + dir * (1e-11 * i as f64) + other * (1e-11 * ((i * i) % 3) as f64))
            .collect();
        let span = fit_affine_span(&pts).unwrap();
        assert_eq!(span.span_dim, 2);
        assert!(span.residual < 1e-20 + 1e-13);
    }

    #[test]
    fn ball_in_ball_implies_sampled_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let dim = rng.random_range(1..=3);
            let outer = Ball::new(Point::from_fn(dim, |_| rng.random_range(-1.0..1.0)), rng.random_range(0.1..2.0)).unwrap();
            let inner = Ball::new(
                Point::from_fn(dim, |_| rng.random_range(-1.0..1.0)),
                rng.random_range(0.01..1.0),
            )
            .unwrap();
            if !ball_in_ball(&inner, &outer) {
                continue;
            }
            for _ in 0..1000 {
                let dir = Point::from_fn(dim, |_| rng.random_range(-1.0..1.0));
                let len = dir.norm();
                if len == 0.0 {
                    continue;
                }
                let z = inner.center + dir * (inner.radius * rng.random_range(0.0..=1.0) / len);
                assert!(outer.contains_point(&z, 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn distance_invariant_under_negation(
            n in prop::collection::vec(-1.0f64..1.0, 3),
            off in -2.0f64..2.0,
            p in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            prop_assume!(n.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let plane = Hyperplane::new(pt(&n), off).unwrap();
            let q = pt(&p);
            let a = point_hyperplane_distance(&q, &plane);
            let b = point_hyperplane_distance(&q, &plane.flipped());
            prop_assert!((a - b).abs() < 1e-14);
        }

        #[test]
        fn flat_clouds_fit_tightly(
            seed in 0u64..10_000,
            count in 2usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = Point::from_fn(3, |_| rng.random_range(-1.0..1.0));
            let u = Point::from_fn(3, |_| rng.random_range(-1.0..1.0));
            let v = Point::from_fn(3, |_| rng.random_range(-1.0..1.0));
            let pts: Vec<Point> = (0..count)
                .map(|_| base + u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0))
                .collect();
            let span = fit_affine_span(&pts).unwrap();
            prop_assert!(span.span_dim <= 2);
            let diameter = pts.iter().flat_map(|a| pts.iter().map(move |b| a.dist(b))).fold(0.0, f64::max);
            prop_assert!(span.residual <= 1e-9 * diameter + 1e-13);
        }
    }
}
