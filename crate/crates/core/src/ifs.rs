//! Iterated function systems of contracting similarities.
//!
//! An [`IfSystem`] owns its maps, a seed ball that every map sends into
//! itself, and the similarity dimension δ. Cylinders are the images of the
//! seed ball under finite compositions `φ_{w1} ∘ … ∘ φ_{wk}`; each carries
//! the natural-measure weight `Π ρ_{wi}^δ`, normalised so that μ(K) = 1.
//!
//! All refinement is depth-first with children visited in index order, so
//! every enumeration comes out in lexicographic word order.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ball_in_ball, Ball, Hyperplane, Matrix, Point, CONTAIN_TOL, MAX_DIM};

/// Maximum number of cylinders an enumeration may return.
pub const ENUMERATION_CAP: usize = 10_000_000;
/// Burn-in steps discarded by [`IfSystem::chaos_sample`].
pub const CHAOS_BURN_IN: usize = 64;
const MAX_WORD_LEN: usize = 256;

/// `x ↦ ratio · rotation · x + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    ratio: f64,
    rotation: Matrix,
    translation: Point,
    linear: Matrix,
}

impl Similarity {
    pub fn new(ratio: f64, rotation: Matrix, translation: Point) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!("ratio must be in (0,1), got {ratio}")));
        }
        if rotation.dim() != translation.dim() {
            return Err(Error::invalid("rotation and translation dimensions differ"));
        }
        if rotation.orthogonality_defect() > 1e-10 {
            return Err(Error::invalid("rotation matrix is not orthogonal"));
        }
        Ok(Self {
            ratio,
            rotation,
            translation,
            linear: rotation.scaled(ratio),
        })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn translation(&self) -> &Point {
        &self.translation
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.linear.mul_vec(p) + self.translation
    }

    /// The unique fixed point, solving `(I − ρΘ) x = y`.
    pub fn fixed_point(&self) -> Point {
        let n = self.translation.dim();
        let a = Matrix::identity(n).to_nalgebra() - self.linear.to_nalgebra();
        let b = nalgebra::DVector::from_column_slice(self.translation.coords());
        // I − ρΘ is invertible because ρ < 1 and Θ is orthogonal.
        let x = a.lu().solve(&b).expect("contraction has a fixed point");
        Point::from_fn(n, |i| x[i])
    }
}

/// Composite similarity `φ_{w1} ∘ … ∘ φ_{wk}` kept as a linear part, a
/// translation and its contraction factor.
#[derive(Clone, Copy)]
pub(crate) struct Affine {
    lin: Matrix,
    trans: Point,
    scale: f64,
}

impl Affine {
    fn identity(dim: usize) -> Self {
        Self {
            lin: Matrix::identity(dim),
            trans: Point::origin(dim),
            scale: 1.0,
        }
    }

    #[inline]
    fn apply(&self, p: &Point) -> Point {
        self.lin.mul_vec(p) + self.trans
    }

    /// `self ∘ s`.
    fn then(&self, s: &Similarity) -> Self {
        Self {
            lin: self.lin.mul(&s.linear),
            trans: self.lin.mul_vec(&s.translation) + self.trans,
            scale: self.scale * s.ratio,
        }
    }
}

/// The open set of the open set condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpenSet {
    /// Interior of a ball.
    Ball { center: Point, radius: f64 },
    /// Interior of an axis-aligned box.
    Box { lo: Point, hi: Point },
    /// Declared by the user and trusted without a check.
    Declared,
}

/// A finite word over the map indices, stored zero-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct CylinderWord(pub Vec<u16>);

impl CylinderWord {
    /// From one-based indices, as they are usually written.
    pub fn from_one_based(indices: &[u16]) -> Self {
        Self(indices.iter().map(|i| i - 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CylinderWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, ")")
    }
}

/// A cylinder as seen during a walk.
pub struct Cylinder<'a> {
    pub word: &'a [u16],
    pub ball: Ball,
    pub weight: f64,
    map: &'a Affine,
    anchor: &'a Point,
}

impl Cylinder<'_> {
    /// A point of K inside this cylinder: the image of the fixed point of
    /// the first map.
    pub fn representative(&self) -> Point {
        self.map.apply(self.anchor)
    }
}

/// What a walk does after visiting a cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    Descend,
    Skip,
    Stop,
}

/// How a region relates to a cylinder ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    Inside,
    Outside,
    Partial,
}

/// A region whose μ-mass can be bracketed by cylinder refinement.
pub trait Region: Sync {
    fn classify(&self, ball: &Ball) -> Overlap;
}

impl Region for Ball {
    fn classify(&self, ball: &Ball) -> Overlap {
        if !self.meets(ball) {
            Overlap::Outside
        } else if ball_in_ball(ball, self) {
            Overlap::Inside
        } else {
            Overlap::Partial
        }
    }
}

/// `B ∩ 𝓛^(ε)`: a ball intersected with a closed slab around a hyperplane.
#[derive(Debug, Clone, Copy)]
pub struct BallSlab {
    pub ball: Ball,
    pub plane: Hyperplane,
    pub eps: f64,
}

impl Region for BallSlab {
    fn classify(&self, cyl: &Ball) -> Overlap {
        let d = self.plane.signed_distance(&cyl.center).abs();
        match self.ball.classify(cyl) {
            Overlap::Outside => Overlap::Outside,
            _ if d > self.eps + cyl.radius + CONTAIN_TOL => Overlap::Outside,
            Overlap::Inside if d + cyl.radius <= self.eps + CONTAIN_TOL => Overlap::Inside,
            _ => Overlap::Partial,
        }
    }
}

/// JSON description of a single map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub ratio: f64,
    /// Row-major `N × N` entries.
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

/// JSON description of an IFS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsSpec {
    pub dim: usize,
    pub maps: Vec<MapSpec>,
    #[serde(default = "declared")]
    pub open_set: OpenSet,
    #[serde(default)]
    pub seed_ball: Option<Ball>,
    #[serde(default)]
    pub irreducible: bool,
}

fn declared() -> OpenSet {
    OpenSet::Declared
}

impl IfsSpec {
    /// Every problem with the description, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(1..=MAX_DIM).contains(&self.dim) {
            out.push(format!("dim must be in 1..={MAX_DIM}, got {}", self.dim));
            return out;
        }
        if self.maps.is_empty() {
            out.push("at least one map is required".into());
        }
        for (i, m) in self.maps.iter().enumerate() {
            if !(m.ratio > 0.0 && m.ratio < 1.0) {
                out.push(format!("map {}: ratio must be in (0,1), got {}", i + 1, m.ratio));
            }
            match Matrix::from_row_major(self.dim, &m.rotation) {
                Ok(r) if r.orthogonality_defect() > 1e-10 => {
                    out.push(format!("map {}: rotation is not orthogonal", i + 1))
                }
                Ok(_) => {}
                Err(e) => out.push(format!("map {}: {e}", i + 1)),
            }
            if m.translation.len() != self.dim {
                out.push(format!(
                    "map {}: translation has {} entries, expected {}",
                    i + 1,
                    m.translation.len(),
                    self.dim
                ));
            }
        }
        if let Some(b) = &self.seed_ball {
            if b.center.dim() != self.dim || !(b.radius > 0.0) {
                out.push("seed_ball must have the IFS dimension and a positive radius".into());
            }
        }
        if out.is_empty() {
            if let Err(e) = IfSystem::from_spec(self) {
                out.push(e.to_string());
            }
        }
        out
    }
}

/// An IFS of contracting similarities with its seed ball and dimension.
#[derive(Debug, Clone)]
pub struct IfSystem {
    dim: usize,
    maps: Vec<Similarity>,
    open_set: OpenSet,
    seed_ball: Ball,
    irreducible: bool,
    delta: f64,
    weights: Vec<f64>,
    anchor: Point,
}

/// Root of `s ↦ Σ ρᵢ^s − 1` on `[0, dim]` by bisection.
pub fn moran_dimension(ratios: &[f64], dim: usize) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::invalid("moran_dimension needs at least one map"));
    }
    if ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::invalid("ratios must be in (0,1)"));
    }
    let f = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0f64, dim as f64);
    if f(lo) <= 0.0 {
        return Ok(0.0);
    }
    if f(hi) > 0.0 {
        return Err(Error::invalid(format!(
            "similarity dimension exceeds the ambient dimension {dim}; maps overlap"
        )));
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl IfSystem {
    pub fn new(
        maps: Vec<Similarity>,
        open_set: OpenSet,
        seed_ball: Option<Ball>,
        irreducible: bool,
    ) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("an IFS needs at least one map"))?;
        let dim = first.translation.dim();
        if maps.iter().any(|m| m.translation.dim() != dim) {
            return Err(Error::invalid("maps of mixed dimension"));
        }
        let ratios: Vec<f64> = maps.iter().map(|m| m.ratio).collect();
        let delta = moran_dimension(&ratios, dim)?;
        let seed_ball = match seed_ball {
            Some(b) => b,
            None => default_seed_ball(&maps),
        };
        if seed_ball.center.dim() != dim {
            return Err(Error::invalid("seed ball dimension differs from the maps"));
        }
        for (i, m) in maps.iter().enumerate() {
            let image = Ball {
                center: m.apply(&seed_ball.center),
                radius: m.ratio * seed_ball.radius,
            };
            if !ball_in_ball(&image, &seed_ball) {
                return Err(Error::invalid(format!(
                    "map {} does not send the seed ball into itself",
                    i + 1
                )));
            }
        }
        check_open_set(&maps, &open_set)?;
        let raw: Vec<f64> = ratios.iter().map(|r| r.powf(delta)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let anchor = first.fixed_point();
        Ok(Self {
            dim,
            maps,
            open_set,
            seed_ball,
            irreducible,
            delta,
            weights,
            anchor,
        })
    }

    pub fn from_spec(spec: &IfsSpec) -> Result<Self> {
        let maps = spec
            .maps
            .iter()
            .map(|m| {
                Similarity::new(
                    m.ratio,
                    Matrix::from_row_major(spec.dim, &m.rotation)?,
                    Point::new(&m.translation)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps, spec.open_set.clone(), spec.seed_ball, spec.irreducible)
    }

    pub fn to_spec(&self) -> IfsSpec {
        IfsSpec {
            dim: self.dim,
            maps: self
                .maps
                .iter()
                .map(|m| MapSpec {
                    ratio: m.ratio,
                    rotation: m.rotation.row_major(),
                    translation: m.translation.coords().to_vec(),
                })
                .collect(),
            open_set: self.open_set.clone(),
            seed_ball: Some(self.seed_ball),
            irreducible: self.irreducible,
        }
    }

    /// Built-in systems: `cantor3`, `sierpinski`, `koch`.
    pub fn preset(name: &str) -> Result<Self> {
        let p = |c: &[f64]| Point::new(c).expect("preset point");
        match name {
            "cantor3" => {
                let id = Matrix::identity(1);
                Self::new(
                    vec![
                        Similarity::new(1.0 / 3.0, id, p(&[0.0]))?,
                        Similarity::new(1.0 / 3.0, id, p(&[2.0 / 3.0]))?,
                    ],
                    OpenSet::Box {
                        lo: p(&[0.0]),
                        hi: p(&[1.0]),
                    },
                    Some(Ball::new(p(&[0.5]), 0.5)?),
                    true,
                )
            }
            "sierpinski" => {
                let id = Matrix::identity(2);
                let h = 3f64.sqrt() / 2.0;
                Self::new(
                    vec![
                        Similarity::new(0.5, id, p(&[0.0, 0.0]))?,
                        Similarity::new(0.5, id, p(&[0.5, 0.0]))?,
                        Similarity::new(0.5, id, p(&[0.25, h / 2.0]))?,
                    ],
                    OpenSet::Box {
                        lo: p(&[0.0, 0.0]),
                        hi: p(&[1.0, h]),
                    },
                    Some(Ball::new(p(&[0.5, h / 3.0]), 1.0 / 3f64.sqrt())?),
                    true,
                )
            }
            "koch" => {
                let id = Matrix::identity(2);
                let (c, s) = (0.5, 3f64.sqrt() / 2.0);
                let up = Matrix::from_row_major(2, &[c, -s, s, c])?;
                let down = Matrix::from_row_major(2, &[c, s, -s, c])?;
                let third = 1.0 / 3.0;
                Self::new(
                    vec![
                        Similarity::new(third, id, p(&[0.0, 0.0]))?,
                        Similarity::new(third, up, p(&[third, 0.0]))?,
                        Similarity::new(third, down, p(&[0.5, 3f64.sqrt() / 6.0]))?,
                        Similarity::new(third, id, p(&[2.0 * third, 0.0]))?,
                    ],
                    // The usual open set is the triangle under the curve.
                    OpenSet::Declared,
                    Some(Ball::new(p(&[0.5, 0.0]), 0.5)?),
                    true,
                )
            }
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["cantor3", "sierpinski", "koch"]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn maps(&self) -> &[Similarity] {
        &self.maps
    }

    pub fn seed_ball(&self) -> &Ball {
        &self.seed_ball
    }

    pub fn open_set(&self) -> &OpenSet {
        &self.open_set
    }

    pub fn claimed_irreducible(&self) -> bool {
        self.irreducible
    }

    /// Similarity dimension δ with `Σ ρᵢ^δ = 1`.
    pub fn moran_dimension(&self) -> f64 {
        self.delta
    }

    /// A point known to lie on K (fixed point of the first map).
    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    pub fn max_ratio(&self) -> f64 {
        self.maps.iter().map(|m| m.ratio).fold(0.0, f64::max)
    }

    /// Depth-first walk over the cylinder tree in lexicographic order.
    pub fn walk(&self, mut visit: impl FnMut(&Cylinder<'_>) -> Visit) {
        let mut word = Vec::new();
        self.walk_from(&mut word, &Affine::identity(self.dim), 1.0, &mut visit);
    }

    fn walk_from(
        &self,
        word: &mut Vec<u16>,
        map: &Affine,
        weight: f64,
        visit: &mut dyn FnMut(&Cylinder<'_>) -> Visit,
    ) -> bool {
        let cyl = Cylinder {
            word,
            ball: Ball {
                center: map.apply(&self.seed_ball.center),
                radius: self.seed_ball.radius * map.scale,
            },
            weight,
            map,
            anchor: &self.anchor,
        };
        match visit(&cyl) {
            Visit::Stop => return false,
            Visit::Skip => return true,
            Visit::Descend if word.len() >= MAX_WORD_LEN => return true,
            Visit::Descend => {}
        }
        for (i, s) in self.maps.iter().enumerate() {
            let child = map.then(s);
            word.push(i as u16);
            let more = self.walk_from(word, &child, weight * self.weights[i], visit);
            word.pop();
            if !more {
                return false;
            }
        }
        true
    }

    fn compose(&self, word: &[u16]) -> Result<Affine> {
        let mut map = Affine::identity(self.dim);
        for &i in word {
            let s = self
                .maps
                .get(i as usize)
                .ok_or_else(|| Error::invalid(format!("word index {} out of range", i + 1)))?;
            map = map.then(s);
        }
        Ok(map)
    }

    /// Image of the seed ball under the composed maps of `w`.
    pub fn cylinder_ball(&self, w: &CylinderWord) -> Result<Ball> {
        let map = self.compose(&w.0)?;
        Ok(Ball {
            center: map.apply(&self.seed_ball.center),
            radius: self.seed_ball.radius * map.scale,
        })
    }

    /// A point of K inside the cylinder of `w`.
    pub fn cylinder_representative(&self, w: &CylinderWord) -> Result<Point> {
        Ok(self.compose(&w.0)?.apply(&self.anchor))
    }

    /// `Π ρ_{wi}^δ`.
    pub fn weight(&self, w: &CylinderWord) -> Result<f64> {
        w.0.iter()
            .map(|&i| {
                self.weights
                    .get(i as usize)
                    .copied()
                    .ok_or_else(|| Error::invalid("word index out of range"))
            })
            .product()
    }

    /// Maximal words whose cylinder ball has diameter `<= max_diam` and
    /// meets `region`; subtrees that already miss `region` are pruned.
    pub fn cylinders_meeting(&self, region: &Ball, max_diam: f64) -> Result<Vec<CylinderWord>> {
        let mut out = Vec::new();
        self.for_each_cylinder_meeting(region, max_diam, |c| out.push(CylinderWord(c.word.to_vec())))?;
        Ok(out)
    }

    /// Visitor form of [`Self::cylinders_meeting`].
    pub fn for_each_cylinder_meeting(
        &self,
        region: &Ball,
        max_diam: f64,
        mut f: impl FnMut(&Cylinder<'_>),
    ) -> Result<usize> {
        if !(max_diam > 0.0) {
            return Err(Error::invalid("max_diam must be positive"));
        }
        let limit = max_diam * (1.0 + 1e-12);
        let mut count = 0usize;
        let mut overflow = false;
        self.walk(|c| {
            if !region.meets(&c.ball) {
                return Visit::Skip;
            }
            if c.ball.diameter() <= limit {
                count += 1;
                if count > ENUMERATION_CAP {
                    overflow = true;
                    return Visit::Stop;
                }
                f(c);
                return Visit::Skip;
            }
            Visit::Descend
        });
        if overflow {
            return Err(Error::RefinementTooDeep { cap: ENUMERATION_CAP });
        }
        Ok(count)
    }

    /// Lower and upper bounds on μ(region) from depth-`depth` cylinders.
    pub fn measure_bounds(&self, region: &Ball, depth: usize) -> Result<(f64, f64)> {
        self.measure_bounds_in(region, depth)
    }

    /// [`Self::measure_bounds`] for any [`Region`]. Cylinders wholly inside
    /// the region are credited without refining them further; this gives
    /// the same sums as a full depth-`depth` enumeration.
    pub fn measure_bounds_in<R: Region + ?Sized>(&self, region: &R, depth: usize) -> Result<(f64, f64)> {
        let (mut lower, mut upper) = (0.0, 0.0);
        let mut leaves = 0usize;
        let mut overflow = false;
        self.walk(|c| match region.classify(&c.ball) {
            Overlap::Outside => Visit::Skip,
            Overlap::Inside => {
                lower += c.weight;
                upper += c.weight;
                Visit::Skip
            }
            Overlap::Partial if c.word.len() >= depth => {
                upper += c.weight;
                leaves += 1;
                if leaves > ENUMERATION_CAP {
                    overflow = true;
                    Visit::Stop
                } else {
                    Visit::Skip
                }
            }
            Overlap::Partial => Visit::Descend,
        });
        if overflow {
            return Err(Error::RefinementTooDeep { cap: ENUMERATION_CAP });
        }
        Ok((lower.min(1.0), upper.min(1.0)))
    }

    /// Chaos-game samples: maps chosen with probabilities `ρᵢ^δ`, starting
    /// from the seed centre and discarding [`CHAOS_BURN_IN`] steps.
    pub fn chaos_sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(Error::invalid("chaos_sample needs n >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::invalid(format!("bad map weights: {e}")))?;
        let mut x = self.seed_ball.center;
        for _ in 0..CHAOS_BURN_IN {
            x = self.maps[pick.sample(&mut rng)].apply(&x);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            x = self.maps[pick.sample(&mut rng)].apply(&x);
            out.push(x);
        }
        Ok(out)
    }

    /// Point of K (a cylinder representative) closest to `target`, among
    /// those inside `constraint` when given. Cylinders are refined until
    /// their radius drops to `resolution`; the search stops early once a
    /// point within `good_enough` of the target is found.
    pub fn nearest_support_point(
        &self,
        target: &Point,
        constraint: Option<&Ball>,
        resolution: f64,
        good_enough: f64,
    ) -> Option<Point> {
        let mut search = NearestSearch {
            ifs: self,
            target: *target,
            constraint: constraint.copied(),
            resolution,
            good_enough,
            best: None,
            budget: 2_000_000,
        };
        search.descend(&Affine::identity(self.dim));
        search.best.map(|(_, p)| p)
    }

    /// Whether some cylinder representative lies within `tol` of `p`.
    /// Points of K closer than `tol (1 − 2·10⁻³)` are always found.
    pub fn near_support(&self, p: &Point, tol: f64) -> bool {
        match self.nearest_support_point(p, None, tol * 1e-3, tol) {
            Some(q) => q.dist(p) <= tol,
            None => false,
        }
    }

    /// Sum of the weights of all depth-`k` cylinders.
    pub fn weight_sum_at_depth(&self, k: usize) -> f64 {
        let mut sum = 0.0;
        self.walk(|c| {
            if c.word.len() == k {
                sum += c.weight;
                Visit::Skip
            } else {
                Visit::Descend
            }
        });
        sum
    }
}

struct NearestSearch<'a> {
    ifs: &'a IfSystem,
    target: Point,
    constraint: Option<Ball>,
    resolution: f64,
    good_enough: f64,
    best: Option<(f64, Point)>,
    budget: usize,
}

impl NearestSearch<'_> {
    /// Returns true once the search should stop.
    fn descend(&mut self, map: &Affine) -> bool {
        if self.budget == 0 {
            return true;
        }
        self.budget -= 1;
        let ball = Ball {
            center: map.apply(&self.ifs.seed_ball.center),
            radius: self.ifs.seed_ball.radius * map.scale,
        };
        if let Some((best, _)) = self.best {
            if ball.distance_to(&self.target) >= best {
                return false;
            }
        }
        if let Some(c) = &self.constraint {
            if !c.meets(&ball) {
                return false;
            }
        }
        let rep = map.apply(&self.ifs.anchor);
        if self.constraint.is_none_or(|c| c.contains_point(&rep, 0.0)) {
            let d = rep.dist(&self.target);
            if self.best.is_none_or(|(b, _)| d < b) {
                self.best = Some((d, rep));
            }
            if d <= self.good_enough {
                return true;
            }
        }
        if ball.radius <= self.resolution {
            return false;
        }
        let mut kids: Vec<(f64, Affine)> = self
            .ifs
            .maps
            .iter()
            .map(|s| {
                let child = map.then(s);
                let centre = child.apply(&self.ifs.seed_ball.center);
                (centre.dist(&self.target), child)
            })
            .collect();
        kids.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, child) in &kids {
            if self.descend(child) {
                return true;
            }
        }
        false
    }
}

/// Ball centred at the mean of the fixed points, just large enough for
/// every map to send it into itself, inflated by 1%.
fn default_seed_ball(maps: &[Similarity]) -> Ball {
    let dim = maps[0].translation.dim();
    let centre = maps
        .iter()
        .fold(Point::origin(dim), |acc, m| acc + m.fixed_point())
        * (1.0 / maps.len() as f64);
    let radius = maps
        .iter()
        .map(|m| m.apply(&centre).dist(&centre) / (1.0 - m.ratio))
        .fold(0.0, f64::max);
    let radius = if radius > 0.0 { radius * 1.01 } else { 0.5 };
    Ball {
        center: centre,
        radius,
    }
}

fn check_open_set(maps: &[Similarity], open: &OpenSet) -> Result<()> {
    match open {
        OpenSet::Declared => Ok(()),
        OpenSet::Ball { center, radius } => {
            let u = Ball::new(*center, *radius)?;
            let images: Vec<Ball> = maps
                .iter()
                .map(|m| Ball {
                    center: m.apply(center),
                    radius: m.ratio * radius,
                })
                .collect();
            for (i, b) in images.iter().enumerate() {
                if !ball_in_ball(b, &u) {
                    return Err(Error::invalid(format!("map {} does not send the open set into itself", i + 1)));
                }
                for (j, c) in images.iter().enumerate().skip(i + 1) {
                    if b.center.dist(&c.center) < b.radius + c.radius - CONTAIN_TOL {
                        return Err(Error::invalid(format!(
                            "open set images {} and {} overlap",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
            Ok(())
        }
        OpenSet::Box { lo, hi } => {
            let n = lo.dim();
            if hi.dim() != n || (0..n).any(|k| !(hi[k] > lo[k])) {
                return Err(Error::invalid("open box needs lo < hi componentwise"));
            }
            if maps.iter().any(|m| !m.rotation.is_signed_permutation()) {
                log::warn!("open-set check skipped: box images are not axis-aligned");
                return Ok(());
            }
            let images: Vec<(Point, Point)> = maps
                .iter()
                .map(|m| {
                    let (a, b) = (m.apply(lo), m.apply(hi));
                    (
                        Point::from_fn(n, |k| a[k].min(b[k])),
                        Point::from_fn(n, |k| a[k].max(b[k])),
                    )
                })
                .collect();
            for (i, (a, b)) in images.iter().enumerate() {
                if (0..n).any(|k| a[k] < lo[k] - CONTAIN_TOL || b[k] > hi[k] + CONTAIN_TOL) {
                    return Err(Error::invalid(format!("map {} does not send the open set into itself", i + 1)));
                }
                for (j, (c, d)) in images.iter().enumerate().skip(i + 1) {
                    let separated = (0..n).any(|k| b[k].min(d[k]) - a[k].max(c[k]) <= CONTAIN_TOL);
                    if !separated {
                        return Err(Error::invalid(format!(
                            "open set images {} and {} overlap",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
            Ok(())
        }
    }
}
