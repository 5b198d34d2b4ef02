//! The (α, β) game on the support of an IFS.
//!
//! Player B opens with `B₀ = B(y₀, r)`; after that the players alternate
//! and the radii are fixed by the rules: the `j`-th A-ball has radius
//! `α r (αβ)^j` and the `j`-th B-ball has radius `r (αβ)^j`. Players only
//! choose centres, which must lie (up to a tolerance proportional to the
//! current radius) on the attractor K.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diophantine::{rate_exponent, rational_targets_in_window, AffineMap, Q_CAP};
use crate::error::{Error, Result};
use crate::geometry::{Ball, Point};
use crate::ifs::{IfSystem, Visit};

/// Default support tolerance, relative to the enclosing ball's radius.
pub const DEFAULT_SUPPORT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    A,
    B,
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Owner::A => "A",
            Owner::B => "B",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GameConfig {
    pub alpha: f64,
    pub beta: f64,
    pub initial_ball: Ball,
    pub support: Arc<IfSystem>,
    /// Centres must lie within this fraction of the enclosing radius of K.
    pub support_tolerance: f64,
    pub max_rounds: Option<usize>,
    pub target_radius: Option<f64>,
}

impl GameConfig {
    pub fn new(alpha: f64, beta: f64, initial_ball: Ball, support: Arc<IfSystem>) -> Self {
        Self {
            alpha,
            beta,
            initial_ball,
            support,
            support_tolerance: DEFAULT_SUPPORT_TOLERANCE,
            max_rounds: None,
            target_radius: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            problems.push(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if !(self.initial_ball.radius > 0.0) {
            problems.push("initial ball radius must be positive".into());
        }
        if self.initial_ball.dim() != self.support.dim() {
            problems.push("initial ball and support dimensions differ".into());
        }
        if !(self.support_tolerance > 0.0 && self.support_tolerance < 1.0) {
            problems.push("support_tolerance must lie in (0,1)".into());
        }
        if self.max_rounds.is_none() && self.target_radius.is_none() {
            problems.push("give max_rounds or target_radius".into());
        }
        if let Some(t) = self.target_radius {
            if !(t > 0.0) {
                problems.push("target_radius must be positive".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    /// Radius the rules assign to history entry `index` (0 is `B₀`).
    pub fn radius_at(&self, index: usize) -> f64 {
        let j = (index / 2) as i32;
        let b = self.initial_ball.radius * (self.alpha * self.beta).powi(j);
        if index % 2 == 1 {
            self.alpha * b
        } else {
            b
        }
    }

    /// Absolute support tolerance for a centre chosen inside a ball of
    /// radius `enclosing`.
    pub fn support_tol(&self, enclosing: f64) -> f64 {
        self.support_tolerance * enclosing
    }
}

/// Slack for nesting checks: relative to the outer radius plus a few ulps
/// of the coordinates.
pub fn nesting_tol(outer: &Ball) -> f64 {
    1e-9 * outer.radius + 4.0 * f64::EPSILON * (outer.center.max_abs() + 1.0)
}

/// Strategy metadata attached to a move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveTag {
    pub family: usize,
    pub stage: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub center: Point,
    pub tag: Option<MoveTag>,
}

impl Proposal {
    pub fn plain(center: Point) -> Self {
        Self { center, tag: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    WrongDimension,
    NotNested,
    OffSupport,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::WrongDimension => "wrong_dimension",
            Rejection::NotNested => "not_nested",
            Rejection::OffSupport => "off_support",
        })
    }
}

/// One entry of the ball history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub index: usize,
    pub owner: Owner,
    pub center: Point,
    pub radius: f64,
    /// The proposed centre was legal as given.
    pub accepted: bool,
    /// The proposal was replaced by the concentric move.
    pub repaired: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<Rejection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub family: Option<usize>,
}

impl MoveRecord {
    pub fn ball(&self) -> Ball {
        Ball {
            center: self.center,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GameState {
    pub history: Vec<MoveRecord>,
}

impl GameState {
    pub fn current(&self) -> &MoveRecord {
        self.history.last().expect("history starts with B0")
    }

    /// Moves made after the opening ball.
    pub fn round(&self) -> usize {
        self.history.len() - 1
    }

    pub fn whose_turn(&self) -> Owner {
        if self.history.len() % 2 == 1 {
            Owner::A
        } else {
            Owner::B
        }
    }

    /// Number of A-moves made so far.
    pub fn a_moves(&self) -> usize {
        self.history.len() / 2
    }
}

/// Checks the rule-determined ball around `center` against the state.
pub fn validate_move(state: &GameState, config: &GameConfig, center: &Point) -> std::result::Result<(), Rejection> {
    let current = state.current().ball();
    if center.dim() != current.dim() {
        return Err(Rejection::WrongDimension);
    }
    let radius = config.radius_at(state.history.len());
    let d = center.dist(&current.center);
    if d + radius > current.radius + nesting_tol(&current) {
        return Err(Rejection::NotNested);
    }
    if !config.support.near_support(center, config.support_tol(current.radius)) {
        return Err(Rejection::OffSupport);
    }
    Ok(())
}

/// A strategy for either player.
pub trait Player {
    fn propose(&mut self, state: &GameState, config: &GameConfig) -> Result<Proposal>;
}

/// Always keeps the current centre.
#[derive(Debug, Clone, Copy, Default)]
pub struct Concentric;

impl Player for Concentric {
    fn propose(&mut self, state: &GameState, _: &GameConfig) -> Result<Proposal> {
        Ok(Proposal::plain(state.current().center))
    }
}

/// Header line of a serialised transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub alpha: f64,
    pub beta: f64,
    pub initial_ball: Ball,
    pub support_tolerance: f64,
    pub max_rounds: Option<usize>,
    pub target_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub history: Vec<MoveRecord>,
    pub outcome_point: Point,
    pub outcome_radius: f64,
}

impl Transcript {
    pub fn repairs(&self) -> usize {
        self.history.iter().filter(|m| m.repaired).count()
    }

    /// One JSON object per line: the header, then every move.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({ "header": self.header }))
            .expect("header serialises");
        out.push('\n');
        for m in &self.history {
            out.push_str(&serde_json::to_string(m).expect("move serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct HeaderLine {
            header: TranscriptHeader,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::invalid("empty transcript"))?;
        let header = serde_json::from_str::<HeaderLine>(first)
            .map_err(|e| Error::invalid(format!("transcript header: {e}")))?
            .header;
        let history = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str::<MoveRecord>(l)
                    .map_err(|e| Error::invalid(format!("transcript line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let last = history.last().ok_or_else(|| Error::invalid("transcript has no moves"))?;
        Ok(Self {
            outcome_point: last.center,
            outcome_radius: last.radius,
            header,
            history,
        })
    }
}

/// A game stopped by a strategy error; carries everything played so far.
#[derive(Debug)]
pub struct GameAborted {
    pub transcript: Transcript,
    pub error: Error,
}

impl fmt::Display for GameAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "game aborted after {} moves: {}", self.transcript.history.len(), self.error)
    }
}

impl std::error::Error for GameAborted {}

fn finish(config: &GameConfig, history: Vec<MoveRecord>) -> Transcript {
    let last = history.last().expect("nonempty");
    Transcript {
        header: TranscriptHeader {
            alpha: config.alpha,
            beta: config.beta,
            initial_ball: config.initial_ball,
            support_tolerance: config.support_tolerance,
            max_rounds: config.max_rounds,
            target_radius: config.target_radius,
        },
        outcome_point: last.center,
        outcome_radius: last.radius,
        history,
    }
}

/// Plays B's opening ball, then alternates A and B until the radius drops
/// below `target_radius` or `max_rounds` moves have been made. Illegal
/// proposals are replaced by the concentric move.
pub fn play_game(
    config: &GameConfig,
    a: &mut dyn Player,
    b: &mut dyn Player,
) -> std::result::Result<Transcript, Box<GameAborted>> {
    let opening = MoveRecord {
        index: 0,
        owner: Owner::B,
        center: config.initial_ball.center,
        radius: config.initial_ball.radius,
        accepted: true,
        repaired: false,
        reason: None,
        stage: None,
        family: None,
    };
    let abort = |history: Vec<MoveRecord>, error: Error| {
        Box::new(GameAborted {
            transcript: finish(config, history),
            error,
        })
    };
    if let Err(e) = config.validate() {
        return Err(abort(vec![opening], e));
    }
    let tol = config.support_tol(config.initial_ball.radius);
    if !config.support.near_support(&config.initial_ball.center, tol) {
        return Err(abort(
            vec![opening],
            Error::invalid("initial ball centre is not on the support"),
        ));
    }
    let mut state = GameState { history: vec![opening] };
    loop {
        let radius = state.current().radius;
        if config.target_radius.is_some_and(|t| radius < t) || config.max_rounds.is_some_and(|m| state.round() >= m) {
            break;
        }
        let owner = state.whose_turn();
        let player: &mut dyn Player = match owner {
            Owner::A => &mut *a,
            Owner::B => &mut *b,
        };
        let proposal = match player.propose(&state, config) {
            Ok(p) => p,
            Err(e) => return Err(abort(state.history, e)),
        };
        let verdict = validate_move(&state, config, &proposal.center);
        let center = match verdict {
            Ok(()) => proposal.center,
            Err(reason) => {
                log::warn!(
                    "move {} by {owner} rejected ({reason}); playing concentric",
                    state.history.len()
                );
                state.current().center
            }
        };
        let index = state.history.len();
        state.history.push(MoveRecord {
            index,
            owner,
            center,
            radius: config.radius_at(index),
            accepted: verdict.is_ok(),
            repaired: verdict.is_err(),
            reason: verdict.err(),
            stage: proposal.tag.map(|t| t.stage),
            family: proposal.tag.map(|t| t.family),
        });
    }
    Ok(finish(config, state.history))
}

/// Findings of [`check_transcript`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub moves_checked: usize,
    pub violations: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays a transcript from its header alone: turn order, the radius law
/// (relative error 1e-12), nesting, support membership of every centre and
/// the position of the outcome point.
pub fn check_transcript(t: &Transcript, support: &IfSystem) -> ReplayReport {
    let h = &t.header;
    let mut report = ReplayReport::default();
    let mut v = |msg: String| report.violations.push(msg);
    if t.history.is_empty() {
        v("empty history".into());
        return report;
    }
    let theta = h.alpha * h.beta;
    for (i, m) in t.history.iter().enumerate() {
        let expected_owner = if i % 2 == 0 { Owner::B } else { Owner::A };
        if m.owner != expected_owner || m.index != i {
            v(format!("move {i}: expected owner {expected_owner} at index {i}"));
        }
        let mut expected = h.initial_ball.radius;
        for _ in 0..i / 2 {
            expected *= theta;
        }
        if i % 2 == 1 {
            expected *= h.alpha;
        }
        if ((m.radius - expected) / expected).abs() > 1e-12 {
            v(format!("move {i}: radius {} breaks the radius law ({expected})", m.radius));
        }
        let enclosing = if i == 0 { m.radius } else { t.history[i - 1].radius };
        if !on_support(support, &m.center, h.support_tolerance * enclosing) {
            v(format!("move {i}: centre {:?} is off the support", m.center));
        }
        if i > 0 {
            let outer = &t.history[i - 1];
            let slack = 1e-9 * outer.radius + 4.0 * f64::EPSILON * (outer.center.max_abs() + 1.0);
            if m.center.dist(&outer.center) + m.radius > outer.radius + slack {
                v(format!("move {i}: ball is not inside move {}", i - 1));
            }
        }
        let slack = 1e-9 * m.radius + 4.0 * f64::EPSILON * (m.center.max_abs() + 1.0);
        if t.outcome_point.dist(&m.center) > m.radius + slack {
            v(format!("move {i}: outcome point lies outside the ball"));
        }
        report.moves_checked += 1;
    }
    let last = t.history.last().expect("nonempty");
    if last.center != t.outcome_point || last.radius != t.outcome_radius {
        v("outcome does not match the last ball".into());
    }
    report
}

/// Whether some cylinder of diameter at most `tol/1000` meets `B(p, tol)`.
/// Every such cylinder carries a point of K within `1.001 tol` of `p`.
fn on_support(ifs: &IfSystem, p: &Point, tol: f64) -> bool {
    let probe = Ball { center: *p, radius: tol };
    let leaf = tol * 1e-3;
    let mut hit = false;
    ifs.walk(|c| {
        if !probe.meets(&c.ball) {
            Visit::Skip
        } else if c.ball.diameter() <= leaf {
            hit = true;
            Visit::Stop
        } else {
            Visit::Descend
        }
    });
    hit
}

/// Player B steering toward the rational target with the smallest current
/// badness contribution `q^{(N+1)/N} · d(x, Λ(p/q))`.
pub struct GreedyAdversary {
    families: Vec<AffineMap>,
    /// Hard ceiling on denominators.
    pub q_ceiling: f64,
}

impl GreedyAdversary {
    pub fn new(families: Vec<AffineMap>) -> Self {
        Self {
            families,
            q_ceiling: 1e6,
        }
    }

    /// Denominators considered inside a ball of radius `rho`.
    fn q_limit(&self, rho: f64, n: usize) -> f64 {
        (10.0 * rho.powf(-(n as f64) / (n as f64 + 1.0))).max(2.0).min(self.q_ceiling).min(Q_CAP)
    }
}

impl Player for GreedyAdversary {
    fn propose(&mut self, state: &GameState, config: &GameConfig) -> Result<Proposal> {
        let current = state.current().ball();
        let x = current.center;
        let n = x.dim();
        let e = rate_exponent(n);
        let mut best: Option<(f64, Point)> = None;
        for lam in &self.families {
            let q_hi = self.q_limit(current.radius, n);
            for t in rational_targets_in_window(lam, 1.0, q_hi, &current)? {
                let score = (t.q as f64).powf(e) * t.image.dist(&x);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, t.image));
                }
            }
        }
        let Some((_, target)) = best else {
            return Ok(Proposal::plain(x));
        };
        let new_radius = config.radius_at(state.history.len());
        let legal = Ball {
            center: x,
            radius: current.radius - new_radius - nesting_tol(&current).min(1e-6 * current.radius),
        };
        if legal.radius <= 0.0 {
            return Ok(Proposal::plain(x));
        }
        let tol = config.support_tol(current.radius);
        let resolution = tol * 1e-3;
        Ok(match config.support.nearest_support_point(&target, Some(&legal), resolution, 0.0) {
            Some(p) => Proposal::plain(p),
            None => Proposal::plain(x),
        })
    }
}
