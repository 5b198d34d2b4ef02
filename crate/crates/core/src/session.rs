//! Session files: which IFS, which target maps, game parameters and seed.
//!
//! ```json
//! {
//!   "ifs": "cantor3",
//!   "maps": [{ "matrix": [[1.0]], "shift": [0.0] }],
//!   "alpha": "auto",
//!   "beta": 0.5,
//!   "adversary": "greedy",
//!   "target_radius": 1e-10,
//!   "seed": 7
//! }
//! ```
//!
//! `ifs` is a preset name or an inline IFS description. Parsing reports
//! every problem it finds rather than stopping at the first.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::diophantine::AffineMap;
use crate::error::Result;
use crate::ifs::{IfSystem, IfsSpec};
use crate::pipeline::{AdversaryKind, CertifyOptions};
use crate::strategy::TargetFamily;

pub const DEFAULT_TARGET_RADIUS: f64 = 1e-10;

/// A numeric parameter or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Param {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for Param {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Param::Auto => s.serialize_str("auto"),
            Param::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Param {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s == "auto" => Ok(Param::Auto),
            Value::Number(n) => Ok(Param::Value(n.as_f64().unwrap_or(f64::NAN))),
            other => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IfsSource {
    Preset(String),
    Inline(Box<IfsSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub ifs: IfsSource,
    pub maps: Vec<AffineMap>,
    pub alpha: Param,
    pub beta: Param,
    pub adversary: AdversaryKind,
    pub target_radius: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifyOptions>,
}

/// Every problem found while parsing a session file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecErrors(pub Vec<String>);

impl fmt::Display for SpecErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SpecErrors {}

const KEYS: &[&str] = &[
    "ifs",
    "maps",
    "alpha",
    "beta",
    "adversary",
    "target_radius",
    "seed",
    "out",
    "certify",
];

/// Parses and validates a session file.
pub fn parse_session_spec(text: &str) -> std::result::Result<SessionSpec, SpecErrors> {
    let root: Value = serde_json::from_str(text).map_err(|e| SpecErrors(vec![format!("not valid JSON: {e}")]))?;
    let Value::Object(obj) = root else {
        return Err(SpecErrors(vec!["session spec must be a JSON object".into()]));
    };
    let mut errors = Vec::new();
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key '{key}'"));
        }
    }

    let (ifs_source, dim) = parse_ifs(&obj, &mut errors);
    let maps = parse_maps(&obj, dim, &mut errors);
    let alpha = parse_param(&obj, "alpha", &mut errors);
    let beta = parse_param(&obj, "beta", &mut errors);
    let adversary = match obj.get("adversary") {
        None => Some(AdversaryKind::default()),
        Some(Value::String(s)) => s.parse().map_err(|e| errors.push(format!("adversary: {e}"))).ok(),
        Some(other) => {
            errors.push(format!("adversary must be a string, got {other}"));
            None
        }
    };
    let target_radius = match obj.get("target_radius") {
        None => Some(DEFAULT_TARGET_RADIUS),
        Some(v) => match v.as_f64() {
            Some(t) if t > 0.0 && t < 1.0 => Some(t),
            _ => {
                errors.push(format!("target_radius must be a number in (0,1), got {v}"));
                None
            }
        },
    };
    let seed = match obj.get("seed") {
        None => {
            errors.push("missing seed (required for reproducible runs)".into());
            None
        }
        Some(v) => v.as_u64().or_else(|| {
            errors.push(format!("seed must be a non-negative integer, got {v}"));
            None
        }),
    };
    let out = match obj.get("out") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            errors.push(format!("out must be a string, got {other}"));
            None
        }
    };
    let certify = match obj.get("certify") {
        None => None,
        Some(v) => serde_json::from_value::<CertifyOptions>(v.clone())
            .map_err(|e| errors.push(format!("certify: {e}")))
            .ok(),
    };

    if !errors.is_empty() {
        return Err(SpecErrors(errors));
    }
    Ok(SessionSpec {
        ifs: ifs_source.expect("checked"),
        maps: maps.expect("checked"),
        alpha: alpha.expect("checked"),
        beta: beta.expect("checked"),
        adversary: adversary.expect("checked"),
        target_radius: target_radius.expect("checked"),
        seed: seed.expect("checked"),
        out,
        certify,
    })
}

fn parse_ifs(obj: &Map<String, Value>, errors: &mut Vec<String>) -> (Option<IfsSource>, Option<usize>) {
    match obj.get("ifs") {
        None => {
            errors.push("missing ifs (a preset name or an inline description)".into());
            (None, None)
        }
        Some(Value::String(name)) => match IfSystem::preset(name) {
            Ok(ifs) => (Some(IfsSource::Preset(name.clone())), Some(ifs.dim())),
            Err(_) => {
                errors.push(format!(
                    "unknown preset '{name}' (known: {})",
                    IfSystem::preset_names().join(", ")
                ));
                (None, None)
            }
        },
        Some(v) => match serde_json::from_value::<IfsSpec>(v.clone()) {
            Ok(spec) => {
                let problems = spec.problems();
                let dim = spec.dim;
                if problems.is_empty() {
                    (Some(IfsSource::Inline(Box::new(spec))), Some(dim))
                } else {
                    errors.extend(problems.into_iter().map(|p| format!("ifs: {p}")));
                    (None, Some(dim))
                }
            }
            Err(e) => {
                errors.push(format!("ifs: {e}"));
                (None, None)
            }
        },
    }
}

fn parse_maps(obj: &Map<String, Value>, dim: Option<usize>, errors: &mut Vec<String>) -> Option<Vec<AffineMap>> {
    let Some(v) = obj.get("maps") else {
        return dim.map(|n| vec![AffineMap::identity(n)]);
    };
    let Value::Array(items) = v else {
        errors.push("maps must be a list".into());
        return None;
    };
    if items.is_empty() {
        errors.push("maps must not be empty".into());
        return None;
    }
    if items.len() > 16 {
        errors.push(format!("at most 16 maps are supported, got {}", items.len()));
    }
    let mut maps = Vec::new();
    let before = errors.len();
    for (i, item) in items.iter().enumerate() {
        match serde_json::from_value::<AffineMap>(item.clone()) {
            Ok(m) => {
                if dim.is_some_and(|n| n != m.dim()) {
                    errors.push(format!("maps[{i}]: dimension {} differs from the IFS", m.dim()));
                }
                maps.push(m);
            }
            Err(e) => errors.push(format!("maps[{i}]: {e}")),
        }
    }
    (errors.len() == before).then_some(maps)
}

fn parse_param(obj: &Map<String, Value>, key: &str, errors: &mut Vec<String>) -> Option<Param> {
    match obj.get(key) {
        None => Some(Param::Auto),
        Some(v) => match serde_json::from_value::<Param>(v.clone()) {
            Ok(Param::Value(x)) if !(x > 0.0 && x < 1.0) => {
                errors.push(format!("{key} must lie in (0,1), got {x}"));
                None
            }
            Ok(p) => Some(p),
            Err(e) => {
                errors.push(format!("{key}: {e}"));
                None
            }
        },
    }
}

impl SessionSpec {
    /// A session on a preset with the identity map and automatic parameters.
    pub fn for_preset(name: &str, seed: u64) -> Result<Self> {
        let ifs = IfSystem::preset(name)?;
        Ok(Self {
            ifs: IfsSource::Preset(name.to_string()),
            maps: vec![AffineMap::identity(ifs.dim())],
            alpha: Param::Auto,
            beta: Param::Auto,
            adversary: AdversaryKind::Greedy,
            target_radius: DEFAULT_TARGET_RADIUS,
            seed,
            out: None,
            certify: None,
        })
    }

    pub fn ifs_system(&self) -> Result<IfSystem> {
        match &self.ifs {
            IfsSource::Preset(name) => IfSystem::preset(name),
            IfsSource::Inline(spec) => IfSystem::from_spec(spec),
        }
    }

    pub fn families(&self) -> Vec<TargetFamily> {
        self.maps.iter().cloned().map(TargetFamily::new).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session spec serialises")
    }
}
