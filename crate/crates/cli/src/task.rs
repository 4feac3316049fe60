use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ctjoint::geometry::Vec2;
use ctjoint::phantoms::PhantomKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Experiment suites run by `reproduce`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    T1,
    T2,
    Tb1,
    Randomized,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::T1 => "t1",
            Suite::T2 => "t2",
            Suite::Tb1 => "tb1",
            Suite::Randomized => "randomized",
        }
    }

    /// Phantom of the fixed-material suites.
    pub fn phantom(self) -> Option<PhantomKind> {
        match self {
            Suite::T1 => Some(PhantomKind::Simple),
            Suite::T2 => Some(PhantomKind::Complex),
            Suite::Tb1 => Some(PhantomKind::Bar),
            Suite::Randomized => None,
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Suite::T1),
            "t2" => Ok(Suite::T2),
            "tb1" => Ok(Suite::Tb1),
            "randomized" => Ok(Suite::Randomized),
            other => Err(CliError::Usage(format!("unknown suite {other:?}; expected t1, t2, tb1 or randomized"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A command with its command-specific arguments; shared parameters live in
/// the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Reconstruct,
    PredictArtifacts { point: Vec2, curve_samples: usize },
    Reproduce { suite: Suite, runs: usize },
    Render { input: PathBuf, overlays: Vec<PathBuf>, png: bool },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Reconstruct => "reconstruct",
            Task::PredictArtifacts { .. } => "predict-artifacts",
            Task::Reproduce { .. } => "reproduce",
            Task::Render { .. } => "render",
        }
    }
}

pub fn parse_point(s: &str) -> Result<Vec2, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("point must look like x1,x2; got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x1: f64 = parts[0].parse().map_err(|_| bad())?;
    let x2: f64 = parts[1].parse().map_err(|_| bad())?;
    if !(x1.is_finite() && x2.is_finite()) {
        return Err(bad());
    }
    Ok([x1, x2])
}
