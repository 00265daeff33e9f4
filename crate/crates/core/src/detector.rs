//! Logit-based OOD detectors. All four return scores where higher means IND.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::score::LogitRow;

/// Temperature commonly used for ODIN.
pub const DEFAULT_ODIN_TEMPERATURE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    /// Maximum softmax probability.
    Msp,
    /// Temperature-scaled maximum softmax probability (no input perturbation).
    OdinT,
    /// `T * logsumexp(l / T)`, the negated free energy.
    Energy,
    /// Maximum logit.
    Mls,
}

impl Detector {
    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Msp => "msp",
            Detector::OdinT => "odin_t",
            Detector::Energy => "energy",
            Detector::Mls => "mls",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(Detector::Msp),
            "odin_t" | "odin" => Ok(Detector::OdinT),
            "energy" => Ok(Detector::Energy),
            "mls" => Ok(Detector::Mls),
            other => Err(Error::Config(format!("unknown detector '{other}'"))),
        }
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest softmax probability of `logits / t`, shifted by the max logit.
fn max_softmax(logits: &[f64], t: f64) -> f64 {
    let m = max_of(logits);
    let denom: f64 = logits.iter().map(|&l| ((l - m) / t).exp()).sum();
    1.0 / denom
}

fn logsumexp(logits: &[f64], t: f64) -> f64 {
    let m = max_of(logits) / t;
    let sum: f64 = logits.iter().map(|&l| (l / t - m).exp()).sum();
    m + sum.ln()
}

/// Scores one logit row. `temperature` is ignored by MSP and MLS.
pub fn detector_score(row: &LogitRow, method: Detector, temperature: f64) -> Result<f64> {
    if row.logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample '{}': non-finite logit",
            row.sample_id
        )));
    }
    if row.logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "sample '{}': need at least 2 logits",
            row.sample_id
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(match method {
        Detector::Msp => max_softmax(&row.logits, 1.0),
        Detector::OdinT => max_softmax(&row.logits, temperature),
        Detector::Energy => temperature * logsumexp(&row.logits, temperature),
        Detector::Mls => max_of(&row.logits),
    })
}
