//! Supervised OOD-detection metrics. IND is the positive class throughout.
//!
//! A sample is predicted IND at threshold `t` iff `score > t`. Candidate
//! thresholds are the observed score values plus negative infinity.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::score::{Label, ScoreSet};

/// Distinct score values with per-class counts, sorted by descending score.
struct TieGroups {
    groups: Vec<(f64, u64, u64)>,
    n_ind: u64,
    n_ood: u64,
}

impl TieGroups {
    fn new(set: &ScoreSet) -> Result<Self> {
        let (scores, labels, n_ind, n_ood) = set.supervised()?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for i in order {
            let s = scores[i];
            let (ind, ood) = match labels[i] {
                Label::Ind => (1, 0),
                Label::Ood => (0, 1),
            };
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += ind;
                    g.2 += ood;
                }
                _ => groups.push((s, ind, ood)),
            }
        }
        Ok(Self {
            groups,
            n_ind: n_ind as u64,
            n_ood: n_ood as u64,
        })
    }

    /// (IND count, OOD count) strictly above each group's value, followed by
    /// the totals for the threshold at negative infinity.
    fn counts_above(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut ind = 0;
        let mut ood = 0;
        self.groups
            .iter()
            .map(move |&(_, gi, go)| {
                let here = (ind, ood);
                ind += gi;
                ood += go;
                here
            })
            .chain(std::iter::once((self.n_ind, self.n_ood)))
    }
}

/// Probability that a random IND sample outscores a random OOD sample, ties
/// counting one half. Computed from tie-grouped rank sums (Mann-Whitney U)
/// in exact integer arithmetic.
pub fn auroc(set: &ScoreSet) -> Result<f64> {
    let g = TieGroups::new(set)?;
    // Walk ascending so `ood_below` counts OOD strictly below the group.
    let mut ood_below: u128 = 0;
    let mut twice_u: u128 = 0;
    for &(_, gi, go) in g.groups.iter().rev() {
        twice_u += gi as u128 * (2 * ood_below + go as u128);
        ood_below += go as u128;
    }
    Ok(twice_u as f64 / (2 * g.n_ind as u128 * g.n_ood as u128) as f64)
}

/// FPR at the largest threshold whose TPR reaches `q`.
pub fn fpr_at_tpr(set: &ScoreSet, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "TPR level must be in (0,1), got {q}"
        )));
    }
    let g = TieGroups::new(set)?;
    let (n_ind, n_ood) = (g.n_ind as f64, g.n_ood as f64);
    for (ind, ood) in g.counts_above() {
        if ind as f64 / n_ind >= q {
            return Ok(ood as f64 / n_ood);
        }
    }
    unreachable!("threshold at -inf has TPR 1")
}

/// Minimum over thresholds of `0.5 * FNR + 0.5 * FPR`.
pub fn detection_error(set: &ScoreSet) -> Result<f64> {
    let g = TieGroups::new(set)?;
    let (n_ind, n_ood) = (g.n_ind as f64, g.n_ood as f64);
    Ok(g.counts_above()
        .map(|(ind, ood)| 0.5 * ((g.n_ind - ind) as f64 / n_ind) + 0.5 * (ood as f64 / n_ood))
        .fold(f64::INFINITY, f64::min))
}

/// Area under the precision-recall curve, trapezoidal in recall.
///
/// Operating points are taken at each distinct score (all samples scoring at
/// or above it predicted IND). The curve starts at recall 0 with the
/// precision of the top-ranked group.
pub fn aupr(set: &ScoreSet) -> Result<f64> {
    let g = TieGroups::new(set)?;
    let n_ind = g.n_ind as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut prev: Option<(f64, f64)> = None;
    let mut area = 0.0;
    for &(_, gi, go) in &g.groups {
        tp += gi;
        fp += go;
        let recall = tp as f64 / n_ind;
        let precision = tp as f64 / (tp + fp) as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(area)
}

/// Regression target: which supervised metric a model predicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetMetric {
    /// FPR at the given TPR level, e.g. 0.95.
    FprAtTpr(f64),
    Auroc,
    DetectionError,
    Aupr,
}

impl TargetMetric {
    pub const FPR95: TargetMetric = TargetMetric::FprAtTpr(0.95);

    pub fn evaluate(self, set: &ScoreSet) -> Result<f64> {
        match self {
            TargetMetric::FprAtTpr(q) => fpr_at_tpr(set, q),
            TargetMetric::Auroc => auroc(set),
            TargetMetric::DetectionError => detection_error(set),
            TargetMetric::Aupr => aupr(set),
        }
    }

    /// Name without the TPR level.
    pub fn kind(self) -> &'static str {
        match self {
            TargetMetric::FprAtTpr(_) => "fpr@tpr",
            TargetMetric::Auroc => "auroc",
            TargetMetric::DetectionError => "de",
            TargetMetric::Aupr => "aupr",
        }
    }

    pub fn tpr_q(self) -> Option<f64> {
        match self {
            TargetMetric::FprAtTpr(q) => Some(q),
            _ => None,
        }
    }

    pub fn from_parts(kind: &str, tpr_q: Option<f64>) -> Result<Self> {
        match (kind, tpr_q) {
            ("fpr@tpr", Some(q)) if q > 0.0 && q < 1.0 => Ok(TargetMetric::FprAtTpr(q)),
            ("fpr@tpr", _) => Err(Error::Config("fpr@tpr needs a TPR level in (0,1)".into())),
            ("auroc", _) => Ok(TargetMetric::Auroc),
            ("de", _) => Ok(TargetMetric::DetectionError),
            ("aupr", _) => Ok(TargetMetric::Aupr),
            (other, _) => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

impl fmt::Display for TargetMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetMetric::FprAtTpr(q) => write!(f, "fpr@tpr:{q}"),
            other => f.write_str(other.kind()),
        }
    }
}

impl FromStr for TargetMetric {
    type Err = Error;

    /// Accepts `auroc`, `de`, `aupr`, `fpr@tpr:<q>` (also `fpr95`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        if s == "fpr95" {
            return Ok(TargetMetric::FPR95);
        }
        match s.split_once(':') {
            Some(("fpr@tpr", q)) => {
                let q: f64 = q
                    .parse()
                    .map_err(|_| Error::Config(format!("bad TPR level '{q}'")))?;
                TargetMetric::from_parts("fpr@tpr", Some(q))
            }
            Some(_) => Err(Error::Config(format!("unknown metric '{s}'"))),
            None => TargetMetric::from_parts(&s, None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ind: &[f64], ood: &[f64]) -> ScoreSet {
        ScoreSet::from_parts("t", ind, ood).unwrap()
    }

    #[test]
    fn auroc_perfect_and_tied() {
        assert_eq!(auroc(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.6], &[0.6])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.1], &[0.9])).unwrap(), 0.0);
    }

    #[test]
    fn auroc_requires_both_classes() {
        let u = ScoreSet::new("u", vec![0.1, 0.2]).unwrap();
        assert_eq!(auroc(&u).unwrap_err().code(), "E_UNSUPPORTED_METRIC");
        assert!(fpr_at_tpr(&set(&[0.2], &[]), 0.95).is_err());
        assert!(detection_error(&set(&[], &[0.2])).is_err());
        assert!(aupr(&u).is_err());
    }

    #[test]
    fn fpr_disjoint_supports() {
        let s = set(&[1.0; 20], &[0.0; 20]);
        assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 0.0);
    }

    #[test]
    fn fpr_small_hand_example() {
        // Thresholds by descending value: 0.95 (TPR 0), 0.9 (1/4), 0.6 (2/4),
        // 0.5 (2/4), 0.2 (3/4) -> first reaching 0.75; OOD above 0.2 is {0.6}.
        let s = set(&[0.1, 0.5, 0.9, 0.95], &[0.2, 0.6]);
        assert_eq!(fpr_at_tpr(&s, 0.75).unwrap(), 0.5);
    }

    #[test]
    fn fpr_rejects_bad_level() {
        let s = set(&[1.0], &[0.0]);
        assert!(fpr_at_tpr(&s, 1.0).is_err());
        assert!(fpr_at_tpr(&s, 0.0).is_err());
    }

    #[test]
    fn detection_error_extremes() {
        assert_eq!(detection_error(&set(&[0.9, 0.8], &[0.1])).unwrap(), 0.0);
        assert_eq!(
            detection_error(&set(&[0.5, 0.5], &[0.5, 0.5])).unwrap(),
            0.5
        );
    }

    #[test]
    fn aupr_extremes() {
        assert_eq!(aupr(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(aupr(&set(&[0.4, 0.4], &[0.4, 0.4])).unwrap(), 0.5);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [
            TargetMetric::FPR95,
            TargetMetric::FprAtTpr(0.9),
            TargetMetric::Auroc,
            TargetMetric::DetectionError,
            TargetMetric::Aupr,
        ] {
            assert_eq!(m.to_string().parse::<TargetMetric>().unwrap(), m);
        }
        assert!("fpr@tpr:1.5".parse::<TargetMetric>().is_err());
        assert!("f1".parse::<TargetMetric>().is_err());
    }
}
