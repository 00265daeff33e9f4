//! Correlation and error summaries.

use crate::error::{Error, Result};

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Product-moment correlation. Errors if either sequence is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the sequences is constant".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn affine_relation_is_perfect() {
        let xs = [0.1, 0.5, 0.2, 0.9, 0.4];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_abs_diff_eq!(pearson(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cubic_is_monotone_but_not_linear() {
        let xs = [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powi(3)).collect();
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        assert!(pearson(&xs, &ys).unwrap() < 1.0);
    }

    #[test]
    fn rmse_zero_and_offset() {
        let t = [10.0, 20.0, 30.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 5.0).collect();
        assert_abs_diff_eq!(rmse(&p, &t).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_input_is_an_error() {
        let err = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err.code(), "E_UNDEFINED_CORRELATION");
        assert!(spearman(&[1.0, 2.0], &[4.0, 4.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_mean_rank() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    proptest! {
        #[test]
        fn spearman_ignores_monotone_transforms(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(base) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|y| 3.0 * y - 7.0).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
            }
        }

        #[test]
        fn correlations_are_bounded(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..50)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
