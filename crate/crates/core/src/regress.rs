//! Gscore-to-performance regression.
//!
//! A linear model `p = theta1 * gscore + theta0` is fitted by ordinary least
//! squares on a labeled meta-suite, with the fit threshold `tau` chosen by a
//! coarse-then-fine scan that minimizes the training loss. Performance values
//! are fractions internally; reports use percent.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::distance::{compute_gscore, gscore_from_fit, Distance, Gscore, GscoreConfig};
use crate::error::{Error, Result};
use crate::fit::{
    fit_gmm2, gmm_split, FitMethod, GaussianParams, EM_DEFAULT_MAX_ITER, EM_DEFAULT_TOL,
    SIGMA_FLOOR,
};
use crate::metrics::TargetMetric;
use crate::score::ScoreSet;
use crate::stats::{pearson, rmse, spearman};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Endpoints of the tau grid are pulled into the open interval by this much.
pub const TAU_EPS: f64 = 1e-6;

/// Ordered collection of score sets with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSuite {
    sets: Vec<ScoreSet>,
}

impl MetaSuite {
    pub fn new(sets: Vec<ScoreSet>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sets {
            check_set_id(s.id())?;
            if !seen.insert(s.id()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate set id '{}'",
                    s.id()
                )));
            }
        }
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &[ScoreSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sets.iter().map(|s| s.id())
    }

    /// True when every set has both IND and OOD labels.
    pub fn is_labeled(&self) -> bool {
        self.sets
            .iter()
            .all(|s| matches!(s.class_counts(), Some((a, b)) if a > 0 && b > 0))
    }

    fn truths(&self, metric: TargetMetric) -> Result<Vec<f64>> {
        self.sets.par_iter().map(|s| metric.evaluate(s)).collect()
    }
}

/// Set ids end up in comma-separated model fields and file names.
fn check_set_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "set id '{id}' must be non-empty ASCII [A-Za-z0-9_.-]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub theta1: f64,
    pub theta0: f64,
    /// Mean squared residual.
    pub train_loss: f64,
}

impl LinearFit {
    pub fn apply(&self, x: f64) -> f64 {
        self.theta1 * x + self.theta0
    }
}

/// Closed-form ordinary least squares on `(gscore, performance)` pairs.
pub fn fit_regression(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::IllConditioned(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression point".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::IllConditioned("all gscores are equal".into()));
    }
    let theta1 = sxy / sxx;
    let theta0 = my - theta1 * mx;
    let train_loss = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (theta1 * x + theta0);
            r * r
        })
        .sum::<f64>()
        / n;
    Ok(LinearFit {
        theta1,
        theta0,
        train_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub fit: LinearFit,
    pub cfg: GscoreConfig,
    pub target: TargetMetric,
    pub n_train: usize,
    pub train_ids: Vec<String>,
    /// Validation Gaussian used during training (UDE only).
    pub val: Option<GaussianParams>,
}

/// Gscores for every set, computed in parallel, in suite order.
pub fn suite_gscores(
    suite: &MetaSuite,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
) -> Result<Vec<Gscore>> {
    suite
        .sets
        .par_iter()
        .map(|s| compute_gscore(s, val, cfg))
        .collect()
}

/// Fits the regression at a fixed configuration.
pub fn train(
    suite: &MetaSuite,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
    target: TargetMetric,
) -> Result<RegressionModel> {
    let truths = suite.truths(target)?;
    let gs = suite_gscores(suite, val, cfg)?;
    build_model(suite, val, cfg, target, &truths, &gs)
}

fn build_model(
    suite: &MetaSuite,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
    target: TargetMetric,
    truths: &[f64],
    gs: &[Gscore],
) -> Result<RegressionModel> {
    if gs.iter().all(|g| g.degenerate) {
        return Err(Error::TuningFailed(format!(
            "every fit is degenerate at tau={:?}",
            cfg.tau
        )));
    }
    let points: Vec<(f64, f64)> = gs
        .iter()
        .map(|g| g.value)
        .zip(truths.iter().copied())
        .collect();
    let fit = fit_regression(&points)?;
    Ok(RegressionModel {
        fit,
        cfg: *cfg,
        target,
        n_train: suite.len(),
        train_ids: suite.ids().map(String::from).collect(),
        val: if cfg.needs_val() { val.copied() } else { None },
    })
}

/// Coarse grid: 0.0, 0.1, ..., 1.0 with endpoints moved inside (0,1).
pub fn coarse_tau_grid() -> Vec<f64> {
    (0..=10)
        .map(|k| (k as f64 / 10.0).clamp(TAU_EPS, 1.0 - TAU_EPS))
        .collect()
}

/// Fine grid: step 0.01 over `[tau - 0.5, tau + 0.5]` clipped to (0,1).
pub fn fine_tau_grid(center: f64) -> Vec<f64> {
    let lo = (center - 0.5).max(TAU_EPS);
    let hi = (center + 0.5).min(1.0 - TAU_EPS);
    let kmin = (lo * 100.0 - 1e-9).ceil() as i64;
    let kmax = (hi * 100.0 + 1e-9).floor() as i64;
    let mut grid: Vec<f64> = (kmin..=kmax)
        .map(|k| (k as f64 / 100.0).clamp(lo, hi))
        .collect();
    grid.push(lo);
    grid.push(hi);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Minimum-loss entry; ties go to the smaller tau. `None` losses are skipped.
pub fn select_tau(scan: &[(f64, Option<f64>)]) -> Option<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = scan
        .iter()
        .filter_map(|&(t, l)| l.filter(|l| l.is_finite()).map(|l| (t, l)))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (t, l) in sorted {
        if best.is_none_or(|(_, bl)| l < bl) {
            best = Some((t, l));
        }
    }
    best
}

/// Scanned `(tau, loss)` pairs; `None` where the regression failed.
pub type TauScan = Vec<(f64, Option<f64>)>;

/// Two-stage scan of an arbitrary loss function of tau. Returns the chosen
/// tau, its loss, and every scanned `(tau, loss)`.
pub fn search_tau(mut loss: impl FnMut(f64) -> Option<f64>) -> Option<(f64, f64, TauScan)> {
    let mut scan: TauScan = coarse_tau_grid()
        .into_iter()
        .map(|t| (t, loss(t)))
        .collect();
    let (coarse, _) = select_tau(&scan)?;
    for t in fine_tau_grid(coarse) {
        if scan.iter().all(|&(s, _)| s != t) {
            scan.push((t, loss(t)));
        }
    }
    let (tau, l) = select_tau(&scan)?;
    Some((tau, l, scan))
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    /// `None` for methods without a threshold.
    pub tau: Option<f64>,
    pub model: RegressionModel,
    pub scan: TauScan,
}

/// Chooses `tau` by minimal training loss. Kmeans passes through.
pub fn tune_tau(
    suite: &MetaSuite,
    val: Option<&GaussianParams>,
    cfg_base: &GscoreConfig,
    target: TargetMetric,
) -> Result<TuneResult> {
    if cfg_base.method == FitMethod::Kmeans {
        let cfg = cfg_base.with_tau(None);
        return Ok(TuneResult {
            tau: None,
            model: train(suite, val, &cfg, target)?,
            scan: Vec::new(),
        });
    }
    if !suite.is_labeled() {
        return Err(Error::UnsupportedMetric(
            "tau tuning needs a labeled meta-suite".into(),
        ));
    }
    let truths = suite.truths(target)?;
    let mut first_err: Option<Error> = None;
    // The mixture itself does not depend on tau; only the split does.
    let em_fits = match cfg_base.method {
        FitMethod::Gmm => Some(
            suite
                .sets
                .par_iter()
                .map(|s| fit_gmm2(s, cfg_base.seed, EM_DEFAULT_TOL, EM_DEFAULT_MAX_ITER))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let eval = |tau: f64| -> Result<RegressionModel> {
        let cfg = cfg_base.with_tau(Some(tau));
        cfg.validate()?;
        let gs = match &em_fits {
            Some(fits) => suite
                .sets
                .par_iter()
                .zip(fits)
                .map(|(s, f)| gscore_from_fit(gmm_split(s.scores(), f, tau)?, cfg.distance))
                .collect::<Result<Vec<_>>>()?,
            None => suite_gscores(suite, val, &cfg)?,
        };
        build_model(suite, val, &cfg, target, &truths, &gs)
    };
    let searched = search_tau(|tau| match eval(tau) {
        Ok(m) => Some(m.fit.train_loss),
        Err(e) => {
            if matches!(e, Error::Config(_) | Error::InvalidInput(_)) && first_err.is_none() {
                first_err = Some(e);
            }
            None
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let (tau, _, scan) = searched
        .ok_or_else(|| Error::TuningFailed("no tau produced a usable regression".into()))?;
    Ok(TuneResult {
        tau: Some(tau),
        model: eval(tau)?,
        scan,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub gscore: f64,
    pub degenerate: bool,
    /// Fraction scale, clamped to [0,1].
    pub value: f64,
}

pub fn predict(
    model: &RegressionModel,
    set: &ScoreSet,
    val: Option<&GaussianParams>,
) -> Result<Prediction> {
    let val = val.or(model.val.as_ref());
    if model.cfg.needs_val() && val.is_none() {
        return Err(Error::Config(
            "model was trained with ude; validation parameters required".into(),
        ));
    }
    let g = compute_gscore(&set.unlabeled(), val, &model.cfg)?;
    Ok(Prediction {
        gscore: g.value,
        degenerate: g.degenerate,
        value: model.fit.apply(g.value).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub id: String,
    pub gscore: f64,
    pub degenerate: bool,
    /// Percent scale.
    pub truth_pct: Option<f64>,
    /// Percent scale.
    pub predicted_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: TargetMetric,
    pub records: Vec<ReportRecord>,
    /// Percent scale; present when truths are.
    pub rmse_pct: Option<f64>,
    /// Correlations between gscore and truth; `None` when undefined.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl MetricReport {
    /// Builds summaries from the records as stored.
    pub fn from_records(metric: TargetMetric, records: Vec<ReportRecord>) -> Result<Self> {
        let labeled: Vec<&ReportRecord> =
            records.iter().filter(|r| r.truth_pct.is_some()).collect();
        let (mut rmse_pct, mut pr, mut sr) = (None, None, None);
        if !labeled.is_empty() && labeled.len() == records.len() {
            let truth: Vec<f64> = labeled.iter().map(|r| r.truth_pct.unwrap()).collect();
            let pred: Vec<f64> = labeled.iter().map(|r| r.predicted_pct).collect();
            let gs: Vec<f64> = labeled.iter().map(|r| r.gscore).collect();
            rmse_pct = Some(rmse(&pred, &truth)?);
            pr = pearson(&gs, &truth).ok();
            sr = spearman(&gs, &truth).ok();
        }
        Ok(Self {
            metric,
            records,
            rmse_pct,
            pearson: pr,
            spearman: sr,
        })
    }
}

/// Predicts every set of a labeled test suite and compares to its truth.
pub fn evaluate_suite(
    model: &RegressionModel,
    test: &MetaSuite,
    val: Option<&GaussianParams>,
) -> Result<MetricReport> {
    let train: HashSet<&str> = model.train_ids.iter().map(String::as_str).collect();
    let overlap: Vec<&str> = test.ids().filter(|id| train.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Leakage(format!(
            "{} test set(s) also used for training, e.g. '{}'",
            overlap.len(),
            overlap[0]
        )));
    }
    if !test.is_labeled() {
        return Err(Error::UnsupportedMetric(
            "evaluation needs a labeled test suite".into(),
        ));
    }
    let records = test
        .sets
        .par_iter()
        .map(|s| {
            let p = predict(model, s, val)?;
            Ok(ReportRecord {
                id: s.id().to_string(),
                gscore: p.gscore,
                degenerate: p.degenerate,
                truth_pct: Some(model.target.evaluate(s)? * 100.0),
                predicted_pct: p.value * 100.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_records(model.target, records)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

impl RegressionModel {
    /// `key = value` text, one entry per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("format_version", MODEL_FORMAT_VERSION.to_string());
        kv("method", self.cfg.method.to_string());
        kv("distance", self.cfg.distance.to_string());
        kv("tau", self.cfg.tau.map_or("none".into(), fmt_f64));
        kv("seed", self.cfg.seed.to_string());
        kv("theta1", fmt_f64(self.fit.theta1));
        kv("theta0", fmt_f64(self.fit.theta0));
        kv("target_metric", self.target.kind().to_string());
        kv("tpr_q", self.target.tpr_q().map_or("none".into(), fmt_f64));
        kv("train_loss", fmt_f64(self.fit.train_loss));
        kv("n_train", self.n_train.to_string());
        kv("sigma_floor", fmt_f64(SIGMA_FLOOR));
        kv("val_mu", self.val.map_or("none".into(), |v| fmt_f64(v.mu)));
        kv(
            "val_sigma",
            self.val.map_or("none".into(), |v| fmt_f64(v.sigma)),
        );
        kv("train_ids", self.train_ids.join(","));
        s
    }

    /// Parses [`RegressionModel::to_text`] output. `origin` names the source
    /// in error messages.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut entries: Vec<(u64, &str, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| {
                Error::parse(
                    origin,
                    line_no,
                    format!("expected 'key = value', got '{t}'"),
                )
            })?;
            entries.push((line_no, k.trim(), v.trim()));
        }
        let get = |key: &str| -> Result<(u64, &str)> {
            entries
                .iter()
                .find(|e| e.1 == key)
                .map(|e| (e.0, e.2))
                .ok_or_else(|| Error::parse(origin, 0, format!("missing key '{key}'")))
        };
        let (_, version) = get("format_version")?;
        if version != MODEL_FORMAT_VERSION.to_string() {
            return Err(Error::FormatVersion {
                found: version.to_string(),
                expected: MODEL_FORMAT_VERSION,
            });
        }
        const KEYS: [&str; 15] = [
            "format_version",
            "method",
            "distance",
            "tau",
            "seed",
            "theta1",
            "theta0",
            "target_metric",
            "tpr_q",
            "train_loss",
            "n_train",
            "sigma_floor",
            "val_mu",
            "val_sigma",
            "train_ids",
        ];
        let mut seen = HashSet::new();
        for (line, k, _) in &entries {
            if !KEYS.contains(k) {
                return Err(Error::parse(origin, *line, format!("unknown key '{k}'")));
            }
            if !seen.insert(*k) {
                return Err(Error::parse(origin, *line, format!("duplicate key '{k}'")));
            }
        }
        let num = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(origin, line, format!("{key}: invalid number '{v}'")))
        };
        let opt_num = |key: &str| -> Result<Option<f64>> {
            match get(key)?.1 {
                "none" => Ok(None),
                _ => num(key).map(Some),
            }
        };
        let wrap = |key: &str, e: Error| -> Error {
            let line = get(key).map(|x| x.0).unwrap_or(0);
            Error::parse(origin, line, format!("{key}: {e}"))
        };
        let method: FitMethod = get("method")?.1.parse().map_err(|e| wrap("method", e))?;
        let distance: Distance = get("distance")?
            .1
            .parse()
            .map_err(|e| wrap("distance", e))?;
        let tau = opt_num("tau")?;
        let (seed_line, seed) = get("seed")?;
        let seed: u64 = seed.parse().map_err(|_| {
            Error::parse(origin, seed_line, format!("seed: invalid integer '{seed}'"))
        })?;
        let target = TargetMetric::from_parts(get("target_metric")?.1, opt_num("tpr_q")?)
            .map_err(|e| wrap("target_metric", e))?;
        let (n_line, n_train) = get("n_train")?;
        let n_train: usize = n_train.parse().map_err(|_| {
            Error::parse(
                origin,
                n_line,
                format!("n_train: invalid integer '{n_train}'"),
            )
        })?;
        let floor = num("sigma_floor")?;
        if floor != SIGMA_FLOOR {
            return Err(wrap(
                "sigma_floor",
                Error::Config(format!(
                    "model uses sigma floor {floor}, this build uses {SIGMA_FLOOR}"
                )),
            ));
        }
        let val = match (opt_num("val_mu")?, opt_num("val_sigma")?) {
            (Some(mu), Some(sigma)) => {
                Some(GaussianParams::new(mu, sigma).map_err(|e| wrap("val_sigma", e))?)
            }
            (None, None) => None,
            _ => {
                return Err(wrap(
                    "val_mu",
                    Error::Config("val_mu and val_sigma must both be set".into()),
                ))
            }
        };
        let ids = get("train_ids")?.1;
        let train_ids: Vec<String> = if ids.is_empty() {
            Vec::new()
        } else {
            ids.split(',').map(|s| s.trim().to_string()).collect()
        };
        let cfg = GscoreConfig {
            method,
            distance,
            tau,
            seed,
        };
        cfg.validate().map_err(|e| wrap("method", e))?;
        let model = RegressionModel {
            fit: LinearFit {
                theta1: num("theta1")?,
                theta0: num("theta0")?,
                train_loss: num("train_loss")?,
            },
            cfg,
            target,
            n_train,
            train_ids,
            val,
        };
        if model.n_train < 2 || model.fit.train_loss < 0.0 {
            return Err(wrap(
                "n_train",
                Error::Config("n_train must be >= 2 and train_loss >= 0".into()),
            ));
        }
        Ok(model)
    }
}
