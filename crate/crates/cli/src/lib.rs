//! Command-line workflows around `gscore-core`.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit status. Failures print a single `E_CODE: message` line on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gscore_core::formats::{self, ManifestRow, PredictionRow, SweepRow};
use gscore_core::regress::suite_gscores;
use gscore_core::synth::{
    gen_suite_from_plan, ratio_size_sweep, varied_size_suite, Family, Ratio, SizeMode, Split,
    SweepAxis,
};
use gscore_core::{
    detector_score, evaluate_suite, fit::fit_val_gaussian, pearson, predict, spearman, train,
    tune_tau, Detector, Distance, Error, FitMethod, GaussianParams, GscoreConfig, MetaSuite,
    Result, SuiteSpec, TargetMetric, DEFAULT_ODIN_TEMPERATURE,
};

#[derive(Parser, Debug)]
#[command(
    name = "gscore",
    version,
    about = "Predict OOD detector performance from unlabeled scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test suite: score files, manifest, validation set.
    Synth(SynthArgs),
    /// Turn a logit file into a score file with one detector.
    Score(ScoreArgs),
    /// Fit a regression model on the training split of a manifest.
    Fit(FitArgs),
    /// Predict performance for unlabeled score files.
    Predict(PredictArgs),
    /// Evaluate a model on a labeled split and write a metric report.
    Eval(EvalArgs),
    /// Correlation of Gscore with the metric across ratio and size grids.
    Sweep(SweepArgs),
    /// Scatter data (Gscore, truth) from a metric report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    n_train: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    /// gaussian or logit_normal.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    span_lo: Option<f64>,
    #[arg(long)]
    span_hi: Option<f64>,
    #[arg(long)]
    mu_ind: Option<f64>,
    #[arg(long)]
    sigma_ind: Option<f64>,
    #[arg(long)]
    sigma_ood_min: Option<f64>,
    #[arg(long)]
    sigma_ood_max: Option<f64>,
    /// Draw IND and OOD counts independently instead of 1:1.
    #[arg(long)]
    independent_sizes: bool,
    #[arg(long)]
    size_min: Option<usize>,
    #[arg(long)]
    size_max: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    logits: PathBuf,
    /// msp, odin_t, energy or mls.
    #[arg(long)]
    detector: Detector,
    #[arg(long, default_value_t = DEFAULT_ODIN_TEMPERATURE)]
    temperature: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct GscoreArgs {
    /// kmeans, gmm or ude.
    #[arg(long)]
    method: FitMethod,
    /// l2, kl, kl-rev or wasserstein.
    #[arg(long)]
    distance: Distance,
    /// fpr@tpr:<q> (or fpr95), auroc, de, aupr.
    #[arg(long, default_value = "fpr@tpr:0.95")]
    metric: TargetMetric,
    /// Fixed threshold; tuned on the training suite when omitted.
    #[arg(long)]
    tau: Option<f64>,
    /// Validation score file with known-IND scores (required by ude).
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[command(flatten)]
    g: GscoreArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Overrides the validation Gaussian stored in the model.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    scores: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Manifest whose split forms the 1:1 base suite.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[command(flatten)]
    g: GscoreArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1:100,1:10,1:1,10:1,100:1"
    )]
    ratios: Vec<Ratio>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,500")]
    sizes: Vec<usize>,
    /// Add a cell with independent per-class sizes.
    #[arg(long)]
    varied: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the tool on `argv` (program name first) and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Score(a) => score(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SuiteSpec::default();
    let spec = SuiteSpec {
        seed: a.seed,
        family: a.family.unwrap_or(d.family),
        n_train: a.n_train,
        n_test: a.n_test,
        auroc_span: (
            a.span_lo.unwrap_or(d.auroc_span.0),
            a.span_hi.unwrap_or(d.auroc_span.1),
        ),
        mu_ind: a.mu_ind.unwrap_or(d.mu_ind),
        sigma_ind: a.sigma_ind.unwrap_or(d.sigma_ind),
        sigma_ood_range: (
            a.sigma_ood_min.unwrap_or(d.sigma_ood_range.0),
            a.sigma_ood_max.unwrap_or(d.sigma_ood_range.1),
        ),
        size_mode: if a.independent_sizes {
            SizeMode::Independent
        } else {
            SizeMode::Balanced
        },
        size_range: (
            a.size_min.unwrap_or(d.size_range.0),
            a.size_max.unwrap_or(d.size_range.1),
        ),
        val_size: a.val_size.unwrap_or(d.val_size),
    };
    let plan = spec.plan()?;
    let (train_suite, test_suite) = gen_suite_from_plan(&plan)?;
    create_dir(&a.out)?;
    for set in train_suite.sets().iter().chain(test_suite.sets()) {
        formats::write_score_file(set, &a.out.join(format!("{}.csv", set.id())))?;
    }
    formats::write_score_file(&spec.gen_val()?, &a.out.join("val.csv"))?;
    let rows: Vec<ManifestRow> = plan
        .into_iter()
        .map(|(spec, split)| ManifestRow { spec, split })
        .collect();
    formats::write_manifest(&rows, &a.out.join("manifest.csv"))?;
    println!(
        "wrote {} train and {} test sets to {}",
        train_suite.len(),
        test_suite.len(),
        a.out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let rows = formats::parse_logit_file(&a.logits)?;
    let scored = rows
        .iter()
        .map(|r| {
            Ok((
                r.sample_id.clone(),
                detector_score(r, a.detector, a.temperature)?,
                r.label,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    formats::write_sample_scores(&scored, &a.out)?;
    println!("scored {} samples with {}", scored.len(), a.detector);
    Ok(())
}

/// Score sets of one split, read from `<manifest dir>/<id>.csv`.
fn load_split(manifest: &Path, split: Split) -> Result<MetaSuite> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let sets = formats::read_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == split)
        .map(|r| formats::parse_score_file(&dir.join(format!("{}.csv", r.spec.id))))
        .collect::<Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(Error::Config(format!(
            "{}: no '{}' sets",
            manifest.display(),
            split.as_str()
        )));
    }
    MetaSuite::new(sets)
}

fn load_val(path: Option<&Path>) -> Result<Option<GaussianParams>> {
    path.map(|p| fit_val_gaussian(&formats::parse_score_file(p)?))
        .transpose()
}

impl GscoreArgs {
    fn config(&self) -> GscoreConfig {
        GscoreConfig::new(self.method, self.distance).with_seed(self.seed)
    }

    fn val(&self) -> Result<Option<GaussianParams>> {
        let val = load_val(self.val.as_deref())?;
        if self.method == FitMethod::Ude && val.is_none() {
            return Err(Error::Config("--method ude needs --val".into()));
        }
        Ok(val)
    }

    /// Fixed tau when given, otherwise the tuned one.
    fn model(
        &self,
        suite: &MetaSuite,
        val: Option<&GaussianParams>,
    ) -> Result<gscore_core::RegressionModel> {
        let cfg = self.config();
        match (self.method, self.tau) {
            (FitMethod::Kmeans, Some(_)) => Err(Error::Config("kmeans takes no --tau".into())),
            (_, Some(t)) => train(suite, val, &cfg.with_tau(Some(t)), self.metric),
            (_, None) => Ok(tune_tau(suite, val, &cfg, self.metric)?.model),
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("none".into(), |v| format!("{v:.6}"))
}

fn fit(a: FitArgs) -> Result<()> {
    let suite = load_split(&a.manifest, a.split)?;
    let val = a.g.val()?;
    let model = a.g.model(&suite, val.as_ref())?;
    formats::write_model(&model, &a.out)?;
    println!(
        "{}+{} {}: tau={} theta1={:.6} theta0={:.6} train_loss={:.6e} n_train={}",
        model.cfg.method,
        model.cfg.distance,
        model.target,
        fmt_opt(model.cfg.tau),
        model.fit.theta1,
        model.fit.theta0,
        model.fit.train_loss,
        model.n_train
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = formats::read_model(&a.model)?;
    let val = load_val(a.val.as_deref())?;
    let mut rows = Vec::with_capacity(a.scores.len());
    for path in &a.scores {
        let set = formats::parse_score_file(path)?;
        let p = predict(&model, &set, val.as_ref())?;
        rows.push(PredictionRow {
            set_id: set.id().to_string(),
            metric: model.target,
            gscore: p.gscore,
            degenerate: p.degenerate,
            predicted_pct: p.value * 100.0,
        });
    }
    formats::write_predictions(&rows, &a.out)?;
    for r in &rows {
        println!("{} {} {:.2}", r.set_id, r.metric, r.predicted_pct);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = formats::read_model(&a.model)?;
    let suite = load_split(&a.manifest, a.split)?;
    let val = load_val(a.val.as_deref())?;
    let rep = evaluate_suite(&model, &suite, val.as_ref())?;
    formats::write_report(&rep, &a.out)?;
    println!(
        "{} on {} sets: rmse_pct={} pearson={} spearman={}",
        rep.metric,
        rep.records.len(),
        fmt_opt(rep.rmse_pct),
        fmt_opt(rep.pearson),
        fmt_opt(rep.spearman)
    );
    Ok(())
}

fn correlations(
    suite: &MetaSuite,
    val: Option<&GaussianParams>,
    cfg: &GscoreConfig,
    metric: TargetMetric,
) -> Result<(Option<f64>, Option<f64>)> {
    let gs: Vec<f64> = suite_gscores(suite, val, cfg)?
        .into_iter()
        .map(|g| g.value)
        .collect();
    let truth = suite
        .sets()
        .iter()
        .map(|s| metric.evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    Ok((pearson(&gs, &truth).ok(), spearman(&gs, &truth).ok()))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let base = load_split(&a.manifest, a.split)?;
    let val = a.g.val()?;
    let cfg = a.g.model(&base, val.as_ref())?.cfg;
    let mut cells: Vec<(String, String, MetaSuite)> =
        vec![("base".into(), "full".into(), base.clone())];
    for c in ratio_size_sweep(&base, &a.ratios, &a.sizes, a.g.seed)? {
        let (axis, value) = match c.axis {
            SweepAxis::Ratio(r) => ("ratio", r.to_string()),
            SweepAxis::Size(n) => ("size", n.to_string()),
        };
        cells.push((axis.into(), value, c.suite));
    }
    if a.varied {
        cells.push((
            "varied".into(),
            "independent".into(),
            varied_size_suite(&base, a.g.seed)?,
        ));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (axis, value, suite) in cells {
        let (p, s) = correlations(&suite, val.as_ref(), &cfg, a.g.metric)?;
        println!(
            "{axis}={value}: pearson={} spearman={}",
            fmt_opt(p),
            fmt_opt(s)
        );
        rows.push(SweepRow {
            axis,
            value,
            n_sets: suite.len(),
            tau: cfg.tau,
            pearson: p,
            spearman: s,
        });
    }
    formats::write_sweep(&rows, &a.out)
}

fn report(a: ReportArgs) -> Result<()> {
    let rep = formats::read_report(&a.report)?;
    if rep.records.iter().any(|r| r.truth_pct.is_none()) {
        return Err(Error::UnsupportedMetric(
            "scatter data needs truth values".into(),
        ));
    }
    formats::write_scatter(&rep, &a.out)?;
    println!(
        "{} points, pearson={} spearman={}",
        rep.records.len(),
        fmt_opt(rep.pearson),
        fmt_opt(rep.spearman)
    );
    Ok(())
}
