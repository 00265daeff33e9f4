//! On-disk formats.
//!
//! | file        | layout                                                             |
//! |-------------|--------------------------------------------------------------------|
//! | score file  | CSV `sample_id,score,label`; label in {ind, ood, unknown}          |
//! | logit file  | CSV `sample_id,label,l_0,...,l_{C-1}`                              |
//! | manifest    | CSV, one synthetic set per row, `format_version` first column      |
//! | model       | `key = value` lines (see [`RegressionModel::to_text`])             |
//! | report      | CSV of per-set rows plus one summary row, percent scale            |
//! | predictions | CSV of per-set predictions, percent scale                          |
//! | scatter     | CSV of (gscore, truth) pairs from a report, percent scale          |
//! | sweep       | CSV of per-cell correlations for ratio/size grids                  |
//!
//! Score and logit files are identified by their exact header. Scores use
//! the shortest decimal that round-trips to the same `f64`. Scores in
//! score files follow the "higher means IND" orientation; ENERGY scores are
//! stored as `+T * logsumexp(l / T)`.
//!
//! Every writer goes through [`atomic_write`]: the bytes land in a temporary
//! file in the target directory that is then renamed over the destination.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::TargetMetric;
use crate::regress::{MetricReport, RegressionModel, ReportRecord};
use crate::score::{Label, LogitRow, ScoreSet};
use crate::synth::{Family, Split, SynthSpec};

pub const FORMAT_VERSION: u32 = 1;

pub const SCORE_HEADER: &str = "sample_id,score,label";
pub const MANIFEST_HEADER: &str =
    "format_version,id,family,mu_ind,sigma_ind,mu_ood,sigma_ood,n_ind,n_ood,seed,split";
pub const REPORT_HEADER: &str = "format_version,kind,set_id,metric,gscore,degenerate,truth_pct,predicted_pct,rmse_pct,pearson,spearman";
pub const PREDICTIONS_HEADER: &str = "format_version,set_id,metric,gscore,degenerate,predicted_pct";
pub const SCATTER_HEADER: &str = "format_version,set_id,metric,gscore,truth_pct";
pub const SWEEP_HEADER: &str = "format_version,axis,value,n_sets,tau,pearson,spearman";

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// CSV rows with their 1-based line numbers; the first row is the header.
fn csv_rows(text: &str, origin: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(origin, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn expect_header<'a>(
    rows: &'a [(u64, Vec<String>)],
    expected: &str,
    origin: &Path,
) -> Result<&'a [(u64, Vec<String>)]> {
    let (first, rest) = rows
        .split_first()
        .ok_or_else(|| Error::parse(origin, 1, format!("missing header '{expected}'")))?;
    if first.1.join(",") != expected {
        return Err(Error::parse(
            origin,
            first.0,
            format!("expected header '{expected}', got '{}'", first.1.join(",")),
        ));
    }
    Ok(rest)
}

fn check_width(row: &(u64, Vec<String>), width: usize, origin: &Path) -> Result<()> {
    if row.1.len() != width {
        return Err(Error::parse(
            origin,
            row.0,
            format!("expected {width} fields, got {}", row.1.len()),
        ));
    }
    Ok(())
}

fn parse_f64(s: &str, what: &str, line: u64, origin: &Path) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::parse(
            origin,
            line,
            format!("{what} must be finite, got '{s}'"),
        )),
        Err(_) => Err(Error::parse(origin, line, format!("invalid {what} '{s}'"))),
    }
}

fn parse_opt_f64(s: &str, what: &str, line: u64, origin: &Path) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what, line, origin).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, what: &str, line: u64, origin: &Path) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(origin, line, format!("invalid {what} '{s}'")))
}

fn check_version(s: &str, line: u64, origin: &Path) -> Result<()> {
    let v: u32 = parse_int(s, "format_version", line, origin)?;
    if v != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: s.to_string(),
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn parse_label(s: &str, line: u64, origin: &Path) -> Result<Option<Label>> {
    if s.eq_ignore_ascii_case("unknown") {
        return Ok(None);
    }
    s.parse::<Label>().map(Some).map_err(|_| {
        Error::parse(
            origin,
            line,
            format!("invalid label '{s}' (ind, ood, unknown)"),
        )
    })
}

fn check_unique_id<'a>(
    seen: &mut HashSet<&'a str>,
    id: &'a str,
    line: u64,
    origin: &Path,
) -> Result<()> {
    if id.is_empty() {
        return Err(Error::parse(origin, line, "empty sample_id"));
    }
    if !seen.insert(id) {
        return Err(Error::parse(
            origin,
            line,
            format!("duplicate sample_id '{id}'"),
        ));
    }
    Ok(())
}

fn csv_bytes(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header.split(','))
        .and_then(|_| {
            for r in rows {
                w.write_record(&r)?;
            }
            Ok(())
        })
        .map_err(|e| Error::InvalidInput(format!("csv encoding: {e}")))?;
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv encoding: {e}")))
}

/// Parses score-file text. `id` becomes the set id.
pub fn parse_score_text(text: &str, id: &str, origin: &Path) -> Result<ScoreSet> {
    let rows = csv_rows(text, origin)?;
    let body = expect_header(&rows, SCORE_HEADER, origin)?;
    if body.is_empty() {
        return Err(Error::parse(origin, 2, "no samples"));
    }
    let mut seen = HashSet::new();
    let mut scores = Vec::with_capacity(body.len());
    let mut labels = Vec::with_capacity(body.len());
    for row in body {
        check_width(row, 3, origin)?;
        check_unique_id(&mut seen, &row.1[0], row.0, origin)?;
        scores.push(parse_f64(&row.1[1], "score", row.0, origin)?);
        labels.push((row.0, parse_label(&row.1[2], row.0, origin)?));
    }
    let known = labels.iter().filter(|l| l.1.is_some()).count();
    if known == 0 {
        return ScoreSet::new(id, scores);
    }
    if let Some((line, _)) = labels.iter().find(|l| l.1.is_none()) {
        return Err(Error::parse(
            origin,
            *line,
            "label 'unknown' mixed with ind/ood labels",
        ));
    }
    ScoreSet::labeled(
        id,
        scores,
        labels.into_iter().map(|l| l.1.unwrap()).collect(),
    )
}

/// Reads a score file; the set id is the file stem.
pub fn parse_score_file(path: &Path) -> Result<ScoreSet> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scores")
        .to_string();
    parse_score_text(&read_text(path)?, &id, path)
}

pub fn score_text(set: &ScoreSet) -> Result<Vec<u8>> {
    let rows = set.scores().iter().enumerate().map(|(i, &s)| {
        let label = set.labels().map_or("unknown", |l| l[i].as_str());
        vec![i.to_string(), fmt_f64(s), label.to_string()]
    });
    csv_bytes(SCORE_HEADER, rows)
}

/// Sample ids are written as row indices.
pub fn write_score_file(set: &ScoreSet, path: &Path) -> Result<()> {
    atomic_write(path, &score_text(set)?)
}

/// Score file with caller-chosen sample ids.
pub fn write_sample_scores(rows: &[(String, f64, Option<Label>)], path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for (id, s, _) in rows {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate sample id '{id}'")));
        }
        if !s.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sample '{id}': non-finite score"
            )));
        }
    }
    let known = rows.iter().filter(|r| r.2.is_some()).count();
    if known != 0 && known != rows.len() {
        return Err(Error::InvalidInput(
            "labels must be all known or all unknown".into(),
        ));
    }
    let body = rows.iter().map(|(id, s, l)| {
        vec![
            id.clone(),
            fmt_f64(*s),
            l.map_or("unknown", Label::as_str).to_string(),
        ]
    });
    atomic_write(path, &csv_bytes(SCORE_HEADER, body)?)
}

pub fn parse_logit_text(text: &str, origin: &Path) -> Result<Vec<LogitRow>> {
    let rows = csv_rows(text, origin)?;
    let (head, body) = rows
        .split_first()
        .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let c = head.1.len().saturating_sub(2);
    let expected: Vec<String> = ["sample_id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..c).map(|i| format!("l_{i}")))
        .collect();
    if c < 2 || head.1 != expected {
        return Err(Error::parse(
            origin,
            head.0,
            format!(
                "expected header 'sample_id,label,l_0,...,l_{{C-1}}' with C >= 2, got '{}'",
                head.1.join(",")
            ),
        ));
    }
    let mut seen = HashSet::new();
    body.iter()
        .map(|row| {
            check_width(row, c + 2, origin)?;
            check_unique_id(&mut seen, &row.1[0], row.0, origin)?;
            let label = parse_label(&row.1[1], row.0, origin)?;
            let logits = row.1[2..]
                .iter()
                .map(|v| parse_f64(v, "logit", row.0, origin))
                .collect::<Result<Vec<_>>>()?;
            LogitRow::new(row.1[0].clone(), logits, label)
                .map_err(|e| Error::parse(origin, row.0, e.to_string()))
        })
        .collect()
}

pub fn parse_logit_file(path: &Path) -> Result<Vec<LogitRow>> {
    parse_logit_text(&read_text(path)?, path)
}

pub fn write_logit_file(rows: &[LogitRow], path: &Path) -> Result<()> {
    let c = rows.first().map_or(2, |r| r.logits.len());
    if rows.iter().any(|r| r.logits.len() != c) {
        return Err(Error::InvalidInput(
            "logit rows differ in class count".into(),
        ));
    }
    let header: Vec<String> = ["sample_id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..c).map(|i| format!("l_{i}")))
        .collect();
    let body = rows.iter().map(|r| {
        let mut v = vec![
            r.sample_id.clone(),
            r.label.map_or("unknown", Label::as_str).to_string(),
        ];
        v.extend(r.logits.iter().map(|&l| fmt_f64(l)));
        v
    });
    atomic_write(path, &csv_bytes(&header.join(","), body)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub spec: SynthSpec,
    pub split: Split,
}

pub fn manifest_text(rows: &[ManifestRow]) -> Result<Vec<u8>> {
    csv_bytes(
        MANIFEST_HEADER,
        rows.iter().map(|r| {
            let s = &r.spec;
            vec![
                FORMAT_VERSION.to_string(),
                s.id.clone(),
                s.family.to_string(),
                fmt_f64(s.mu_ind),
                fmt_f64(s.sigma_ind),
                fmt_f64(s.mu_ood),
                fmt_f64(s.sigma_ood),
                s.n_ind.to_string(),
                s.n_ood.to_string(),
                s.seed.to_string(),
                r.split.as_str().to_string(),
            ]
        }),
    )
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    atomic_write(path, &manifest_text(rows)?)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = read_text(path)?;
    let rows = csv_rows(&text, path)?;
    let body = expect_header(&rows, MANIFEST_HEADER, path)?;
    let mut ids = HashSet::new();
    body.iter()
        .map(|row| {
            check_width(row, 11, path)?;
            let (line, f) = (row.0, &row.1);
            check_version(&f[0], line, path)?;
            if !ids.insert(f[1].clone()) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("duplicate set id '{}'", f[1]),
                ));
            }
            let family: Family = f[2]
                .parse()
                .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
            let split: Split = f[10]
                .parse()
                .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
            let spec = SynthSpec {
                id: f[1].clone(),
                family,
                mu_ind: parse_f64(&f[3], "mu_ind", line, path)?,
                sigma_ind: parse_f64(&f[4], "sigma_ind", line, path)?,
                mu_ood: parse_f64(&f[5], "mu_ood", line, path)?,
                sigma_ood: parse_f64(&f[6], "sigma_ood", line, path)?,
                n_ind: parse_int(&f[7], "n_ind", line, path)?,
                n_ood: parse_int(&f[8], "n_ood", line, path)?,
                seed: parse_int(&f[9], "seed", line, path)?,
            };
            spec.validate()
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            Ok(ManifestRow { spec, split })
        })
        .collect()
}

pub fn write_model(model: &RegressionModel, path: &Path) -> Result<()> {
    atomic_write(path, model.to_text().as_bytes())
}

pub fn read_model(path: &Path) -> Result<RegressionModel> {
    RegressionModel::from_text(&read_text(path)?, &path.display().to_string())
}

pub fn report_text(report: &MetricReport) -> Result<Vec<u8>> {
    let v = FORMAT_VERSION.to_string();
    let metric = report.metric.to_string();
    let mut rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                v.clone(),
                "set".into(),
                r.id.clone(),
                metric.clone(),
                fmt_f64(r.gscore),
                r.degenerate.to_string(),
                fmt_opt(r.truth_pct),
                fmt_f64(r.predicted_pct),
                String::new(),
                String::new(),
                String::new(),
            ]
        })
        .collect();
    rows.push(vec![
        v,
        "summary".into(),
        String::new(),
        metric,
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt_opt(report.rmse_pct),
        fmt_opt(report.pearson),
        fmt_opt(report.spearman),
    ]);
    csv_bytes(REPORT_HEADER, rows)
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    atomic_write(path, &report_text(report)?)
}

/// Reads a report, keeping the stored summary values as written.
pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = read_text(path)?;
    let rows = csv_rows(&text, path)?;
    let body = expect_header(&rows, REPORT_HEADER, path)?;
    let mut records = Vec::new();
    type Summary = (TargetMetric, Option<f64>, Option<f64>, Option<f64>);
    let mut summary: Option<Summary> = None;
    for row in body {
        check_width(row, 11, path)?;
        let (line, f) = (row.0, &row.1);
        check_version(&f[0], line, path)?;
        let metric: TargetMetric = f[3]
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        match f[1].as_str() {
            "set" => records.push((
                metric,
                ReportRecord {
                    id: f[2].clone(),
                    gscore: parse_f64(&f[4], "gscore", line, path)?,
                    degenerate: parse_int(&f[5], "degenerate", line, path)?,
                    truth_pct: parse_opt_f64(&f[6], "truth_pct", line, path)?,
                    predicted_pct: parse_f64(&f[7], "predicted_pct", line, path)?,
                },
            )),
            "summary" if summary.is_none() => {
                summary = Some((
                    metric,
                    parse_opt_f64(&f[8], "rmse_pct", line, path)?,
                    parse_opt_f64(&f[9], "pearson", line, path)?,
                    parse_opt_f64(&f[10], "spearman", line, path)?,
                ))
            }
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("unexpected row kind '{other}'"),
                ))
            }
        }
    }
    let (metric, rmse_pct, pearson, spearman) =
        summary.ok_or_else(|| Error::parse(path, 0, "missing summary row"))?;
    if records.iter().any(|(m, _)| *m != metric) {
        return Err(Error::parse(path, 0, "rows disagree on the metric"));
    }
    Ok(MetricReport {
        metric,
        records: records.into_iter().map(|r| r.1).collect(),
        rmse_pct,
        pearson,
        spearman,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub set_id: String,
    pub metric: TargetMetric,
    pub gscore: f64,
    pub degenerate: bool,
    pub predicted_pct: f64,
}

pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            FORMAT_VERSION.to_string(),
            r.set_id.clone(),
            r.metric.to_string(),
            fmt_f64(r.gscore),
            r.degenerate.to_string(),
            fmt_f64(r.predicted_pct),
        ]
    });
    atomic_write(path, &csv_bytes(PREDICTIONS_HEADER, body)?)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = read_text(path)?;
    let rows = csv_rows(&text, path)?;
    let body = expect_header(&rows, PREDICTIONS_HEADER, path)?;
    body.iter()
        .map(|row| {
            check_width(row, 6, path)?;
            let (line, f) = (row.0, &row.1);
            check_version(&f[0], line, path)?;
            Ok(PredictionRow {
                set_id: f[1].clone(),
                metric: f[2]
                    .parse()
                    .map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
                gscore: parse_f64(&f[3], "gscore", line, path)?,
                degenerate: parse_int(&f[4], "degenerate", line, path)?,
                predicted_pct: parse_f64(&f[5], "predicted_pct", line, path)?,
            })
        })
        .collect()
}

/// (Gscore, truth) scatter data for plotting.
pub fn write_scatter(report: &MetricReport, path: &Path) -> Result<()> {
    let metric = report.metric.to_string();
    let body = report
        .records
        .iter()
        .filter_map(|r| r.truth_pct.map(|t| (r, t)))
        .map(|(r, t)| {
            vec![
                FORMAT_VERSION.to_string(),
                r.id.clone(),
                metric.clone(),
                fmt_f64(r.gscore),
                fmt_f64(t),
            ]
        });
    atomic_write(path, &csv_bytes(SCATTER_HEADER, body)?)
}

/// Scatter rows as `(set_id, gscore, truth_pct)`.
pub fn read_scatter(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let text = read_text(path)?;
    let rows = csv_rows(&text, path)?;
    let body = expect_header(&rows, SCATTER_HEADER, path)?;
    body.iter()
        .map(|row| {
            check_width(row, 5, path)?;
            let (line, f) = (row.0, &row.1);
            check_version(&f[0], line, path)?;
            f[2].parse::<TargetMetric>()
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            Ok((
                f[1].clone(),
                parse_f64(&f[3], "gscore", line, path)?,
                parse_f64(&f[4], "truth_pct", line, path)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `ratio` or `size`.
    pub axis: String,
    pub value: String,
    pub n_sets: usize,
    pub tau: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![
            FORMAT_VERSION.to_string(),
            r.axis.clone(),
            r.value.clone(),
            r.n_sets.to_string(),
            fmt_opt(r.tau),
            fmt_opt(r.pearson),
            fmt_opt(r.spearman),
        ]
    });
    atomic_write(path, &csv_bytes(SWEEP_HEADER, body)?)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let text = read_text(path)?;
    let rows = csv_rows(&text, path)?;
    let body = expect_header(&rows, SWEEP_HEADER, path)?;
    body.iter()
        .map(|row| {
            check_width(row, 7, path)?;
            let (line, f) = (row.0, &row.1);
            check_version(&f[0], line, path)?;
            Ok(SweepRow {
                axis: f[1].clone(),
                value: f[2].clone(),
                n_sets: parse_int(&f[3], "n_sets", line, path)?,
                tau: parse_opt_f64(&f[4], "tau", line, path)?,
                pearson: parse_opt_f64(&f[5], "pearson", line, path)?,
                spearman: parse_opt_f64(&f[6], "spearman", line, path)?,
            })
        })
        .collect()
}
