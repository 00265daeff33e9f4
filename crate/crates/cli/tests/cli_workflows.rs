use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gscore_core::formats::{
    parse_score_file, read_model, read_predictions, read_report, read_scatter, read_sweep,
};
use gscore_core::rmse;

fn gscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gscore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gscore(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: &str) {
    let out = gscore(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("{code}: ")), "{err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_suite(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out",
        p(dir),
        "--seed",
        seed,
        "--n-train",
        "30",
        "--n-test",
        "10",
        "--size-min",
        "200",
        "--size-max",
        "300",
        "--val-size",
        "500",
    ]);
}

#[test]
fn fit_eval_report_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d, "1");
    let (man, val, model) = (
        d.join("manifest.csv"),
        d.join("val.csv"),
        d.join("model.txt"),
    );
    ok(&[
        "fit",
        "--manifest",
        p(&man),
        "--method",
        "ude",
        "--distance",
        "wasserstein",
        "--metric",
        "auroc",
        "--val",
        p(&val),
        "--out",
        p(&model),
    ]);
    let m = read_model(&model).unwrap();
    assert_eq!(m.n_train, 30);
    assert!(m.cfg.tau.is_some());

    let report = d.join("report.csv");
    let stdout = ok(&[
        "eval",
        "--model",
        p(&model),
        "--manifest",
        p(&man),
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("rmse_pct="));
    let rep = read_report(&report).unwrap();
    assert_eq!(rep.records.len(), 10);
    let truth: Vec<f64> = rep.records.iter().map(|r| r.truth_pct.unwrap()).collect();
    let pred: Vec<f64> = rep.records.iter().map(|r| r.predicted_pct).collect();
    assert!((rep.rmse_pct.unwrap() - rmse(&pred, &truth).unwrap()).abs() < 1e-9);

    let scatter = d.join("scatter.csv");
    ok(&["report", "--report", p(&report), "--out", p(&scatter)]);
    assert_eq!(read_scatter(&scatter).unwrap().len(), 10);

    let preds = d.join("pred.csv");
    let a = d.join("test-0000.csv");
    let b = d.join("test-0003.csv");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--out",
        p(&preds),
        p(&a),
        p(&b),
    ]);
    let rows = read_predictions(&preds).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].set_id, "test-0000");
    let by_id = |id: &str| {
        rep.records
            .iter()
            .find(|r| r.id == id)
            .unwrap()
            .predicted_pct
    };
    assert_eq!(rows[0].predicted_pct, by_id("test-0000"));
    assert_eq!(rows[1].predicted_pct, by_id("test-0003"));
}

#[test]
fn commands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_suite(&a, "9");
    small_suite(&b, "9");
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 42);
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n:?}"
        );
    }
    for dir in [&a, &b] {
        let man = dir.join("manifest.csv");
        ok(&[
            "fit",
            "--manifest",
            p(&man),
            "--method",
            "gmm",
            "--distance",
            "kl",
            "--metric",
            "fpr95",
            "--seed",
            "4",
            "--out",
            p(&dir.join("model.txt")),
        ]);
        ok(&[
            "sweep",
            "--manifest",
            p(&man),
            "--method",
            "kmeans",
            "--distance",
            "l2",
            "--ratios",
            "1:5,5:1",
            "--sizes",
            "50",
            "--varied",
            "--seed",
            "2",
            "--out",
            p(&dir.join("sweep.csv")),
        ]);
    }
    assert_eq!(
        fs::read(a.join("model.txt")).unwrap(),
        fs::read(b.join("model.txt")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("sweep.csv")).unwrap(),
        fs::read(b.join("sweep.csv")).unwrap()
    );
    let rows = read_sweep(&a.join("sweep.csv")).unwrap();
    let axes: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| (r.axis.as_str(), r.value.as_str()))
        .collect();
    assert_eq!(
        axes,
        [
            ("base", "full"),
            ("ratio", "1:5"),
            ("ratio", "5:1"),
            ("size", "50"),
            ("varied", "independent")
        ]
    );
}

#[test]
fn msp_on_uniform_logits_is_one_half() {
    let tmp = tempfile::tempdir().unwrap();
    let logits = tmp.path().join("logits.csv");
    fs::write(
        &logits,
        "sample_id,label,l_0,l_1\nx,ind,0.3,0.3\ny,ood,-2,-2\nz,ind,7,7\n",
    )
    .unwrap();
    let out = tmp.path().join("scores.csv");
    ok(&[
        "score",
        "--logits",
        p(&logits),
        "--detector",
        "msp",
        "--out",
        p(&out),
    ]);
    let set = parse_score_file(&out).unwrap();
    assert_eq!(set.scores(), &[0.5, 0.5, 0.5]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("sample_id,score,label\nx,0.5,ind\n"));

    ok(&[
        "score",
        "--logits",
        p(&logits),
        "--detector",
        "energy",
        "--temperature",
        "1",
        "--out",
        p(&out),
    ]);
    let e = parse_score_file(&out).unwrap();
    assert!((e.scores()[0] - (0.3 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn failures_carry_stable_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_suite(d, "2");
    let man = d.join("manifest.csv");
    let model = d.join("model.txt");
    ok(&[
        "fit",
        "--manifest",
        p(&man),
        "--method",
        "kmeans",
        "--distance",
        "l2",
        "--out",
        p(&model),
    ]);

    fails_with(
        &[
            "eval",
            "--model",
            p(&model),
            "--manifest",
            p(&man),
            "--split",
            "train",
            "--out",
            p(&d.join("r.csv")),
        ],
        "E_LEAKAGE",
    );

    let bumped = d.join("future.txt");
    let text = fs::read_to_string(&model)
        .unwrap()
        .replace("format_version = 1", "format_version = 2");
    fs::write(&bumped, text).unwrap();
    fails_with(
        &[
            "predict",
            "--model",
            p(&bumped),
            "--out",
            p(&d.join("p.csv")),
            p(&d.join("test-0000.csv")),
        ],
        "E_FORMAT_VERSION",
    );

    let bad = d.join("bad.csv");
    fs::write(&bad, "sample_id,score,label\na,0.1,ind\nb,abc,ood\n").unwrap();
    let out = gscore(&[
        "predict",
        "--model",
        p(&model),
        "--out",
        p(&d.join("p.csv")),
        p(&bad),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.starts_with("E_PARSE: ") && err.contains("line 3"),
        "{err}"
    );

    fails_with(
        &[
            "fit",
            "--manifest",
            p(&man),
            "--method",
            "ude",
            "--distance",
            "l2",
            "--out",
            p(&model),
        ],
        "E_CONFIG",
    );
    fails_with(
        &[
            "fit",
            "--manifest",
            p(&man),
            "--method",
            "kmeans",
            "--distance",
            "kl",
            "--out",
            p(&model),
        ],
        "E_CONFIG",
    );
    fails_with(&["frobnicate"], "E_USAGE");
    fails_with(&["fit", "--manifest", p(&man)], "E_USAGE");
    fails_with(
        &[
            "predict",
            "--model",
            p(&d.join("missing.txt")),
            "--out",
            "x",
            p(&bad),
        ],
        "E_IO",
    );
}
