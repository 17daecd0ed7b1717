use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[experiment]
classes = block, cone
train_sizes = 8
test_per_class = 3
partitions = 2
sigmas = 0, 1

[synth]
shapes = block, cone
counts = 14, 14

[patch]
threshold_percentile = 80
min_survive_fraction = 0.25

[dfdl]
atoms_per_class = 16
outer_iters = 3

[cv]
trials = 3
xi_min = 0.01
xi_max = 0.1
";

fn pcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcs"))
        .args(args)
        .env("PCS_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small config pointing at `<dir>/data` and returns its path.
fn setup(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.cfg");
    let text = format!(
        "[paths]\ndataset = {}\n\n{SMALL}",
        dir.join("data").display()
    );
    fs::write(&cfg, text).unwrap();
    let out = pcs(&["synth", "--config", s(&cfg)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    cfg
}

#[test]
fn synth_train_classify_screen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let manifest = fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 28);

    let model_dir = dir.path().join("model");
    let out = pcs(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&model_dir),
        "--jobs",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = model_dir.join("model.pcsd");
    assert!(model.exists());
    assert!(model_dir.join("model.pcsd.cfg").exists());

    // A training image of the first partition.
    let split = fs::read_to_string(model_dir.join("model.pcsd.partition.csv")).unwrap();
    let first_train = split
        .lines()
        .find(|l| l.starts_with("cone,train,"))
        .and_then(|l| l.rsplit(',').next())
        .map(|i| i.parse::<usize>().unwrap())
        .unwrap();
    let image = dir
        .path()
        .join(format!("data/cone/narrow/cone_{first_train:03}.pgm"));
    let out = pcs(&[
        "classify",
        "--config",
        s(&cfg),
        "--model",
        s(&model),
        s(&image),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "image,predicted,ll_block,ll_cone,dropped"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "cone");

    let out = pcs(&[
        "screen",
        "--config",
        s(&cfg),
        "--model",
        s(&model),
        s(&image),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .next()
        .unwrap()
        .ends_with(",ks_stat,ks_threshold,flagged"));
}

#[test]
fn evaluate_rows_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = pcs(&[
            "evaluate",
            "--config",
            s(&cfg),
            "--out",
            s(&out_dir),
            "--seed",
            "3",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(out_dir.join("aggregate.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    // partitions × sizes × regimes × sigmas
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 2);
    assert!(dir.path().join("a/cells/n8_narrow_s1_p1_src.csv").exists());
    assert!(dir.path().join("a/partitions/n8_narrow_p0.csv").exists());
}

#[test]
fn bench_reports_three_timings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = pcs(&[
        "bench",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("b")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let steps: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(steps, ["train", "classify-1-patch", "classify-full-image"]);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[cv]\nxl = 3\n").unwrap();
    let out = pcs(&["evaluate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("xl"), "{err}");

    assert_eq!(pcs(&["frobnicate"]).status.code(), Some(1));

    let junk = dir.path().join("junk.pgm");
    fs::write(&junk, b"not an image").unwrap();
    let cfg = dir.path().join("ok.cfg");
    fs::write(&cfg, "[paths]\nmodel = missing.pcsd\n").unwrap();
    assert_eq!(
        pcs(&["classify", "--config", s(&cfg), s(&junk)])
            .status
            .code(),
        Some(1)
    );

    // A runtime failure: the dataset directory has no manifest.
    let cfg = dir.path().join("nodata.cfg");
    fs::write(
        &cfg,
        format!(
            "[paths]\ndataset = {}\n",
            dir.path().join("nowhere").display()
        ),
    )
    .unwrap();
    assert_eq!(pcs(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}
