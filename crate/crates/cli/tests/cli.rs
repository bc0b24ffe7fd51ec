use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gflup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gflup"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gflup(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SIM: &str = "n_train = 60
split_seed = 4
marker_seed = 5

[simulation]
n_g = 90
r = 2
n_snp = 300
blocks = 3
feats_per_block = 6
n_signal_factors = 2
h2_y = 0.5
seed = 6
";

fn simulated(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sim.toml");
    fs::write(&cfg, SIM).unwrap();
    let data = dir.join("data");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&data)]);
    data
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_writes_all_tables_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path());
    for f in [
        "pheno.tsv",
        "train.tsv",
        "test.tsv",
        "markers.tsv",
        "truth.tsv",
    ] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(data_rows(&a.join("pheno.tsv")), 180);
    assert_eq!(data_rows(&a.join("train.tsv")), 120);
    assert_eq!(data_rows(&a.join("test.tsv")), 60);
    assert_eq!(data_rows(&a.join("markers.tsv")), 90);
    assert_eq!(data_rows(&a.join("truth.tsv")), 90);

    let b = dir.path().join("again");
    ok(&[
        "simulate",
        "--config",
        p(&dir.path().join("sim.toml")),
        "--out",
        p(&b),
    ]);
    for f in ["pheno.tsv", "train.tsv", "markers.tsv", "truth.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn fit_and_predict_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let model = dir.path().join("model");
    let run = dir.path().join("run.toml");
    fs::write(
        &run,
        "tau = 0.95\nk_folds = 5\nseed = 3\ntest_standardization = \"training\"\n",
    )
    .unwrap();
    let summary = ok(&[
        "fit",
        "--pheno",
        p(&data.join("train.tsv")),
        "--markers",
        p(&data.join("markers.tsv")),
        "--config",
        p(&run),
        "--out",
        p(&model),
    ]);
    assert!(
        summary.contains("60 training genotypes, 30 test genotypes"),
        "{summary}"
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model.join("model.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["test_standardization"], "training");
    assert_eq!(json["config"]["seed"], 3);

    for scenario in ["univariate", "cv1", "cv2"] {
        let out = dir.path().join(format!("{scenario}.tsv"));
        let stdout = ok(&[
            "predict",
            "--model",
            p(&model),
            "--scenario",
            scenario,
            "--test-pheno",
            p(&data.join("test.tsv")),
            "--truth",
            p(&data.join("truth.tsv")),
            "--out",
            p(&out),
        ]);
        assert!(stdout.contains("accuracy"), "{stdout}");
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "genotype\tprediction\tscenario");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 30);
        for row in rows {
            let f: Vec<&str> = row.split('\t').collect();
            assert!(f[1].parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn cv2_without_test_phenotypes_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let model = dir.path().join("model");
    ok(&[
        "fit",
        "--pheno",
        p(&data.join("train.tsv")),
        "--markers",
        p(&data.join("markers.tsv")),
        "--out",
        p(&model),
    ]);
    let out = gflup(&[
        "predict",
        "--model",
        p(&model),
        "--scenario",
        "cv2",
        "--out",
        p(&dir.path().join("x.tsv")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let run = dir.path().join("run.toml");
    fs::write(&run, "tau = 0.9\nfolds = 5\n").unwrap();
    let out = gflup(&[
        "fit",
        "--pheno",
        p(&data.join("train.tsv")),
        "--markers",
        p(&data.join("markers.tsv")),
        "--config",
        p(&run),
        "--out",
        p(&dir.path().join("m")),
    ]);
    assert!(!out.status.success());
    let bad_sim = dir.path().join("bad.toml");
    fs::write(&bad_sim, "[simulation]\nheritability = 0.5\n").unwrap();
    assert!(!gflup(&[
        "simulate",
        "--config",
        p(&bad_sim),
        "--out",
        p(&dir.path().join("d"))
    ])
    .status
    .success());
}

#[test]
fn benchmark_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "methods = [\"univariate\", \"gfblup\"]
scenarios = [\"cv1\", \"cv2\"]
n_train = 50
seed = 8

[[cell]]
n_g = 70
n_snp = 200
blocks = 2
feats_per_block = 5
n_signal_factors = 1
h2_s = 0.9
h2_y = 0.5
communality = 0.8

[[cell]]
n_g = 70
n_snp = 200
blocks = 2
feats_per_block = 5
n_signal_factors = 1
h2_s = 0.7
h2_y = 0.3
communality = 0.5
",
    )
    .unwrap();
    let report = dir.path().join("report.tsv");
    ok(&[
        "benchmark",
        "--grid",
        p(&grid),
        "--replicates",
        "2",
        "--out",
        p(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "h2_s\th2_y\tcommunality\tmethod\tscenario\tmean_acc\tsd_acc\tn_reps"
    );
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    assert!(lines[1..].iter().all(|l| l.ends_with("\t2")));
    assert!(lines[1].starts_with("0.9\t0.5\t0.8\tunivariate\tcv1\t"));
}
