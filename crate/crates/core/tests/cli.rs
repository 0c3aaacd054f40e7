use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "scenario.name = restricted-rotation
scenario.n_train = 300
scenario.n_val = 200
scenario.n_prior = 200
scenario.n_representative = 300
bound.n_models = 200
opt.steps = 150
";

fn eqpac(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqpac")).current_dir(dir).args(args).output().unwrap()
}

fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), config).unwrap();
    dir
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().map(|l| l.split(',').map(String::from).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

#[test]
fn kl_demo_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(eqpac(dir.path(), &["--out", "a", "kl-demo"]).status.code(), Some(0));
    let csv = read(dir.path(), "a/kl_demo.csv");
    assert!(csv.lines().nth(1).unwrap().starts_with("averaging,5.0000000000000000e-1,"));
    assert_eq!(eqpac(dir.path(), &["--out", "b", "kl-demo", "--projection", "identity"]).status.code(), Some(0));
    assert_eq!(eqpac(dir.path(), &["--out", "c", "kl-demo", "--projection", "1,1;0,1"]).status.code(), Some(2));
    assert_eq!(eqpac(dir.path(), &["--out", "d", "kl-demo", "--projection", "1,0"]).status.code(), Some(2));
    assert_eq!(eqpac(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn corrupted_group_fails_the_axioms_check() {
    let dir = tempfile::tempdir().unwrap();
    let clean = eqpac(dir.path(), &["--out", "ok", "axioms-check"]);
    assert_eq!(clean.status.code(), Some(0));
    let out = eqpac(dir.path(), &["--out", "bad", "axioms-check", "--inject-corrupt-group"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("group-axioms"));
    let (header, body) = rows(&read(dir.path(), "bad/axioms.csv"));
    let status = column(&header, "status");
    assert!(body.iter().any(|r| r[0] == "group-axioms" && r[status] == "fail"));
}

#[test]
fn gen_data_is_deterministic_and_canonical() {
    let dir = workspace(SMALL);
    for out in ["a", "b"] {
        assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "--seed", "3", "--out", out, "gen-data"]).status.code(), Some(0));
    }
    for file in ["train.csv", "val.csv", "prior.csv", "representative.csv", "datasets.csv"] {
        assert_eq!(read(dir.path(), &format!("a/{file}")), read(dir.path(), &format!("b/{file}")), "{file}");
    }
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "--seed", "4", "--out", "c", "gen-data"]).status.code(), Some(0));
    assert_ne!(read(dir.path(), "a/train.csv"), read(dir.path(), "c/train.csv"));
    let (_, manifest) = rows(&read(dir.path(), "a/datasets.csv"));
    assert_eq!(manifest.len(), 4);
    assert_eq!(manifest[3][2], "300");
}

#[test]
fn missing_data_and_bad_config_have_distinct_codes() {
    let dir = workspace("scenario.name = swap-toy\nbound.colour = blue\n");
    assert_eq!(eqpac(dir.path(), &["--out", "empty", "certify"]).status.code(), Some(3));
    let out = eqpac(dir.path(), &["--config", "run.cfg", "kl-demo"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(eqpac(dir.path(), &["--config", "absent.cfg", "kl-demo"]).status.code(), Some(3));
}

#[test]
fn tampered_representative_split_is_rejected() {
    let dir = workspace(SMALL);
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "gen-data"]).status.code(), Some(0));
    let path = dir.path().join("out/representative.csv");
    let text = read(dir.path(), "out/representative.csv");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells.swap(0, 1);
    lines[1] = cells.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = eqpac(dir.path(), &["--config", "run.cfg", "certify"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("canonical"));
}

#[test]
fn certify_reports_every_variant_and_replays_from_resolved_config() {
    let dir = workspace(SMALL);
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "--seed", "5", "gen-data"]).status.code(), Some(0));
    let out = eqpac(dir.path(), &["--config", "run.cfg", "--seed", "5", "certify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let certificates = read(dir.path(), "out/certificates.csv");
    let (header, body) = rows(&certificates);
    assert_eq!(header.len(), 19);
    assert_eq!(body.len(), 6);
    let (variant, status, provenance) = (column(&header, "variant"), column(&header, "status"), column(&header, "sample_provenance"));
    for row in &body {
        assert_eq!(row[status], "certified");
        if row[variant] == "representative" {
            assert_eq!(row[provenance], "representatives");
        }
    }
    let (rh, risks) = rows(&read(dir.path(), "out/risks.csv"));
    assert!(risks.iter().any(|r| r[column(&rh, "split")] == "true"));

    let resolved = read(dir.path(), "out/resolved.cfg");
    std::fs::write(dir.path().join("replay.cfg"), resolved.replace("run.out_dir = out", "run.out_dir = replay").replace("run.data_dir = default", "run.data_dir = out")).unwrap();
    assert_eq!(eqpac(dir.path(), &["--config", "replay.cfg", "certify"]).status.code(), Some(0));
    assert_eq!(read(dir.path(), "replay/certificates.csv"), certificates);
}

#[test]
fn compare_summary_matches_its_histogram() {
    let dir = workspace(SMALL);
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "gen-data"]).status.code(), Some(0));
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "compare"]).status.code(), Some(0));
    let (hh, hist) = rows(&read(dir.path(), "out/histogram.csv"));
    assert_eq!(hh, ["model_tag", "sample_index", "test_error"]);
    let (sh, summary) = rows(&read(dir.path(), "out/summary.csv"));
    assert_eq!(summary.len(), 2);
    for row in &summary {
        let errors: Vec<f64> = hist.iter().filter(|h| h[0] == row[0]).map(|h| h[2].parse().unwrap()).collect();
        assert_eq!(errors.len().to_string(), row[column(&sh, "n_models")]);
        assert!(errors.iter().all(|e| (0.0..=1.0).contains(e)));
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let reported: f64 = row[column(&sh, "mean_test_error")].parse().unwrap();
        assert!((mean - reported).abs() <= 1e-12);
    }
}

#[test]
fn sweep_grid_shapes_and_trends() {
    let dir = workspace(&format!("{SMALL}sweep.n =\n"));
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "--out", "empty", "sweep"]).status.code(), Some(0));
    assert_eq!(read(dir.path(), "empty/sweep.csv").lines().count(), 1);

    let dir = workspace(&format!("{SMALL}sweep.n = 100,400,1600\n"));
    assert_eq!(eqpac(dir.path(), &["--config", "run.cfg", "sweep"]).status.code(), Some(0));
    let (header, body) = rows(&read(dir.path(), "out/sweep.csv"));
    assert_eq!(body.len(), 3);
    let c = column(&header, "complexity_term");
    let terms: Vec<f64> = body.iter().map(|r| r[c].parse().unwrap()).collect();
    assert!(terms.windows(2).all(|w| w[1] < w[0]), "{terms:?}");
}
