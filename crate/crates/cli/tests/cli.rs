use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainbsde"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CHAINBSDE_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_variant(dir: &Path, source: &str, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(fixture(source)).unwrap();
    assert!(text.contains(from), "fixture {source} has no `{from}`");
    let path = dir.join("variant.toml");
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn verify_passes_on_two_state_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("two_state.toml"), dir.path(), &["verify", "--paths", "2000"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("suite,passed,checks,detail\n"));
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")), "{csv}");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn jump_counter_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("three_state.toml"), dir.path(), &["counterexample", "ex42", "--paths", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("min Y₁ ≥ 1 holds"), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("counterexample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2].parse::<f64>().unwrap(), 0.0);
        assert!(cells[3].parse::<f64>().unwrap() >= 1.0 - 1e-6, "{line}");
    }
}

#[test]
fn two_state_dominance_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("two_state.toml"), dir.path(), &["counterexample", "two-state-dominance", "--paths", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("dominance detected"), "{}", stdout(&o));
}

#[test]
fn counterexample_rejects_wrong_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("two_state.toml"), dir.path(), &["counterexample", "ex42"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("needs 3 states"), "{}", stderr(&o));
}

#[test]
fn malformed_matrix_names_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_variant(dir.path(), "two_state.toml", "[ 1.0, -1.0],", "[ 1.0, -1.5],");
    let o = run(&bad, &dir.path().join("out"), &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("piece 1: column 2"), "{err}");
    assert!(!dir.path().join("out").exists());

    let bad = write_variant(dir.path(), "two_state.toml", "[ 1.0, -1.0],", "[ 3.0, -1.0],");
    let o = run(&bad, &dir.path().join("out"), &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("matrix entry [2][1]"), "{err}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for (config, args) in [
        ("two_state.toml", vec!["simulate", "--paths", "50"]),
        ("three_state.toml", vec!["counterexample", "ex42", "--paths", "50"]),
        ("linear_two_piece.toml", vec!["linear-estimate", "--paths", "500"]),
    ] {
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        for out in [&a, &b] {
            let o = run(&fixture(config), out, &args);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        }
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 2);
        for name in names {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }
}

#[test]
fn different_seed_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&fixture("two_state.toml"), &a, &["simulate", "--paths", "50"]);
    run(&fixture("two_state.toml"), &b, &["simulate", "--paths", "50", "--seed", "7"]);
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), fs::read(b.join("paths.csv")).unwrap());
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "two_state.toml", "seed = 20240611\n", "");
    let o = run(&cfg, &dir.path().join("out"), &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needs a seed"), "{}", stderr(&o));
    // Deterministic subcommands do not need one.
    let o = run(&cfg, &dir.path().join("out"), &["solve"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn singular_linear_driver_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    // From state 1 the jump to state 2 moves Y by -1, cancelling the identity.
    let cfg = dir.path().join("singular.toml");
    fs::write(
        &cfg,
        r#"schema_version = 1
[chain]
num_states = 2
epsilon_r = 0.5
horizon = 1.0
[[chain.pieces]]
t_end = 1.0
matrix = [[-1.0, 1.0], [1.0, -1.0]]
[driver]
kind = "linear"
alpha = [[[0.0, -2.0]], [[0.0, 0.0]]]
beta = [[0.0]]
gamma = [1.0]
phi = [0.0]
[terminal]
values = [[1.0, 0.0]]
"#,
    )
    .unwrap();
    let o = run(&cfg, &dir.path().join("out"), &["linear-solve"]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("singular at piece 1, state 1, target 2"), "{}", stderr(&o));
}

#[test]
fn property_failure_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("linear_two_piece.toml"), dir.path(), &["balanced-check", "--samples", "3"]);
    assert_eq!(o.status.code(), Some(4));
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"property-failure\""));
}

#[test]
fn comparison_on_ordered_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture("two_state.toml"), dir.path(), &["check-comparison"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("conclusion u1 >= u2 holds"));
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")), "{csv}");
}

#[test]
fn unsupported_schema_version() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "two_state.toml", "schema_version = 1", "schema_version = 2");
    let o = run(&cfg, &dir.path().join("out"), &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema_version"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_chainbsde"))
        .arg("--config")
        .arg(fixture("two_state.toml"))
        .arg("--quiet")
        .arg("evaluate")
        .env("CHAINBSDE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    let first: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 0.567667642).abs() < 1e-6, "{csv}");
}
