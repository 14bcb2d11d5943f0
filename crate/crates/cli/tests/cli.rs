use std::path::Path;
use std::process::{Command, Output};

fn gapforge(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapforge"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GAPFORGE_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn alpha_above_omega_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(
        &["gaps", "--set", "operator.omega=0.3", "--set", "operator.alpha=0.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha must be < omega"), "{}", stderr(&o));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn omega_outside_range_is_rejected_with_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(
        &[
            "fixed-point",
            "--set",
            "mdp.gamma=0.99",
            "--set",
            "operator.omega=1.1",
            "--set",
            "operator.alpha=0.5",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("omega ≥ 2/(1+gamma) = 1.005"), "{err}");
    assert!(err.contains("--unsafe-params"), "{err}");
}

#[test]
fn several_problems_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(
        &[
            "gaps",
            "--set",
            "mdp.n_states=0",
            "--set",
            "mdp.gamma=1.5",
            "--set",
            "bogus=1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("4 problems"), "{err}");
    for field in ["bogus", "mdp.n_states", "mdp.gamma", "mdp.branching"] {
        assert!(err.contains(&format!("  - {field}: ")), "{err}");
    }
}

#[test]
fn unknown_suite_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(&["figure3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn figure2_defaults_write_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(&["figure2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("PASS figure2-al-minus-sal-nonnegative"), "{stdout}");

    let csv = std::fs::read_to_string(dir.path().join("figure2.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,al_eps,sal_eps,diff"));
    assert_eq!(lines.next(), Some("0,0.0,0.0,0.0"));
    assert_eq!(csv.lines().count(), 2002);

    let m = manifest(dir.path());
    assert_eq!(m["suite"], "figure2");
    assert_eq!(m["passed"], true);
    let file = &m["files"][0];
    assert_eq!(file["name"], "figure2.csv");
    use sha2::Digest;
    assert_eq!(file["sha256"], hex::encode(sha2::Sha256::digest(csv.as_bytes())));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = gapforge(
        &[
            "fixed-point",
            "--set",
            "mdp.seeds=1",
            "--set",
            "output.traces=false",
            "--set",
            "tol.fixed_point=1e-30",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL fixed-point-law"));
    assert_eq!(manifest(dir.path())["passed"], false);
}

#[test]
fn config_file_is_overridden_by_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[mdp]\nn_states = 5\nseeds = 2\n\n[operator]\ngrid = [0.3, 0.6]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = gapforge(
        &["gaps", "--config", config.to_str().unwrap(), "--set", "mdp.seeds=3"],
        &out,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["config"]["mdp"]["n_states"], 5);
    assert_eq!(m["config"]["mdp"]["seeds"], 3);
    let rows = std::fs::read_to_string(out.join("gaps.csv")).unwrap().lines().count() - 1;
    // One SAL pair and AL at its alpha, per seed.
    assert_eq!(rows, 3 * 2);
}

#[test]
fn seed_environment_variable_pins_a_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gapforge"))
        .args(["gvi-mvi", "--out"])
        .arg(dir.path())
        .env("GAPFORGE_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = manifest(dir.path());
    assert_eq!(m["config"]["mdp"]["seed"], 42);
    assert_eq!(m["config"]["mdp"]["seeds"], 1);
    assert_eq!(m["config"]["noise"]["seed"], 42);
    let csv = std::fs::read_to_string(dir.path().join("gvi_mvi.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("42,")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["noisy-vi", "--set", "mdp.seeds=2", "--set", "k_max=30"];
    assert_eq!(gapforge(&args, &a).status.code(), Some(0));
    assert_eq!(gapforge(&args, &b).status.code(), Some(0));
    for name in ["noisy_vi.csv", "noisy_vi_curves.csv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
    }
    assert_eq!(manifest(&a)["files"], manifest(&b)["files"]);
}
