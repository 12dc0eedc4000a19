use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3
name = "small"
schemes = ["traditional", "two-ticket"]
splits = 10

[population]
count = 5000
fundamental = ["uniform(0,10)"]
style = ["point(0)"]
label = { rule = "step", weights = [1, 0], cutoff = 5 }

[scorer]
weights = [1, 1]

[models.p]
kind = "parametric"
style = ["point(1)"]

[models.u]
kind = "null"

[models.hirer]
kind = "parametric"
style = ["point(1)"]

[output]
format = "both"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hiring-sim"))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("HIRING_SIM_OUTPUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_exits_zero_and_missing_config_exits_one() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let o = run(&["simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let a = run(&["simulate", "--config", &cfg, "--output", out_a.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(&[
        "simulate",
        "--config",
        &cfg,
        "--output",
        out_b.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let (fa, fb) = (dir_contents(&out_a), dir_contents(&out_b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"score_table.csv"), "{names:?}");
    assert!(names.contains(&"run_meta.json"), "{names:?}");
    assert_eq!(fa, fb);
    assert!(stdout(&a).contains("two-ticket"));
}

#[test]
fn simulate_output_replays_to_the_same_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let sim = tmp.path().join("sim");
    let rep = tmp.path().join("rep");
    let o = run(&["simulate", "--config", &cfg, "--output", sim.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = sim.join("score_table.csv");
    let o = run(&[
        "replay",
        "--config",
        &cfg,
        "--table",
        table.to_str().unwrap(),
        "--output",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&sim), metrics(&rep));
}

#[test]
fn validate_config_accepts_shipped_configs_and_rejects_bad_ones() {
    for name in ["point_shift.toml", "nticket_h05.toml", "resume_analog.toml"] {
        let p = repo_file(&format!("configs/{name}"));
        let o = run(&["validate-config", "--config", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        assert!(stdout(&o).contains("configuration ok"));
    }
    let tmp = TempDir::new().unwrap();
    let bad = write_config(
        &tmp,
        "bad.toml",
        &SMALL.replace("splits = 10", "splits = 10\nsplitz = 3"),
    );
    let o = run(&["validate-config", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("splitz"), "{}", stderr(&o));
}

#[test]
fn dominance_verdicts() {
    let o = run(&["dominance", "--a", "uniform(1,3)", "--b", "uniform(0,2)"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Dominates (Analytic)"), "{}", stdout(&o));

    let o = run(&["dominance", "--a", "uniform(0,4)", "--b", "point(2)"]);
    let text = stdout(&o);
    assert!(text.contains("Incomparable"), "{text}");
    assert!(text.contains("witness"), "{text}");

    let o = run(&["dominance", "--a", "gaussian(0,1); point(3)", "--b", "null"]);
    assert!(stdout(&o).contains("Dominates (Analytic)"), "{}", stdout(&o));

    let o = run(&[
        "dominance",
        "--a",
        "uniform(1,3)",
        "--b",
        "uniform(0,2)",
        "--empirical",
        "--samples",
        "5000",
    ]);
    assert!(stdout(&o).contains("EmpiricalCDF"), "{}", stdout(&o));

    let o = run(&["dominance", "--a", "uniform(1,3)", "--b", "point(1); point(2)"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["dominance", "--a", "uniform(3,1)", "--b", "null"]);
    assert_eq!(o.status.code(), Some(1));
}

fn fitted_k(text: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with("fitted k = "))
        .expect("no fitted rate line");
    line["fitted k = ".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn nticket_curve_recovers_the_contraction_rate() {
    let tmp = TempDir::new().unwrap();
    let cfg = repo_file("configs/nticket_h05.toml");
    let o = run(&[
        "nticket",
        "--config",
        cfg.to_str().unwrap(),
        "--candidates",
        "400000",
        "--n-max",
        "6",
        "--output",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let k = fitted_k(&stdout(&o));
    assert!((0.45..=0.55).contains(&k), "fitted k = {k}");
    let curve = fs::read_to_string(tmp.path().join("disparity_curve.csv")).unwrap();
    assert!(curve.starts_with("n,delta_tpr_abs,analytic_envelope"));
    assert_eq!(curve.lines().count(), 8);

    let o = run(&["nticket", "--config", cfg.to_str().unwrap(), "--n-max", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nticket_reports_convergence_when_one_ticket_suffices() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(repo_file("configs/nticket_h05.toml"))
        .unwrap()
        .replace(
            "[models.hirer]\nkind = \"parametric\"\nstyle = [\"uniform(0,2)\"]",
            "[models.hirer]\nkind = \"parametric\"\nstyle = [\"point(2)\"]",
        );
    assert!(text.contains("point(2)"));
    let cfg = write_config(&tmp, "h1.toml", &text);
    let o = run(&[
        "nticket",
        "--config",
        &cfg,
        "--candidates",
        "20000",
        "--output",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged"), "{}", stdout(&o));
}

#[test]
fn replay_of_the_hand_fixture() {
    let tmp = TempDir::new().unwrap();
    let fixture = repo_file("crates/core/tests/fixtures/replay_8.csv");
    let o = run(&[
        "replay",
        "--table",
        fixture.to_str().unwrap(),
        "--seed",
        "1",
        "--splits",
        "20",
        "--output",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("metrics.csv").exists());

    let o = run(&["replay", "--table", fixture.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "missing --seed must be a usage error");

    let o = run(&["threshold", "--table", fixture.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("traditional: tau* = 5.5000"), "{text}");
    assert!(text.contains("two-ticket: tau* = 5.9000"), "{text}");
}

#[test]
fn replay_rejects_malformed_tables() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(
        &bad,
        "candidate_id,group,label,score_original,score_candidate_llm\na,P,1,7,\nb,Q,0,3,\n",
    )
    .unwrap();
    let o = run(&["replay", "--table", bad.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = run(&["replay", "--table", "/no/such/file.csv", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn threshold_consistency_for_a_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL);
    let o = run(&["threshold", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dominance precondition holds"), "{text}");
    assert!(text.contains("max |tau* difference| = 0.0000"), "{text}");
}
