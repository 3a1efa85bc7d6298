use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn commfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_commfuse"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Config in `dir` using the given mock script; store and runs live in `dir`.
fn config(dir: &Path, script: &str, backend: &str, extra: &str) -> PathBuf {
    let text = format!(
        "backend = \"{backend}\"\nknowledge_base = \"{kb}\"\nrun_id = \"t\"\n\n[harness]\nkind = \"sim\"\n\n[provider]\nkind = \"mock\"\nscript = \"{script}\"\n\n[search]\nislands = 2\ngenerations = 4\n{extra}",
        kb = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../knowledge").display(),
        script = core_fixtures().join(script).display(),
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn seed() -> String {
    core_fixtures().join("fastpath/moe_seed_gin.cu").display().to_string()
}

#[test]
fn analyze_matches_golden_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("g.json");
    let src = core_fixtures().join("moe_host.cu");
    let o = commfuse(&["analyze", src.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = std::fs::read_to_string(core_fixtures().join("moe_host.graph.txt")).unwrap();
    assert_eq!(stdout(&o), golden);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);
}

#[test]
fn analyze_missing_file_fails() {
    let o = commfuse(&["analyze", "/nonexistent/x.cu", "--json", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x.cu"));
}

#[test]
fn analyze_without_collectives_prints_empty_graph() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("k.cu");
    std::fs::write(&src, "void f() {\n  k<<<1, 1>>>(x);\n}\n").unwrap();
    let json = dir.path().join("k.json");
    let o = commfuse(&["analyze", src.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("(no collectives)"));
}

#[test]
fn fastpath_writes_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "fastpath/success_gin.toml", "GIN", "");
    let host = core_fixtures().join("moe_host.cu");
    let out = dir.path().join("fp");
    let o = commfuse(&[
        "fastpath",
        "--config",
        cfg.to_str().unwrap(),
        host.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed = std::fs::read_to_string(out.join("seed.cu")).unwrap();
    assert!(seed.contains("EVOLVE-BLOCK-START"));
    assert!(std::fs::read_to_string(out.join("seed_directive.yaml"))
        .unwrap()
        .contains("ncclCoopCta"));
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov.as_array().unwrap().len(), 2);
}

#[test]
fn fastpath_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "fastpath/always_fail.toml", "GIN", "");
    let host = core_fixtures().join("moe_host.cu");
    let out = dir.path().join("fp");
    let o = commfuse(&[
        "fastpath",
        "--config",
        cfg.to_str().unwrap(),
        host.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SetupA"), "{}", stderr(&o));
    assert!(out.join("provenance.json").is_file());
    assert!(!out.join("seed.cu").exists());
}

#[test]
fn unknown_backend_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "fastpath/success_gin.toml", "NVSHMEM", "");
    let host = core_fixtures().join("moe_host.cu");
    let o = commfuse(&["fastpath", "--config", cfg.to_str().unwrap(), host.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("backend"));
    assert!(!dir.path().join("runs").exists());
}

fn evolve(dir: &Path, extra: &[&str]) -> Output {
    let cfg = config(dir, "evolve/search.toml", "GIN", "");
    let s = seed();
    let mut args = vec!["evolve", "--config", cfg.to_str().unwrap(), "--seed", &s];
    args.extend_from_slice(extra);
    commfuse(&args)
}

#[test]
fn evolve_is_deterministic_and_improves() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, ob) = (evolve(a.path(), &[]), evolve(b.path(), &[]));
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success());
    let log = |d: &Path| std::fs::read(d.join("runs/t/scores.jsonl")).unwrap();
    assert_eq!(log(a.path()), log(b.path()));

    let csv = std::fs::read_to_string(a.path().join("runs/t/best_per_generation.csv")).unwrap();
    let series: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(series.len(), 5);
    assert!(series.windows(2).all(|w| w[1] >= w[0]));
    assert!(series[4] > series[0]);
    assert!(a.path().join("runs/t/best.cu").is_file());
    assert!(std::fs::read_to_string(a.path().join("runs/t/report.txt"))
        .unwrap()
        .contains("best: t-"));

    // Re-running a finished run changes nothing.
    let again = evolve(a.path(), &[]);
    assert!(again.status.success());
    assert_eq!(log(a.path()), log(b.path()));
}

#[test]
fn evolve_resume_matches_uninterrupted() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(evolve(a.path(), &[]).status.success());
    let first = evolve(b.path(), &["--stop-after", "2"]);
    assert!(first.status.success());
    assert!(stdout(&first).contains("--resume"));
    let second = evolve(b.path(), &["--resume"]);
    assert!(second.status.success(), "{}", stderr(&second));
    for f in ["scores.jsonl", "best.cu", "best_per_generation.csv"] {
        assert_eq!(
            std::fs::read(a.path().join("runs/t").join(f)).unwrap(),
            std::fs::read(b.path().join("runs/t").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn evolve_resume_without_checkpoint_fails() {
    let d = tempfile::tempdir().unwrap();
    let o = evolve(d.path(), &["--resume"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_queries() {
    let d = tempfile::tempdir().unwrap();
    assert!(evolve(d.path(), &[]).status.success());
    let store = d.path().join("store");
    let st = store.to_str().unwrap();

    let o = commfuse(&["inspect", "--store", st, "--id", "t-seed1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["id"], "t-seed1");
    assert_eq!(v["embedding"], "<256 dims>");

    let s = seed();
    let o = commfuse(&["inspect", "--store", st, "--knn", &s, "--k", "3"]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("t-seed1\t1.0000"), "{}", lines[0]);

    let o = commfuse(&["inspect", "--store", st, "--min-score", "100000"]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());

    let o = commfuse(&["inspect", "--store", st, "--generations", "1..2", "--digest"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("best form"));

    let o = commfuse(&["inspect", "--store", st, "--rebuild-index", "--generations", "0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("rebuilt:"));
    assert_eq!(out.lines().filter(|l| l.contains("\tgen 0\t")).count(), 2);

    let o = commfuse(&["inspect", "--store", st, "--id", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_rerenders_outputs() {
    let d = tempfile::tempdir().unwrap();
    assert!(evolve(d.path(), &[]).status.success());
    let before = std::fs::read_to_string(d.path().join("runs/t/report.txt")).unwrap();
    std::fs::remove_file(d.path().join("runs/t/report.txt")).unwrap();
    let o = commfuse(&["report", "--config", d.path().join("run.toml").to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), before);
    assert_eq!(
        std::fs::read_to_string(d.path().join("runs/t/report.txt")).unwrap(),
        before
    );
}
