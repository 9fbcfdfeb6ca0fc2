use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn estilab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_estilab"));
    cmd.args(args).env_remove("ESTILAB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_estilab"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lp_bound_passes_with_csv_header() {
    let o = estilab(&["lp-bound"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.starts_with("kind,claim,series,x,statistic,value,relation,bound,pass\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("verdict,")).count(), 10 * 4 * 4 * 4);
    assert!(!csv.contains(",false"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(estilab(&["nope"], &[]).status.code(), Some(2));
    let unknown = write(dir.path(), "a.toml", "scenario = \"nope\"\n");
    let o = estilab(&["run", &unknown], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown scenario `nope`"));
    let bad_key = write(dir.path(), "b.toml", "scenario = \"lp-bound\"\nsede = 1\n");
    assert_eq!(estilab(&["run", &bad_key], &[]).status.code(), Some(2));
    let bad_param = write(dir.path(), "c.toml", "scenario = \"lp-bound\"\n[parameters]\nstepsize = 0.1\n");
    assert_eq!(estilab(&["run", &bad_param], &[]).status.code(), Some(2));
    assert_eq!(estilab(&["estimate"], &[]).status.code(), Some(2));
    assert_eq!(estilab(&["moments", "--out", "/nonexistent/dir/r.csv"], &[]).status.code(), Some(2));
    assert_eq!(estilab(&["moments", "-p", "m_max"], &[]).status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_one() {
    let o = estilab(&["orthogonality", "-p", "n=20", "-p", "d=2000", "-p", "eps=0.01", "--trials", "5"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL random-signs-nearly-orthogonal"));
}

#[test]
fn config_file_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "scenario = \"parity-curve\"\nseed = 11\ntrials = 3000\nformat = \"json\"\n\n[parameters]\nd = 20\ncheck = \"19,20\"\n";
    let path = write(dir.path(), "p.toml", cfg);
    let mut reports = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}.json"));
        let o = estilab(&["run", &path, "--out", out.to_str().unwrap()], &[("ESTILAB_THREADS", threads)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        assert!(v["wall_time"].is_number());
        v.as_object_mut().unwrap().remove("wall_time");
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["seed"], 11);
    assert_eq!(reports[0]["rows"].as_array().unwrap().iter().filter(|r| r["series"] == "exact").count(), 35);
}

#[test]
fn csv_is_byte_identical_and_flags_override_config() {
    let cfg = "scenario = \"stability\"\nseed = 1\ntrials = 50\n[parameters]\nmode = \"protocol\"\nlearner = \"parity\"\n";
    let a = with_stdin(&["run", "-", "--seed", "4"], cfg);
    let b = with_stdin(&["run", "-", "--seed", "4"], cfg);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let c = with_stdin(&["run", "-"], cfg);
    assert_ne!(a.stdout, c.stdout);
    assert!(!stdout(&a).contains("wall_time"));
}

#[test]
fn list_documents_every_scenario() {
    let o = estilab(&["list"], &[]);
    let text = stdout(&o);
    for name in ["parity-curve", "orthogonality", "estimate", "inestimability", "characterize", "lp-bound", "moments", "stability"] {
        assert!(text.contains(&format!("{name}:")), "{name}");
    }
    assert!(text.contains("example [required]"));
}
