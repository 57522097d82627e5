use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

fn raptor() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_raptor"));
    for var in ["RAPTOR_LISTEN", "RAPTOR_PEER_PORT", "RAPTOR_CONTROLLER", "RAPTOR_TERM_KILL_DELAY_MS", "RAPTOR_LOG"] {
        cmd.env_remove(var);
    }
    cmd
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("raptor runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn schedule_prints_member_orders() {
    let manifest = configs().join("diamond.json");
    let order = |offset: &str| stdout(&run(raptor().args(["schedule", "--offset", offset, "--manifest"]).arg(&manifest)));
    assert_eq!(order("0"), "t1 t3 t2 t4\n");
    assert_eq!(order("1"), "t1 t2 t3 t4\n");
    assert_eq!(order("2"), "t1 t3 t2 t4\n");

    let masked = stdout(&run(raptor().args(["schedule", "--mask", "t1,t2", "--dot", "--manifest"]).arg(&manifest)));
    assert!(masked.starts_with("t1 t2\ndigraph"), "{masked}");
}

#[test]
fn bad_manifests_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{"functions":[{"name":"a","location":"a","dependencies":["b"]},{"name":"b","location":"b","dependencies":["a"]}]}"#,
    )
    .unwrap();
    for cmd in [raptor().arg("validate").arg(&cyclic), raptor().arg("schedule").arg("--manifest").arg(&cyclic)] {
        let out = run(cmd);
        assert!(!out.status.success());
        assert!(out.stdout.is_empty());
        assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    }
    let out = run(raptor().args(["schedule", "--mask", "nope", "--manifest"]).arg(configs().join("diamond.json")));
    assert!(!out.status.success());
}

#[test]
fn validate_summarizes_the_dag() {
    let text = stdout(&run(raptor().arg("validate").arg(configs().join("diamond.json"))));
    assert!(text.starts_with("ok: 4 functions"));
    assert!(text.contains("sources: t1\nsinks: t4\n"));
}

#[test]
fn simulate_reports_the_realized_orders() {
    let out = stdout(&run(raptor().arg("-c").arg(configs().join("diamond.toml")).arg("simulate")));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["total_executions"], 6);
    assert_eq!(v["members"][0]["realized"], serde_json::json!(["t1", "t3", "t4"]));
    assert_eq!(v["members"][1]["realized"], serde_json::json!(["t1", "t2", "t4"]));
    assert_eq!(v["job_latency_ms"], 300.0);
}

fn sweep_config(dir: &Path, runs: usize) -> PathBuf {
    let path = dir.join(format!("sweep-{runs}.toml"));
    let text = format!(
        "seed = 7\n[sim]\nworkload = {{ kind = \"fork_join\", tasks = 4 }}\nflight_size = 2\nnet_latency_ms = 1\n\
         net_latency_max_ms = 3\n[sweep]\nkind = \"failure\"\np_values = [0.0, 0.5]\nruns_per_point = {runs}\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn sweep_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path(), 300);
    let csv = |seed: &str, name: &str| {
        let path = dir.path().join(name);
        stdout(&run(raptor().arg("-c").arg(&cfg).args(["--seed", seed, "sweep", "-o"]).arg(&path)));
        std::fs::read(path).unwrap()
    };
    let first = csv("7", "a.csv");
    assert_eq!(first, csv("7", "b.csv"));
    assert_ne!(first, csv("8", "c.csv"));
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("flight_size,p,runs,mean_latency_ms,max_latency_ms,failure_rate,failure_stderr,mean_executions")
    );
    assert!(lines.next().unwrap().starts_with("2,0.0,300,300.0,300.0,0.0,0.0,"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn zero_runs_per_point_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(raptor().arg("-c").arg(sweep_config(dir.path(), 0)).arg("sweep"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs_per_point"));
}

#[test]
fn report_renders_an_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let svg = dir.path().join("s.svg");
    stdout(&run(raptor().arg("-c").arg(sweep_config(dir.path(), 50)).args(["sweep", "-o"]).arg(&csv)));
    stdout(&run(raptor().arg("report").arg(&csv).arg("-o").arg(&svg)));
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("job failure rate"));

    std::fs::write(&csv, "not,a\nsweep,csv\n").unwrap();
    assert!(!run(raptor().arg("report").arg(&csv).arg("-o").arg(dir.path().join("x.svg"))).status.success());
}

/// Starts `raptor serve`, returns the child and the announced HTTP address.
fn start_serve(cmd: &mut Command) -> (std::process::Child, String, String) {
    let mut child = cmd.stderr(Stdio::piped()).stdout(Stdio::null()).spawn().unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut seen = String::new();
    let mut line = String::new();
    while stderr.read_line(&mut line).unwrap() > 0 {
        seen += &line;
        if let Some(rest) = line.strip_prefix("listening on http://") {
            let addr = rest.split_whitespace().next().unwrap().to_string();
            return (child, addr, seen);
        }
        line.clear();
    }
    panic!("serve exited early: {seen}");
}

fn stop(mut child: std::process::Child) {
    Command::new("kill").arg("-TERM").arg(child.id().to_string()).status().unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    while child.try_wait().unwrap().is_none() {
        assert!(std::time::Instant::now() < deadline, "serve ignored SIGTERM");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn serve_settings_prefer_flags_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("serve.toml");
    std::fs::write(&cfg, "[serve]\nlisten = \"127.0.0.3:0\"\npeer_port = 0\n").unwrap();
    let base = || {
        let mut cmd = raptor();
        cmd.arg("-c").arg(&cfg).arg("serve").arg("--root").arg(dir.path());
        cmd
    };

    let (child, addr, log) = start_serve(&mut base());
    assert!(addr.starts_with("127.0.0.3:"), "{addr}");
    assert!(log.contains("no controller configured"), "{log}");
    stop(child);

    let (child, addr, _) = start_serve(base().env("RAPTOR_LISTEN", "127.0.0.2:0"));
    assert!(addr.starts_with("127.0.0.2:"), "{addr}");
    stop(child);

    let (child, addr, _) = start_serve(base().env("RAPTOR_LISTEN", "127.0.0.2:0").args(["--listen", "127.0.0.1:0"]));
    assert!(addr.starts_with("127.0.0.1:"), "{addr}");
    stop(child);
}

#[test]
fn serve_reports_port_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run(raptor()
        .args(["serve", "--listen", &format!("127.0.0.1:{port}"), "--peer-port", "0", "--root"])
        .arg(dir.path()));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
