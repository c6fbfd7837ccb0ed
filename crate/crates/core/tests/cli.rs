use std::io::Write;
use std::net::TcpListener;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

fn pvran() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pvran"))
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn help_lists_the_subcommands() {
    let o = pvran().arg("--help").output().unwrap();
    assert!(o.status.success());
    for cmd in ["serve", "slice", "metrics", "bench"] {
        assert!(text(&o).contains(cmd), "{cmd} missing");
    }
    let o = pvran().args(["bench", "--help"]).output().unwrap();
    for cmd in ["latency", "compare", "capacity", "stream", "--report"] {
        assert!(text(&o).contains(cmd), "{cmd} missing");
    }
}

#[test]
fn bench_writes_the_report_to_stdout_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.txt");
    let o = pvran()
        .args(["bench", "latency", "--transport", "pubsub", "--bytes", "1024", "--iters", "300", "--report"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = text(&o);
    assert!(out.starts_with("{\"report\":\"pvran-bench\",\"version\":1,"));
    assert!(out.contains("\"transport\":\"pubsub_socket\""));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), out);

    let o = pvran().args(["bench", "capacity", "--prbs", "30"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("30"));
}

#[test]
fn slice_commands_drive_a_running_service() {
    let (rr, http) = (free_port(), free_port());
    let _srv = Server(
        pvran()
            .arg("serve")
            .env("PVRAN_REQREP_PORT", rr.to_string())
            .env("PVRAN_HTTP_PORT", http.to_string())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let client = || {
        let mut c = pvran();
        c.env("PVRAN_REQREP_PORT", rr.to_string());
        c
    };
    let t = Instant::now();
    while !client().args(["slice", "list"]).output().unwrap().status.success() {
        assert!(t.elapsed() < Duration::from_secs(10), "service did not come up");
        thread::sleep(Duration::from_millis(50));
    }

    let mut cfg = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        cfg,
        "slice_id = 4\nprbs = 25\ndl_freq_hz = 595000000\nul_freq_hz = 550000000\nradio_channel = 0\nphy_profile = \"phy-a\""
    )
    .unwrap();
    let o = client().args(["slice", "create", "--config"]).arg(cfg.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("\"state\": \"running\""));

    let o = client().args(["slice", "create", "--config"]).arg(cfg.path()).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("already_exists"));

    thread::sleep(Duration::from_millis(300));
    let o = client().arg("metrics").output().unwrap();
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["active_slices"], 1);

    let o = client().args(["slice", "destroy", "4"]).output().unwrap();
    assert!(o.status.success());
    let o = client().args(["slice", "list"]).output().unwrap();
    assert_eq!(text(&o).trim(), "[]");
}
