use std::io::{BufRead, BufReader};
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use trustgate_core::cert::hash_thumbprint;
use trustgate_core::codec::decode_opn;
use trustgate_core::config::Config;
use trustgate_core::dataplane::pcap::Direction;
use trustgate_core::dataplane::{CaptureWriter, FlowRecorder};
use trustgate_core::ledger::AdminKey;
use trustgate_core::runtime::Gateway;
use trustgate_harness::report::BenchReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trustgate"));
    c.env_remove("TRUSTGATE_ADMIN_KEY");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn write_key(dir: &Path, seed: u8) -> PathBuf {
    let p = dir.join(format!("key{seed}.pem"));
    std::fs::write(&p, AdminKey::from_seed([seed; 32]).to_pem().unwrap()).unwrap();
    p
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[gateway]\nno_such_field = 1\n").unwrap();
    let o = run(&["gateway", "run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["gateway", "run", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // valid TOML, but no administrator keys
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["gateway", "run", "--config", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("admin_keys"));
}

#[test]
fn missing_key_exits_2_and_unreachable_ledger_exits_1() {
    let cert = fixture("cert_a.der");
    let o = run(&["admin", "issue", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let key = write_key(dir.path(), 1);
    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let o = bin()
        .args(["admin", "issue", cert.to_str().unwrap(), "--ledger", &closed])
        .env("TRUSTGATE_ADMIN_KEY", &key)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    let o = bin()
        .args(["admin", "revoke", dir.path().join("nope.der").to_str().unwrap(), "--key"])
        .arg(&key)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn keygen_writes_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("admin.pem");
    let o = run(&["admin", "keygen", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let key = AdminKey::from_pem(&text).unwrap();
    assert_eq!(stdout(&o).trim(), format!("public key {}", key.public()));
    let o = run(&["admin", "keygen", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn non_admin_issue_leaves_table_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let admin = write_key(dir.path(), 1);
    let intruder = write_key(dir.path(), 2);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut config = Config::default();
    config.gateway.listen = "127.0.0.1:0".parse().unwrap();
    config.ledger.address = "127.0.0.1:0".parse().unwrap();
    config.ledger.admin_keys = vec![AdminKey::from_seed([1; 32]).public()];
    let gw = rt.block_on(Gateway::start(&config)).unwrap();
    let ledger = gw.ledger_addr.to_string();
    let generation = gw.table.generation();
    let cert_a = fixture("cert_a.der");
    let cert_b = fixture("cert_b.der");

    let l2 = |cert: &Path, key: &Path| {
        bin()
            .args(["admin", "issue", cert.to_str().unwrap(), "--layer", "l2", "--ledger", &ledger])
            .env("TRUSTGATE_ADMIN_KEY", key)
            .output()
            .unwrap()
    };
    let o = l2(&cert_a, &intruder);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not an authorized administrator"));

    // L1 records the intruder's transaction; the controller must skip it.
    let o = bin()
        .args(["admin", "issue", cert_a.to_str().unwrap(), "--ledger", &ledger])
        .env("TRUSTGATE_ADMIN_KEY", &intruder)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("confirmed event"));
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(gw.table.generation(), generation);
    assert!(gw.table.is_empty());

    // the layer is also configurable for the real administrator
    let o = bin()
        .args(["admin", "issue", cert_b.to_str().unwrap(), "--ledger", &ledger])
        .env("TRUSTGATE_ADMIN_KEY", &admin)
        .output()
        .unwrap();
    assert!(o.status.success());
    let tp = hash_thumbprint(&std::fs::read(&cert_b).unwrap()).unwrap();
    assert!(stdout(&o).contains(&format!("issue {tp}")));
    let deadline = std::time::Instant::now() + Duration::from_secs(2);
    while !gw.table.lookup(&tp) && std::time::Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(gw.table.snapshot().1, vec![tp]);
    drop(rt);
}

fn capture(dir: &Path, chunks: &[(Direction, Vec<u8>)]) -> PathBuf {
    let path = dir.join("flow.pcap");
    let mut w = CaptureWriter::new(std::fs::File::create(&path).unwrap()).unwrap();
    if !chunks.is_empty() {
        let client: SocketAddrV4 = "10.0.0.2:50000".parse().unwrap();
        let server: SocketAddrV4 = "10.0.0.1:4840".parse().unwrap();
        let mut rec = FlowRecorder::new(client, server, 1000, 9000);
        for f in rec.handshake() {
            w.write_frame(&f).unwrap();
        }
        for (dir, bytes) in chunks {
            for f in rec.send(*dir, bytes) {
                w.write_frame(&f).unwrap();
            }
        }
    }
    path
}

#[test]
fn replay_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = capture(dir.path(), &[]);
    let o = run(&["replay", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "frames 0 opn 0 other 0 blocked 0 unparseable 0");

    let req = std::fs::read(fixture("opn_request_basic256sha256.bin")).unwrap();
    let resp = std::fs::read(fixture("opn_response_basic256sha256.bin")).unwrap();
    let tp = |c: &[u8]| hash_thumbprint(decode_opn(c).unwrap().sender_certificate().unwrap()).unwrap();
    let flow = capture(
        dir.path(),
        &[(Direction::ClientToServer, req.clone()), (Direction::ServerToClient, resp.clone())],
    );
    let trusted = run(&[
        "replay",
        flow.to_str().unwrap(),
        "--trust",
        &tp(&req).to_hex(),
        "--trust",
        &tp(&resp).to_hex(),
    ]);
    assert!(trusted.status.success());
    let text = stdout(&trusted);
    let verdicts: Vec<&str> = text.lines().filter(|l| !l.starts_with("frames")).collect();
    assert_eq!(verdicts.len(), 2, "{text}");
    assert!(verdicts.iter().all(|l| l.ends_with("Allow")), "{text}");

    let untrusted = stdout(&run(&["replay", flow.to_str().unwrap()]));
    assert!(untrusted.lines().any(|l| l.contains("UntrustedThumbprint")), "{untrusted}");

    let o = run(&["replay", dir.path().join("none.pcap").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_q2_writes_matching_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q2.json");
    let args = [
        "bench", "q2", "--out", out.to_str().unwrap(), "--trials", "4", "--size", "1024", "--preset", "short,long",
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("L1 ") || l.starts_with("L2 ")).count(), 4);
    let report: BenchReport = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let rows = BenchReport::read_csv(&dir.path().join("q2.csv")).unwrap();
    assert_eq!(rows, report.records);
    assert!(!report.records.is_empty());

    // reports are never overwritten
    let again = run(&args);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn bench_q1_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q1.json");
    let o = run(&["bench", "q1", "--out", out.to_str().unwrap(), "--handshakes", "4", "--warmup", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: BenchReport = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    for arm in ["baseline", "enabled"] {
        assert_eq!(report.values(arm, "tagged_processing_ns").len(), 8);
        assert_eq!(report.values(arm, "handshake_ms").len(), 4);
    }
    assert!(stdout(&o).contains("handshake_ratio"));
}

#[test]
fn gateway_flushes_metrics_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.json");
    let config = dir.path().join("gw.toml");
    std::fs::write(
        &config,
        format!(
            "[gateway]\nlisten = \"127.0.0.1:0\"\nmetrics_path = \"{}\"\n\n[ledger]\naddress = \"127.0.0.1:0\"\nadmin_keys = [\"{}\"]\n",
            metrics.display(),
            AdminKey::from_seed([1; 32]).public()
        ),
    )
    .unwrap();
    let mut child = bin()
        .args(["gateway", "run", "--config", config.to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    assert!(first.starts_with("gateway listening on 127.0.0.1:"), "{first}");
    let addr = first.split_whitespace().nth(3).unwrap().to_string();
    // an empty table refuses nothing that is not an OPN, so a plain connect works
    drop(std::net::TcpStream::connect(&addr).unwrap());

    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let rest: Vec<String> = lines.map(|l| l.unwrap()).collect();
    assert!(child.wait().unwrap().success());
    let report: serde_json::Value = serde_json::from_str(rest.last().unwrap()).unwrap();
    assert_eq!(report["table_entries"], 0);
    let flushed: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    assert_eq!(flushed, report);
}
