use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use qxdb::bench::{write_fvecs, Block, BenchReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn qxdb() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qxdb"));
    c.env_remove("RUST_LOG");
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("QX_")) {
        c.env_remove(k);
    }
    c
}

fn tiny_dataset(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut block = |n: usize| Block::new(12, (0..n * 12).map(|_| rng.random::<f32>()).collect()).unwrap();
    write_fvecs(dir.join("base.fvecs"), &block(800)).unwrap();
    write_fvecs(dir.join("query.fvecs"), &block(40)).unwrap();
}

#[test]
fn bench_run_writes_report_and_honours_assert() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny");
    std::fs::create_dir(&data).unwrap();
    tiny_dataset(&data);
    let out = dir.path().join("report.json");
    let status = qxdb()
        .args(["bench", "run", "--dataset", "tiny", "--data-dir"])
        .arg(dir.path())
        .args(["--metric", "euclidean", "--index", "flat", "--ef", "10,20", "--k", "10", "--seed", "3", "--assert", "--out"])
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: BenchReport = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report.ef.len(), 2);
    assert!(report.ef.values().all(|r| r.recall == 1.0));

    let status = qxdb()
        .args(["bench", "run", "--dataset"])
        .arg(&data)
        .args(["--index", "hnsw", "--m", "4", "--ef-construction", "8", "--ef", "10", "--assert", "--min-recall", "1.5"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    let status = qxdb()
        .args(["bench", "run", "--dataset", "does-not-exist", "--data-dir"])
        .arg(dir.path())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn serve_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "listen = 5").unwrap();
    let status = qxdb().arg("serve").arg("--config").arg(&bad).stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = qxdb().args(["serve", "--in-memory", "--listen", "not-an-address"]).stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = qxdb().args(["serve", "--in-memory"]).env("QX_DEFAULT_M", "x").stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let status = qxdb().args(["serve", "--in-memory", "--listen", &addr]).stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(2));
    drop(taken);

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = qxdb()
        .args(["serve", "--listen", &addr, "--data-dir"])
        .arg(dir.path().join("db"))
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let up = loop {
        if std::net::TcpStream::connect(&addr).is_ok() {
            break true;
        }
        if Instant::now() > deadline {
            break false;
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    let kill = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(kill.success());
    let status = child.wait().unwrap();
    assert!(up, "server never accepted connections");
    assert_eq!(status.code(), Some(0));
}
