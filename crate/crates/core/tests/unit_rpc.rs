mod common;

use std::fs;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use common::*;
use toskose::unit::{faults, ProcessState, UnitClient, METHODS};

struct UnitProcess {
    child: Child,
    client: UnitClient,
}

impl Drop for UnitProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Start the unit binary with `programs` appended to a minimal config.
async fn spawn_unit(dir: &Path, programs: &str) -> UnitProcess {
    let port = free_port();
    let d = dir.display();
    let doc = format!(
        "[inet_http_server]\nport=127.0.0.1:{port}\nusername=u\npassword=p\n\n[supervisord]\nchildlogdir={d}/logs\n\n{programs}"
    );
    let conf = dir.join("unit.conf");
    fs::write(&conf, doc).unwrap();
    let child = Command::new(TOSKOSE)
        .args(["unit", "--config"])
        .arg(&conf)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let client = UnitClient::new(&format!("127.0.0.1:{port}"), "u", "p");
    let began = Instant::now();
    while client.get_state().await.is_err() {
        assert!(began.elapsed() < Duration::from_secs(10), "unit did not come up");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    UnitProcess { child, client }
}

fn program(name: &str, command: &str, extra: &str) -> String {
    format!("[program:{name}]\ncommand={command}\n{extra}\n")
}

#[tokio::test]
async fn starting_until_startsecs_elapse() {
    let dir = tempfile::tempdir().unwrap();
    let unit = spawn_unit(dir.path(), &program("svc", "/bin/sleep 30", "startsecs=2")).await;
    let began = Instant::now();
    unit.client.start_process("svc", false).await.unwrap();
    tokio::time::sleep(Duration::from_secs(1).saturating_sub(began.elapsed())).await;
    assert_eq!(unit.client.get_process_info("svc").await.unwrap().state, ProcessState::Starting);
    tokio::time::sleep(Duration::from_millis(2300).saturating_sub(began.elapsed())).await;
    assert_eq!(unit.client.get_process_info("svc").await.unwrap().state, ProcessState::Running);
}

#[tokio::test]
async fn stopping_one_program_leaves_the_other_alone() {
    let dir = tempfile::tempdir().unwrap();
    let programs = program("a", "/bin/sleep 30", "startsecs=0.1") + &program("b", "/bin/sleep 30", "startsecs=0.1");
    let unit = spawn_unit(dir.path(), &programs).await;
    unit.client.start_process("a", true).await.unwrap();
    unit.client.start_process("b", true).await.unwrap();
    let before = unit.client.get_process_info("b").await.unwrap();
    unit.client.stop_process("a", true).await.unwrap();
    let (a, b) = (unit.client.get_process_info("a").await.unwrap(), unit.client.get_process_info("b").await.unwrap());
    assert_eq!(a.state, ProcessState::Stopped);
    assert_eq!(b.state, ProcessState::Running);
    assert_eq!(b.pid, before.pid);
    assert!(process_alive(b.pid.unwrap()));
}

#[tokio::test]
async fn stdout_log_accumulates_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let unit = spawn_unit(dir.path(), &program("hello", "/bin/echo hello", "startsecs=0")).await;
    for _ in 0..3 {
        unit.client.start_process("hello", true).await.unwrap();
        let began = Instant::now();
        while unit.client.get_process_info("hello").await.unwrap().state != ProcessState::Exited {
            assert!(began.elapsed() < Duration::from_secs(5));
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
    let expected = "hello\n".repeat(3);
    assert_eq!(unit.client.read_stdout_log("hello", 0, 0).await.unwrap(), "");
    assert_eq!(unit.client.read_stdout_log("hello", 0, 1000).await.unwrap(), expected);
    assert_eq!(unit.client.read_stdout_log("hello", 6, 7).await.unwrap(), &expected[6..13]);
}

#[tokio::test]
async fn faults_for_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let unit = spawn_unit(dir.path(), &program("svc", "/bin/sleep 30", "startsecs=0")).await;
    let code = |r: Result<_, toskose::unit::ClientError>| r.err().and_then(|e| e.fault_code());
    assert_eq!(code(unit.client.start_process("nope", true).await.map(|_| ())), Some(faults::BAD_NAME));
    assert_eq!(code(unit.client.stop_process("svc", true).await.map(|_| ())), Some(faults::NOT_RUNNING));
    unit.client.start_process("svc", true).await.unwrap();
    assert_eq!(code(unit.client.start_process("svc", true).await.map(|_| ())), Some(faults::ALREADY_STARTED));
    let listed = unit.client.list_methods().await.unwrap();
    for m in METHODS {
        assert!(listed.iter().any(|l| l == m), "{m} not listed");
    }
}

#[tokio::test]
async fn orphans_are_reaped() {
    let dir = tempfile::tempdir().unwrap();
    let unit = spawn_unit(dir.path(), &program("fork", "/bin/sh -c 'sleep 0.5 & exit 0'", "startsecs=0")).await;
    let unit_pid = unit.child.id();
    unit.client.start_process("fork", true).await.unwrap();
    tokio::time::sleep(Duration::from_millis(150)).await;
    // The backgrounded sleep outlives its parent and is adopted by the unit.
    assert!(!descendants(unit_pid).is_empty(), "orphan was not adopted");
    tokio::time::sleep(Duration::from_millis(1000)).await;
    assert_eq!(zombie_children(unit_pid), Vec::<u32>::new());
    assert!(descendants(unit_pid).is_empty());
}

#[tokio::test]
async fn shutdown_stops_programs_and_exits() {
    let dir = tempfile::tempdir().unwrap();
    let mut unit = spawn_unit(dir.path(), &program("svc", "/bin/sleep 30", "startsecs=0")).await;
    unit.client.start_process("svc", true).await.unwrap();
    let pid = unit.client.get_process_info("svc").await.unwrap().pid;
    unit.client.shutdown().await.unwrap();
    let began = Instant::now();
    let status = loop {
        if let Some(s) = unit.child.try_wait().unwrap() {
            break s;
        }
        assert!(began.elapsed() < Duration::from_secs(15));
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert!(status.success());
    assert!(!process_alive(pid.unwrap()));
}
