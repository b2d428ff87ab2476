//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every criterion reports even when an earlier one fails.

mod common;

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_yaml::Value;
use toskose::config::parse_config;
use toskose::harness::{launch_local, HarnessManifest, HarnessOptions};
use toskose::packager::{run_pipeline, Failure, PipelineOptions, Stage};
use toskose::tosca::CsarError;
use toskose::unit::{
    faults, load_unit_config_with, rpc_router, ProcessState, ProgramSpec, Supervisor, SupervisorOptions, UnitClient,
    UnitConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn options(out: &Path) -> PipelineOptions {
    PipelineOptions { output_path: out.to_path_buf(), repository: Some("giulen".into()), ..PipelineOptions::default() }
}

fn env_of(service: &Value) -> BTreeMap<String, String> {
    service["environment"]
        .as_sequence()
        .into_iter()
        .flatten()
        .filter_map(|e| e.as_str()?.split_once('=').map(|(k, v)| (k.to_owned(), v.to_owned())))
        .collect()
}

// ------------------------------------------------------------------ criteria

fn compose_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csar = thinking_csar(dir.path());
    let config_path = fixture("thinking/toskose.yml");
    let out = dir.path().join("out");
    let began = Instant::now();
    let result = run_pipeline(&csar, Some(&config_path), &options(&out)).map_err(|e| e.to_string())?;
    let elapsed = began.elapsed();

    let produced = yaml_file(&result.compose_path);
    let golden = yaml_file(&fixture("thinking/docker-compose.golden.yml"));
    check(canonical(&produced) == canonical(&golden), "compose differs from the golden file")?;

    let services = produced["services"].as_mapping().unwrap();
    check(services.len() == 4, format!("{} services", services.len()))?;
    let mongo = &produced["services"]["mongodb"];
    check(mongo["image"].as_str() == Some("mongo:3.4"), "mongodb image")?;
    check(mongo["volumes"] == serde_yaml::from_str::<Value>("[dbvolume:/data/db]").unwrap(), "mongodb volumes")?;

    let config = yaml_file(&config_path);
    for c in ["maven", "node"] {
        let svc = &produced["services"][c];
        check(svc["init"].as_bool() == Some(true), format!("{c} init"))?;
        let env = env_of(svc);
        let n = &config["nodes"][c];
        let expect = [
            ("SUPERVISORD_ALIAS", n["alias"].as_str().unwrap().to_owned()),
            ("SUPERVISORD_PORT", n["port"].as_i64().unwrap().to_string()),
            ("SUPERVISORD_USER", n["user"].as_str().unwrap().to_owned()),
            ("SUPERVISORD_PASSWORD", n["password"].as_str().unwrap().to_owned()),
            ("SUPERVISORD_LOG_LEVEL", n["log_level"].as_str().unwrap().to_owned()),
        ];
        for (k, v) in expect {
            check(env.get(k) == Some(&v), format!("{c} {k}={:?}, configured {v}", env.get(k)))?;
        }
    }
    let manager = &produced["services"]["toskose-manager"];
    let env = env_of(manager);
    let m = &config["manager"];
    check(env.get("TOSKOSE_MANAGER_PORT") == Some(&m["port"].as_i64().unwrap().to_string()), "manager port env")?;
    check(env.get("TOSKOSE_APP_MODE").map(String::as_str) == m["mode"].as_str(), "manager mode env")?;
    check(env.get("SECRET_KEY").map(String::as_str) == m["secret_key"].as_str(), "manager secret env")?;
    check(manager["ports"] == serde_yaml::from_str::<Value>("['12000:12000/tcp']").unwrap(), "manager ports")?;
    let net = &produced["networks"]["toskose-network"];
    check(net["driver"].as_str() == Some("overlay") && net["attachable"].as_bool() == Some(true), "network")?;
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("structurally equal to golden, {elapsed:.2?}"))
}

fn default_completion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csar = thinking_csar(dir.path());
    let out = dir.path().join("out");
    let result = run_pipeline(&csar, None, &options(&out)).map_err(|e| e.to_string())?;
    let written = yaml_file(&result.config_path);
    let golden = yaml_file(&fixture("thinking/toskose.defaults.golden.yml"));
    check(
        written == golden,
        format!("completed config differs:\n{}", fs::read_to_string(&result.config_path).unwrap()),
    )?;
    let reparsed = parse_config(&fs::read_to_string(fixture("thinking/toskose.defaults.golden.yml")).unwrap())
        .map_err(|e| e.to_string())?;
    check(reparsed == result.config, "in-memory completed config differs from golden")?;
    Ok("completed config equals the golden defaults".into())
}

fn end_to_end() -> Outcome {
    let began = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let csar = thinking_csar(dir.path());
    let config_path = fixture("thinking/toskose.yml");
    let out = dir.path().join("out");
    run_pipeline(&csar, Some(&config_path), &options(&out)).map_err(|e| e.to_string())?;

    let mut opts = HarnessOptions::new(TOSKOSE);
    opts.sandbox_root = Some(dir.path().join("sandbox"));
    opts.manifest = HarnessManifest::from_yaml(&fs::read_to_string(fixture("thinking/harness.yml")).unwrap()).unwrap();
    let mut deployment = launch_local(&out, &opts).map_err(|e| e.to_string())?;

    let config = yaml_file(&config_path);
    let (user, password) =
        (config["manager"]["user"].as_str().unwrap(), config["manager"]["password"].as_str().unwrap());
    let base = format!("http://{}/api/v1/node", deployment.manager_endpoint().unwrap());
    let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(60)).build().unwrap();
    let post = |path: &str| -> Result<serde_json::Value, String> {
        let resp = http
            .post(format!("{base}/{path}"))
            .basic_auth(user, Some(password))
            .header("accept", "application/json")
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let body: serde_json::Value =
            serde_json::from_str(&resp.text().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(status.is_success() && body["outcome"] == "SUCCESS", format!("{path}: {status} {body}"))?;
        Ok(body)
    };
    let sequence = [
        "maven/api/create",
        "maven/api/configure",
        "maven/api/push_default",
        "maven/api/start",
        "maven/logsniffer/create",
        "maven/logsniffer/start",
        "node/gui/create",
        "node/gui/configure",
        "node/gui/start",
    ];
    for path in sequence {
        post(path)?;
    }

    // Ask the unit directly, not the manager.
    let rt = tokio::runtime::Runtime::new().unwrap();
    let unit_cfg = &config["nodes"]["maven"];
    let unit = UnitClient::new(
        deployment.resolve_alias("maven").map_err(|e| e.to_string())?,
        unit_cfg["user"].as_str().unwrap(),
        unit_cfg["password"].as_str().unwrap(),
    );
    let state_of = |name: &str| rt.block_on(unit.get_process_info(name)).map(|i| i.state).map_err(|e| e.to_string());

    post("maven/api/stop")?;
    check(state_of("api-start")? == ProcessState::Stopped, "api-start not STOPPED after stop")?;
    check(state_of("logsniffer-start")? == ProcessState::Running, "logsniffer-start not RUNNING")?;
    for c in ["maven", "node"] {
        let pid = deployment.service(c).unwrap().pid;
        check(process_alive(pid), format!("unit of {c} died"))?;
    }
    post("maven/api/start")?;
    check(state_of("api-start")? == ProcessState::Running, "api-start not RUNNING after restart")?;

    deployment.teardown();
    let elapsed = began.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("11 operations succeeded, {elapsed:.2?}"))
}

#[derive(Debug, Clone)]
enum Op {
    Start(usize, bool),
    Stop(usize, bool),
    Info(usize),
    All,
    Pause(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..3usize, any::<bool>()).prop_map(|(p, w)| Op::Start(p, w)),
        3 => (0..3usize, any::<bool>()).prop_map(|(p, w)| Op::Stop(p, w)),
        1 => (0..3usize).prop_map(Op::Info),
        1 => Just(Op::All),
        1 => (0..30u64).prop_map(Op::Pause),
    ]
}

const PROGRAMS: [&str; 3] = ["oneshot", "service", "crasher"];

fn three_program_unit(logs: &Path) -> UnitConfig {
    let mut oneshot = ProgramSpec::new("oneshot", &["/bin/sh", "-c", "echo done"], logs);
    oneshot.startsecs = 0.2;
    let mut service = ProgramSpec::new("service", &["/bin/sh", "-c", "exec sleep 30"], logs);
    service.startsecs = 0.05;
    let mut crasher = ProgramSpec::new("crasher", &["/bin/sh", "-c", "exit 3"], logs);
    crasher.startsecs = 0.2;
    let doc = "[inet_http_server]\nport=127.0.0.1:0\nusername=u\npassword=p\n";
    let mut config = load_unit_config_with(doc, |_| None).unwrap();
    config.programs = [oneshot, service, crasher].into_iter().map(|p| (p.name.clone(), p)).collect();
    config
}

fn unit_state_machine() -> Outcome {
    let logs = tempfile::tempdir().unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (sup, client) = rt.block_on(async {
        let sup = Supervisor::spawn(three_program_unit(logs.path()), SupervisorOptions::default());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = rpc_router(sup.clone(), Arc::new(tokio::sync::Notify::new()));
        tokio::spawn(async move { axum::serve(listener, app).await });
        (sup, UnitClient::new(&addr.to_string(), "u", "p"))
    });
    let events = RefCell::new(sup.subscribe());
    let last: RefCell<BTreeMap<String, ProcessState>> =
        RefCell::new(PROGRAMS.iter().map(|p| (p.to_string(), ProcessState::Stopped)).collect());
    let known_faults = [faults::ALREADY_STARTED, faults::NOT_RUNNING, faults::ABNORMAL_TERMINATION];
    let me = std::process::id();
    let transitions = Cell::new(0usize);

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let verdict = runner.run(&prop::collection::vec(op(), 1..8), |seq| {
        rt.block_on(async {
            for op in &seq {
                let r = match op {
                    Op::Start(p, w) => client.start_process(PROGRAMS[*p], *w).await.map(|_| ()),
                    Op::Stop(p, w) => client.stop_process(PROGRAMS[*p], *w).await.map(|_| ()),
                    Op::Info(p) => client.get_process_info(PROGRAMS[*p]).await.map(|_| ()),
                    Op::All => client.get_all_process_info().await.map(|_| ()),
                    Op::Pause(ms) => {
                        tokio::time::sleep(Duration::from_millis(*ms)).await;
                        Ok(())
                    }
                };
                if let Err(e) = r {
                    prop_assert!(e.fault_code().is_some_and(|c| known_faults.contains(&c)), "{op:?}: {e}");
                }
            }
            // Settle: stop whatever still runs, then wait for final states.
            for p in PROGRAMS {
                let _ = client.stop_process(p, true).await;
            }
            loop {
                let all = client.get_all_process_info().await.unwrap();
                if all.iter().all(|i| !i.state.has_process()) {
                    break;
                }
                tokio::time::sleep(Duration::from_millis(5)).await;
            }
            sup.reap().await;
            let zombies = zombie_children(me);
            prop_assert!(zombies.is_empty(), "defunct children {zombies:?} after {seq:?}");
            while let Ok(t) = events.borrow_mut().try_recv() {
                let prev = last.borrow_mut().insert(t.program.clone(), t.to).unwrap();
                prop_assert_eq!(prev, t.from, "discontinuity in {:?}", t);
                prop_assert!(t.from.can_transition(t.to), "illegal {:?} after {:?}", t, seq);
                transitions.set(transitions.get() + 1);
            }
            Ok(())
        })
    });
    rt.block_on(sup.shutdown());
    verdict.map_err(|e| e.to_string())?;
    Ok(format!("1000 sequences, {} transitions, all legal, no defunct children", transitions.get()))
}

/// Kills and waits for the child on every exit path.
struct Reaped(std::process::Child);

impl Drop for Reaped {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn signal_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut doc = format!(
        "[inet_http_server]\nport=127.0.0.1:{port}\nusername=u\npassword=p\n\n[supervisord]\nchildlogdir={d}/logs\n"
    );
    for i in 1..=2 {
        doc.push_str(&format!(
            "\n[program:trap{i}]\ncommand=/bin/sh -c 'trap \"echo TERM > {d}/marker{i}; exit 0\" TERM; while :; do sleep 0.1; done'\nstartsecs=0.3\nstdout_logfile={d}/logs/trap{i}.out\nstderr_logfile={d}/logs/trap{i}.err\n"
        ));
    }
    let conf = dir.path().join("unit.conf");
    fs::write(&conf, doc).unwrap();
    let grace = ProgramSpec::new("x", &["x"], dir.path()).stopwaitsecs;

    let mut child = Reaped(
        Command::new(TOSKOSE)
            .args(["unit", "--config"])
            .arg(&conf)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let rt = tokio::runtime::Runtime::new().unwrap();
    let client = UnitClient::new(&format!("127.0.0.1:{port}"), "u", "p");
    let ready = Instant::now();
    while rt.block_on(client.get_state()).is_err() {
        if ready.elapsed() > Duration::from_secs(10) {
            return Err("unit never listened".into());
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    for i in 1..=2 {
        rt.block_on(client.start_process(&format!("trap{i}"), true)).map_err(|e| e.to_string())?;
        let info = rt.block_on(client.get_process_info(&format!("trap{i}"))).map_err(|e| e.to_string())?;
        check(info.state == ProcessState::Running, format!("trap{i} is {}", info.state))?;
    }

    let began = Instant::now();
    nix::sys::signal::kill(nix::unistd::Pid::from_raw(child.0.id() as i32), nix::sys::signal::Signal::SIGTERM).unwrap();
    let bound = Duration::from_secs_f64(grace + 5.0);
    let status = loop {
        if let Some(status) = child.0.try_wait().unwrap() {
            break status;
        }
        if began.elapsed() > bound {
            return Err(format!("unit still running after {bound:?}"));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let elapsed = began.elapsed();
    check(status.success(), format!("unit exited with {status}"))?;
    for i in 1..=2 {
        let marker = dir.path().join(format!("marker{i}"));
        check(marker.exists(), format!("no signal marker from trap{i}"))?;
    }
    Ok(format!("both markers written, clean exit in {elapsed:.2?} (bound {bound:?})"))
}

fn validation_gates() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csar = thinking_csar(dir.path());

    // (a) wrong extension
    let wrong = dir.path().join("thinking.tar");
    fs::copy(&csar, &wrong).unwrap();
    let out_a = dir.path().join("out-a");
    let err = run_pipeline(&wrong, None, &options(&out_a)).err().ok_or("accepted .tar")?;
    check(
        err.stage == Stage::ReadCsar && matches!(err.failure, Failure::Csar(CsarError::BadExtension(_))),
        format!("(a) {err}"),
    )?;
    check(listing(&out_a).is_empty(), "(a) wrote artifacts")?;

    // (b) software without host
    let tree = thinking_tree(dir.path());
    let yaml = tree.join("thinking.yaml");
    let text = fs::read_to_string(&yaml).unwrap();
    let edited =
        text.replacen("        - host: maven\n        - connection: mongodb\n", "        - connection: mongodb\n", 1);
    check(edited != text, "(b) fixture edit did not apply")?;
    fs::write(&yaml, edited).unwrap();
    let hostless = dir.path().join("hostless.csar");
    toskose::tosca::pack_csar(&tree, &hostless).unwrap();
    let out_b = dir.path().join("out-b");
    let err = run_pipeline(&hostless, None, &options(&out_b)).err().ok_or("accepted host-less software")?;
    check(err.report().is_some_and(|r| r.has_code("software-without-host")), format!("(b) {err}"))?;
    check(listing(&out_b).is_empty(), "(b) wrote artifacts")?;

    // (c) configuration for a standalone container
    let cfg = dir.path().join("standalone.yml");
    fs::write(&cfg, "nodes:\n  mongodb:\n    port: 9001\n").unwrap();
    let out_c = dir.path().join("out-c");
    let err = run_pipeline(&csar, Some(&cfg), &options(&out_c)).err().ok_or("accepted config for mongodb")?;
    check(err.report().is_some_and(|r| r.has_code("config-for-standalone")), format!("(c) {err}"))?;
    check(listing(&out_c).is_empty(), "(c) wrote artifacts")?;
    Ok("BadExtension, software-without-host, config-for-standalone; nothing written".into())
}

/// Expected programs per container, read from the raw template YAML.
fn oracle_programs(template: &Value) -> BTreeMap<String, BTreeSet<String>> {
    let nodes = template["topology_template"]["node_templates"].as_mapping().unwrap();
    let host_of = |n: &Value| -> Option<String> {
        n["requirements"].as_sequence()?.iter().find_map(|r| {
            r["host"].as_str().map(str::to_owned).or_else(|| r["host"]["node"].as_str().map(str::to_owned))
        })
    };
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (name, node) in nodes {
        let Some(ops) = node["interfaces"]["Standard"].as_mapping() else { continue };
        let name = name.as_str().unwrap();
        let mut container = host_of(node).unwrap();
        while let Some(next) = host_of(&nodes[container.as_str()]) {
            container = next;
        }
        for op in ops.keys() {
            out.entry(container.clone()).or_default().insert(format!("{name}-{}", op.as_str().unwrap()));
        }
    }
    out
}

fn round_trip() -> Outcome {
    let template: Value =
        serde_yaml::from_str(&fs::read_to_string(fixture("thinking/csar/thinking.yaml")).unwrap()).unwrap();
    let expected = oracle_programs(&template);
    let mut checked = 0;
    for config in [Some(fixture("thinking/toskose.yml")), None] {
        let dir = tempfile::tempdir().unwrap();
        let csar = thinking_csar(dir.path());
        let out = dir.path().join("out");
        let result = run_pipeline(&csar, config.as_deref(), &options(&out)).map_err(|e| e.to_string())?;
        let compose = yaml_file(&result.compose_path);
        let with_conf: BTreeSet<String> = fs::read_dir(out.join("contexts"))
            .unwrap()
            .flatten()
            .filter(|e| e.path().join("supervisord.conf").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        check(with_conf == expected.keys().cloned().collect(), format!("unit contexts {with_conf:?}"))?;
        for (container, programs) in &expected {
            let doc = fs::read_to_string(out.join("contexts").join(container).join("supervisord.conf")).unwrap();
            let env = env_of(&compose["services"][container.as_str()]);
            let parsed =
                load_unit_config_with(&doc, |k| env.get(k).cloned()).map_err(|e| format!("{container}: {e}"))?;
            let names: BTreeSet<String> = parsed.programs.keys().cloned().collect();
            check(&names == programs, format!("{container}: {names:?} != {programs:?}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} generated configs parse with the expected program sets"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("compose-fidelity", compose_fidelity),
        ("default-completion", default_completion),
        ("end-to-end-lifecycle", end_to_end),
        ("unit-state-machine", unit_state_machine),
        ("signal-contract", signal_contract),
        ("validation-gates", validation_gates),
        ("supervisor-config-round-trip", round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let began = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2?}]", began.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.2?}]", began.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
