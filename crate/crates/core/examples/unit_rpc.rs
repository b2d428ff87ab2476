//! Run a process supervisor in-process and drive it over XML-RPC.
//!
//! cargo run --example unit_rpc

use std::sync::Arc;

use toskose::unit::{load_unit_config_with, rpc_router, ProgramSpec, Supervisor, SupervisorOptions, UnitClient};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let logs = tempfile::tempdir()?;
    let doc = "[inet_http_server]\nport=127.0.0.1:0\nusername=user\npassword=secret\n";
    let mut config = load_unit_config_with(doc, |_| None)?;
    let mut greet = ProgramSpec::new("greet", &["/bin/sh", "-c", "echo hello from $(hostname)"], logs.path());
    greet.startsecs = 0.0;
    let mut serve = ProgramSpec::new("serve", &["/bin/sleep", "60"], logs.path());
    serve.startsecs = 0.5;
    for p in [greet, serve] {
        config.programs.insert(p.name.clone(), p);
    }

    let supervisor = Supervisor::spawn(config, SupervisorOptions::default());
    let mut transitions = supervisor.subscribe();
    tokio::spawn(async move {
        while let Ok(t) = transitions.recv().await {
            println!("  {}: {} -> {}", t.program, t.from, t.to);
        }
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = rpc_router(supervisor.clone(), Arc::new(tokio::sync::Notify::new()));
    tokio::spawn(async move { axum::serve(listener, app).await });

    let client = UnitClient::new(&addr.to_string(), "user", "secret");
    println!("state: {:?}", client.get_state().await?);
    client.start_process("serve", true).await?;
    client.start_process("greet", true).await?;
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    print!("greet said: {}", client.read_stdout_log("greet", 0, 1024).await?);
    for info in client.get_all_process_info().await? {
        println!("{:<6} {} pid {:?}", info.name, info.state, info.pid);
    }
    client.stop_process("serve", true).await?;
    supervisor.shutdown().await;
    Ok(())
}
