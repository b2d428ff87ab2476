//! Serve the manager's REST API for the bundled application and query it.
//! No units are running, so the listing reports them as unreachable.
//!
//! cargo run --example manager_api

use std::path::Path;
use std::sync::Arc;

use toskose::manager::{api_router, load_app_model, AliasTable, ManagerService, API_PREFIX};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/thinking");
    let model = load_app_model(
        &std::fs::read_to_string(fixtures.join("csar/thinking.yaml"))?,
        &std::fs::read_to_string(fixtures.join("toskose.defaults.golden.yml"))?,
    )?;
    let (user, password) = (model.config.manager.user.clone(), model.config.manager.password.clone());
    let service = Arc::new(ManagerService::new(model, AliasTable::default()));
    let app = api_router(service, Some((&user, &password)));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}{API_PREFIX}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, app).await });

    let http = reqwest::Client::new();
    for path in ["/node", "/node/maven/api"] {
        let resp = http.get(format!("{base}{path}")).basic_auth(&user, Some(&password)).send().await?;
        println!("GET {path} -> {}\n{}\n", resp.status(), resp.text().await?);
    }
    let resp = http.post(format!("{base}/node/maven/api/create")).basic_auth(&user, Some(&password)).send().await?;
    println!("POST /node/maven/api/create -> {}\n{}", resp.status(), resp.text().await?);
    Ok(())
}
