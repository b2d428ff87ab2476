//! Command-line entry points. The first argument selects the role: `unit`,
//! `manager` and `harness` run the daemons and the local harness; anything
//! else is the packager.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use tracing::Level;

use crate::harness::{launch_local, DeploymentState, HarnessManifest, HarnessOptions, MANIFEST_FILE, STATE_FILE};
use crate::packager::{layout, run_pipeline, PipelineOptions};
use crate::unit::ReapMode;

pub const REPOSITORY_ENV: &str = "TOSKOSE_IMAGE_REPOSITORY";

#[derive(Debug, Parser)]
#[command(name = "toskose", version, about = "Generate toskosed images and a Compose file from a CSAR")]
pub struct PackagerArgs {
    /// CSAR archive (.csar or .zip)
    pub csar_path: PathBuf,
    /// Toskose configuration; defaults fill whatever is missing
    pub config_path: Option<PathBuf>,
    /// Where to place the generated artifacts
    #[arg(short = 'o', long = "output-path", default_value = ".")]
    pub output_path: PathBuf,
    /// Push built images to their registry
    #[arg(short = 'p', long = "enable-push")]
    pub enable_push: bool,
    /// Container engine API; without it images are planned but not built
    #[arg(long = "docker-url")]
    pub docker_url: Option<String>,
    /// Owner prefix for default image names
    #[arg(long, env = REPOSITORY_ENV)]
    pub repository: Option<String>,
    /// Print diagnostics as JSON lines only
    #[arg(short, long)]
    pub quiet: bool,
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Parser)]
#[command(name = "toskose unit", about = "Run the process supervisor of a container")]
pub struct UnitArgs {
    #[arg(long, default_value = layout::UNIT_CONFIG)]
    pub config: PathBuf,
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Parser)]
#[command(name = "toskose manager", about = "Run the orchestration REST service")]
pub struct ManagerArgs {
    #[arg(long, default_value = layout::MANAGER_TEMPLATE)]
    pub template: PathBuf,
    #[arg(long, default_value = layout::MANAGER_CONFIG)]
    pub config: PathBuf,
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Parser)]
#[command(name = "toskose harness", about = "Run generated artifacts as local processes")]
pub struct HarnessArgs {
    #[command(subcommand)]
    pub command: HarnessCommand,
}

#[derive(Debug, Subcommand)]
pub enum HarnessCommand {
    /// Launch every service and record the deployment in the artifact directory
    Up {
        artifact_dir: PathBuf,
        /// Stub commands for standalone services (default: <artifact_dir>/harness.yml)
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        sandbox: Option<PathBuf>,
    },
    /// Stop a deployment started with `up`
    Down { artifact_dir: PathBuf },
    /// Accept TCP connections on a port; the default standalone stub
    Stub {
        #[arg(long)]
        port: u16,
    },
}

fn init_logging(debug: bool) {
    let level = if debug { Level::DEBUG } else { Level::INFO };
    let _ = tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).try_init();
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Runtime::new().expect("tokio runtime")
}

fn failure(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::FAILURE
}

/// Run with explicit arguments, `args[0]` being the program name.
pub fn run(args: Vec<OsString>) -> ExitCode {
    let role = args.get(1).and_then(|a| a.to_str()).unwrap_or_default();
    let rest = || std::iter::once(OsString::from(format!("toskose {role}"))).chain(args[2..].iter().cloned());
    match role {
        "unit" => run_unit(UnitArgs::parse_from(rest())),
        "manager" => run_manager(ManagerArgs::parse_from(rest())),
        "harness" => run_harness(HarnessArgs::parse_from(rest())),
        _ => run_packager(PackagerArgs::parse_from(args)),
    }
}

fn run_unit(args: UnitArgs) -> ExitCode {
    init_logging(args.debug);
    match runtime().block_on(crate::unit::run_unit(&args.config, ReapMode::AllChildren)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(e),
    }
}

fn run_manager(args: ManagerArgs) -> ExitCode {
    init_logging(args.debug);
    match runtime().block_on(crate::manager::run_manager(&args.template, &args.config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(e),
    }
}

fn run_harness(args: HarnessArgs) -> ExitCode {
    init_logging(false);
    match args.command {
        HarnessCommand::Up { artifact_dir, manifest, sandbox } => {
            let manifest_path = manifest.unwrap_or_else(|| artifact_dir.join(MANIFEST_FILE));
            let manifest = match std::fs::read_to_string(&manifest_path) {
                Ok(text) => match HarnessManifest::from_yaml(&text) {
                    Ok(m) => m,
                    Err(e) => return failure(e),
                },
                Err(_) => HarnessManifest::default(),
            };
            let exe = match std::env::current_exe() {
                Ok(p) => p,
                Err(e) => return failure(e),
            };
            let mut options = HarnessOptions::new(exe);
            options.manifest = manifest;
            options.sandbox_root = sandbox;
            let state = match launch_local(&artifact_dir, &options) {
                Ok(d) => d.detach(),
                Err(e) => return failure(e),
            };
            if let Err(e) = state.save(&artifact_dir.join(STATE_FILE)) {
                state.teardown();
                return failure(e);
            }
            for svc in &state.services {
                println!(
                    "{:<20} {:<8} pid {:<8} 127.0.0.1:{}",
                    svc.name,
                    format!("{:?}", svc.kind).to_lowercase(),
                    svc.pid,
                    svc.port
                );
            }
            ExitCode::SUCCESS
        }
        HarnessCommand::Down { artifact_dir } => {
            let path = artifact_dir.join(STATE_FILE);
            match DeploymentState::load(&path) {
                Ok(state) => {
                    state.teardown();
                    let _ = std::fs::remove_file(path);
                    ExitCode::SUCCESS
                }
                Err(e) => failure(e),
            }
        }
        HarnessCommand::Stub { port } => match crate::harness::run_stub(port) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => failure(e),
        },
    }
}

fn run_packager(args: PackagerArgs) -> ExitCode {
    if !args.quiet {
        init_logging(args.debug);
    }
    let options = PipelineOptions {
        output_path: args.output_path,
        push: args.enable_push,
        docker_url: args.docker_url,
        repository: args.repository,
        ..PipelineOptions::default()
    };
    match run_pipeline(&args.csar_path, args.config_path.as_deref(), &options) {
        Ok(result) => {
            if args.quiet {
                for d in &result.diagnostics.diagnostics {
                    println!("{}", json!({"event": "diagnostic", "diagnostic": d}));
                }
                println!(
                    "{}",
                    json!({
                        "event": "done",
                        "compose": result.compose_path,
                        "config": result.config_path,
                        "images": result.images,
                    })
                );
            } else {
                for d in &result.diagnostics.diagnostics {
                    eprintln!("{d}");
                }
                println!("compose file: {}", result.compose_path.display());
                println!("configuration: {}", result.config_path.display());
                for image in &result.images {
                    println!("image: {image}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if args.quiet {
                if let Some(report) = e.report() {
                    for d in &report.diagnostics {
                        println!("{}", json!({"event": "diagnostic", "stage": e.stage.to_string(), "diagnostic": d}));
                    }
                }
                println!(
                    "{}",
                    json!({"event": "failed", "stage": e.stage.to_string(), "message": e.failure.to_string()})
                );
                ExitCode::FAILURE
            } else {
                failure(e)
            }
        }
    }
}
