//! Paths inside toskosed images and the matching build-context paths.

/// Everything the unit or manager needs lives under this directory.
pub const ROOT: &str = "/toskose";
pub const UNIT_CONFIG: &str = "/toskose/supervisord.conf";
pub const UNIT_BINARY: &str = "/toskose/bin/toskose";
pub const LOG_ROOT: &str = "/toskose/logs";
pub const MANAGER_DIR: &str = "/toskose/manager";
pub const MANAGER_TEMPLATE: &str = "/toskose/manager/template.yaml";
pub const MANAGER_CONFIG: &str = "/toskose/manager/toskose.yml";

pub const CONTEXT_UNIT_CONFIG: &str = "supervisord.conf";
pub const CONTEXT_TEMPLATE: &str = "template.yaml";
pub const CONTEXT_CONFIG: &str = "toskose.yml";
pub const DOCKERFILE: &str = "Dockerfile";

pub fn base_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

pub fn app_dir(component: &str) -> String {
    format!("{ROOT}/apps/{component}")
}

/// Context path of an operation script.
pub fn context_script(component: &str, archive_path: &str) -> String {
    format!("{component}/{}", base_name(archive_path))
}

/// Context path of a non-script artifact.
pub fn context_artifact(component: &str, archive_path: &str) -> String {
    format!("{component}/artifacts/{}", base_name(archive_path))
}

pub fn script_path(component: &str, archive_path: &str) -> String {
    format!("{ROOT}/apps/{}", context_script(component, archive_path))
}

pub fn artifact_path(component: &str, archive_path: &str) -> String {
    format!("{ROOT}/apps/{}", context_artifact(component, archive_path))
}

pub fn program_log(program: &str, stream: &str) -> String {
    format!("{LOG_ROOT}/{program}/{stream}.log")
}
