use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use thiserror::Error;

use super::contexts::BuildContext;
use super::enrich::ImagePlan;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("image builder unavailable: {0}")]
    BuilderUnavailable(String),
    #[error("building `{image}` failed: {reason}")]
    BuildFailed { image: String, reason: String },
    #[error("pushing `{image}` failed: {reason}")]
    PushFailed { image: String, reason: String },
}

/// Turns a materialised context directory into an image.
pub trait ImageBuilder {
    fn build(&mut self, context_dir: &Path, image: &str) -> Result<(), BuildError>;
    fn push(&mut self, image: &str, registry_password: Option<&str>) -> Result<(), BuildError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildRequest {
    Build { context_dir: PathBuf, image: String },
    Push { image: String },
}

/// Builds nothing; records what would have been requested.
#[derive(Debug, Default)]
pub struct DryRunBuilder {
    pub requests: Vec<BuildRequest>,
}

impl DryRunBuilder {
    pub fn pushes(&self) -> usize {
        self.requests.iter().filter(|r| matches!(r, BuildRequest::Push { .. })).count()
    }
}

impl ImageBuilder for DryRunBuilder {
    fn build(&mut self, context_dir: &Path, image: &str) -> Result<(), BuildError> {
        self.requests.push(BuildRequest::Build { context_dir: context_dir.to_owned(), image: image.to_owned() });
        Ok(())
    }

    fn push(&mut self, image: &str, _registry_password: Option<&str>) -> Result<(), BuildError> {
        self.requests.push(BuildRequest::Push { image: image.to_owned() });
        Ok(())
    }
}

/// Talks to a container engine's HTTP API (`/build`, `/images/{name}/push`).
pub struct EngineBuilder {
    base: String,
    client: reqwest::blocking::Client,
}

impl EngineBuilder {
    /// Connect and ping the engine at an `http(s)://` or `tcp://` URL.
    pub fn connect(url: &str) -> Result<Self, BuildError> {
        let base = match url.strip_prefix("tcp://") {
            Some(rest) => format!("http://{rest}"),
            None if url.starts_with("http://") || url.starts_with("https://") => url.to_owned(),
            None => {
                return Err(BuildError::BuilderUnavailable(format!(
                    "unsupported engine URL `{url}`; use http:// or tcp://"
                )))
            }
        };
        let base = base.trim_end_matches('/').to_owned();
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(None)
            .build()
            .map_err(|e| BuildError::BuilderUnavailable(e.to_string()))?;
        client
            .get(format!("{base}/_ping"))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| BuildError::BuilderUnavailable(e.to_string()))?;
        Ok(Self { base, client })
    }

    /// The engine streams JSON progress lines; a failure is a line with `error`.
    fn check_stream(body: &str) -> Result<(), String> {
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
                if let Some(err) = v.get("error").and_then(|e| e.as_str()) {
                    return Err(err.to_owned());
                }
            }
        }
        Ok(())
    }
}

impl ImageBuilder for EngineBuilder {
    fn build(&mut self, context_dir: &Path, image: &str) -> Result<(), BuildError> {
        let failed = |reason: String| BuildError::BuildFailed { image: image.to_owned(), reason };
        let mut tarball = tar::Builder::new(Vec::new());
        tarball.append_dir_all(".", context_dir).map_err(|e| failed(e.to_string()))?;
        let body = tarball.into_inner().map_err(|e| failed(e.to_string()))?;
        let resp = self
            .client
            .post(format!("{}/build", self.base))
            .query(&[("t", image), ("rm", "1")])
            .header("Content-Type", "application/x-tar")
            .body(body)
            .send()
            .map_err(|e| failed(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| failed(e.to_string()))?;
        if !status.is_success() {
            return Err(failed(format!("{status}: {text}")));
        }
        Self::check_stream(&text).map_err(failed)
    }

    fn push(&mut self, image: &str, registry_password: Option<&str>) -> Result<(), BuildError> {
        let failed = |reason: String| BuildError::PushFailed { image: image.to_owned(), reason };
        let (name, tag) = split_reference(image);
        let auth = serde_json::json!({
            "username": name.split('/').next().unwrap_or_default(),
            "password": registry_password.unwrap_or_default(),
        });
        let resp = self
            .client
            .post(format!("{}/images/{name}/push", self.base))
            .query(&[("tag", tag)])
            .header("X-Registry-Auth", base64::engine::general_purpose::URL_SAFE.encode(auth.to_string()))
            .send()
            .map_err(|e| failed(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| failed(e.to_string()))?;
        if !status.is_success() {
            return Err(failed(format!("{status}: {text}")));
        }
        Self::check_stream(&text).map_err(failed)
    }
}

/// `repo/name:tag` → (`repo/name`, `tag`); the tag defaults to `latest`.
pub fn split_reference(image: &str) -> (&str, &str) {
    match image.rsplit_once(':') {
        Some((name, tag)) if !tag.contains('/') => (name, tag),
        _ => (image, "latest"),
    }
}

/// Build every context (already materialised under `contexts_dir/<container>`)
/// and push when asked. Returns the image reference of each context.
pub fn build_images(
    contexts: &[BuildContext],
    plans: &indexmap::IndexMap<String, ImagePlan>,
    contexts_dir: &Path,
    builder: &mut dyn ImageBuilder,
    push: bool,
) -> Result<Vec<String>, BuildError> {
    let mut refs = Vec::new();
    for ctx in contexts {
        let plan = &plans[&ctx.container];
        builder.build(&contexts_dir.join(&ctx.container), &plan.target_image)?;
        if push {
            builder.push(&plan.target_image, plan.registry_password.as_deref())?;
        }
        refs.push(plan.target_image.clone());
    }
    Ok(refs)
}
