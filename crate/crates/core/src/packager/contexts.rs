use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::enrich::{EnrichedModel, MANAGER_SERVICE};
use super::supervisor::generate_supervisor_config;
use super::{layout, PackagerError};
use crate::tosca::{ArtifactKind, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    Unit,
    Manager,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileSource {
    /// Copied from the unpacked archive.
    Archive(PathBuf),
    Inline(String),
}

/// Files and dockerfile for one toskosed image.
#[derive(Debug, Clone)]
pub struct BuildContext {
    pub container: String,
    pub kind: ContextKind,
    /// Context-relative path → content.
    pub files: IndexMap<String, FileSource>,
    pub dockerfile: String,
}

impl BuildContext {
    /// Write the context, dockerfile included, under `dir`, replacing whatever was there.
    pub fn materialize(&self, dir: &Path) -> Result<(), PackagerError> {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::create_dir_all(dir)?;
        for (rel, source) in &self.files {
            let dest = dir.join(rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent)?;
            }
            match source {
                FileSource::Archive(src) => {
                    fs::copy(src, &dest)?;
                }
                FileSource::Inline(text) => fs::write(&dest, text)?,
            }
        }
        fs::write(dir.join(layout::DOCKERFILE), &self.dockerfile)?;
        Ok(())
    }
}

/// Where context files come from: the unpacked archive and its entry template.
#[derive(Debug, Clone, Copy)]
pub struct ContextSources<'a> {
    pub archive_root: &'a Path,
    pub template_document: &'a str,
    pub config_document: &'a str,
}

/// One unit context per hosting container plus the manager context.
pub fn generate_contexts(m: &EnrichedModel, src: ContextSources<'_>) -> Result<Vec<BuildContext>, PackagerError> {
    let mut out = Vec::new();
    for container in m.classification.hosting.keys() {
        out.push(unit_context(m, container, src.archive_root)?);
    }
    let mut files = IndexMap::new();
    files.insert(layout::CONTEXT_TEMPLATE.to_owned(), FileSource::Inline(src.template_document.to_owned()));
    files.insert(layout::CONTEXT_CONFIG.to_owned(), FileSource::Inline(src.config_document.to_owned()));
    out.push(BuildContext {
        container: MANAGER_SERVICE.to_owned(),
        kind: ContextKind::Manager,
        files,
        dockerfile: manager_dockerfile(&m.images[MANAGER_SERVICE].base_image),
    });
    Ok(out)
}

fn unit_context(m: &EnrichedModel, container: &str, root: &Path) -> Result<BuildContext, PackagerError> {
    let mut files = IndexMap::new();
    files.insert(layout::CONTEXT_UNIT_CONFIG.to_owned(), FileSource::Inline(generate_supervisor_config(m, container)?));
    let mut add = |rel: String, archive_path: &str, component: &str| -> Result<(), PackagerError> {
        let abs = resolve(root, archive_path).ok_or_else(|| PackagerError::MissingArtifact {
            component: component.to_owned(),
            path: archive_path.to_owned(),
        })?;
        match files.get(&rel) {
            Some(FileSource::Archive(prev)) if *prev != abs => {
                Err(PackagerError::ContextCollision { container: container.to_owned(), path: rel })
            }
            _ => {
                files.insert(rel, FileSource::Archive(abs));
                Ok(())
            }
        }
    };
    for p in &m.programs[container] {
        add(layout::context_script(&p.component, &p.archive_path), &p.archive_path, &p.component)?;
    }
    for component in &m.classification.hosting[container] {
        let node = m.template.node(component).expect("classified component exists");
        debug_assert_eq!(node.kind, NodeKind::Software);
        for a in node.artifacts.iter().filter(|a| a.kind == ArtifactKind::File) {
            add(layout::context_artifact(component, &a.path), &a.path, component)?;
        }
    }
    let components = &m.classification.hosting[container];
    Ok(BuildContext {
        container: container.to_owned(),
        kind: ContextKind::Unit,
        dockerfile: unit_dockerfile(&m.base_images.unit, &m.images[container].base_image, components),
        files,
    })
}

fn resolve(root: &Path, archive_path: &str) -> Option<PathBuf> {
    if !crate::tosca::is_enclosed_path(archive_path) {
        return None;
    }
    let path = root.join(archive_path);
    path.is_file().then_some(path)
}

/// Multi-stage: the unit binary is taken from the unit image and dropped
/// into the container's original image together with the generated files.
pub fn unit_dockerfile(unit_image: &str, base_image: &str, components: &[String]) -> String {
    let mut d = format!("FROM {unit_image} AS unit\n\nFROM {base_image}\n");
    d.push_str(&format!("COPY --from=unit {bin} {bin}\n", bin = layout::UNIT_BINARY));
    d.push_str(&format!("COPY {} {}\n", layout::CONTEXT_UNIT_CONFIG, layout::UNIT_CONFIG));
    for c in components {
        d.push_str(&format!("COPY {c}/ {}/\n", layout::app_dir(c)));
    }
    d.push_str(&format!("RUN mkdir -p {}\n", layout::LOG_ROOT));
    d.push_str(&format!(
        "ENTRYPOINT [\"{}\", \"unit\", \"--config\", \"{}\"]\n",
        layout::UNIT_BINARY,
        layout::UNIT_CONFIG
    ));
    d
}

pub fn manager_dockerfile(manager_image: &str) -> String {
    format!(
        "FROM {manager_image}\nCOPY {} {} {}/\nCMD [\"manager\", \"--template\", \"{}\", \"--config\", \"{}\"]\n",
        layout::CONTEXT_TEMPLATE,
        layout::CONTEXT_CONFIG,
        layout::MANAGER_DIR,
        layout::MANAGER_TEMPLATE,
        layout::MANAGER_CONFIG,
    )
}
