//! Cloud Service ARchives: a zip holding `TOSCA-Metadata/TOSCA.meta`, the
//! entry template it names and the implementation artifacts.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use tempfile::TempDir;
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{ZipArchive, ZipWriter};

use super::is_enclosed_path;

const METADATA_DIR: &str = "TOSCA-Metadata";
const METADATA_FILE: &str = "TOSCA.meta";
const ENTRY_DEFINITIONS: &str = "Entry-Definitions";

#[derive(Debug, Error)]
pub enum CsarError {
    #[error("`{0}` is not a .csar or .zip archive")]
    BadExtension(PathBuf),
    #[error("archive `{0}` does not exist")]
    NotFound(PathBuf),
    #[error("archive has no {METADATA_DIR} directory")]
    MissingMetadata,
    #[error("missing entry definitions: {0}")]
    MissingEntryDefinitions(String),
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An unpacked archive. The scratch directory is removed on drop.
#[derive(Debug)]
pub struct CsarArchive {
    scratch: TempDir,
    source: PathBuf,
    pub metadata: IndexMap<String, String>,
    /// Archive-relative path of the main service template.
    pub entry_definitions: String,
}

impl CsarArchive {
    pub fn root(&self) -> &Path {
        self.scratch.path()
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    /// File stem of the archive, e.g. `thinking` for `thinking.csar`.
    pub fn stem(&self) -> String {
        self.source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn entry_path(&self) -> PathBuf {
        self.root().join(&self.entry_definitions)
    }

    pub fn read_entry_definitions(&self) -> io::Result<String> {
        fs::read_to_string(self.entry_path())
    }

    /// Absolute path of an archive-relative file, if it exists inside the archive.
    pub fn resolve(&self, relative: &str) -> Option<PathBuf> {
        if !is_enclosed_path(relative) {
            return None;
        }
        let path = self.root().join(relative);
        path.is_file().then_some(path)
    }
}

/// Validate the extension, unpack into a scratch directory and locate the
/// entry template through `TOSCA-Metadata/TOSCA.meta`.
pub fn read_csar(path: impl AsRef<Path>) -> Result<CsarArchive, CsarError> {
    let path = path.as_ref();
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    if !matches!(ext.as_deref(), Some("csar") | Some("zip")) {
        return Err(CsarError::BadExtension(path.to_owned()));
    }
    if !path.is_file() {
        return Err(CsarError::NotFound(path.to_owned()));
    }

    let file = File::open(path)?;
    let mut zip = ZipArchive::new(file).map_err(|e| CsarError::CorruptArchive(e.to_string()))?;
    let scratch = tempfile::Builder::new().prefix("toskose-csar-").tempdir()?;
    zip.extract(scratch.path()).map_err(|e| CsarError::CorruptArchive(e.to_string()))?;

    let meta_dir = scratch.path().join(METADATA_DIR);
    if !meta_dir.is_dir() {
        return Err(CsarError::MissingMetadata);
    }
    let meta_file = meta_dir.join(METADATA_FILE);
    if !meta_file.is_file() {
        return Err(CsarError::MissingEntryDefinitions(format!("{METADATA_DIR}/{METADATA_FILE} not found")));
    }
    let metadata = parse_meta(&fs::read_to_string(&meta_file)?);
    let entry = metadata
        .get(ENTRY_DEFINITIONS)
        .cloned()
        .ok_or_else(|| CsarError::MissingEntryDefinitions(format!("no {ENTRY_DEFINITIONS} key in {METADATA_FILE}")))?;
    if !is_enclosed_path(&entry) || !scratch.path().join(&entry).is_file() {
        return Err(CsarError::MissingEntryDefinitions(format!("entry template `{entry}` not found in archive")));
    }

    Ok(CsarArchive { scratch, source: path.to_owned(), metadata, entry_definitions: entry })
}

/// `Key: Value` lines; blank lines separate blocks and later keys win.
fn parse_meta(text: &str) -> IndexMap<String, String> {
    text.lines()
        .filter_map(|line| line.split_once(':'))
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .collect()
}

/// Zip a directory tree into a CSAR, keeping unix permissions.
pub fn pack_csar(source_dir: impl AsRef<Path>, dest: impl AsRef<Path>) -> Result<(), CsarError> {
    let source_dir = source_dir.as_ref();
    let mut files = Vec::new();
    collect_files(source_dir, source_dir, &mut files)?;
    files.sort();

    let mut zip = ZipWriter::new(File::create(dest.as_ref())?);
    let zerr = |e: zip::result::ZipError| CsarError::CorruptArchive(e.to_string());
    for rel in files {
        let abs = source_dir.join(&rel);
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if abs.is_dir() {
            zip.add_directory(format!("{name}/"), SimpleFileOptions::default()).map_err(zerr)?;
            continue;
        }
        let mode = {
            use std::os::unix::fs::PermissionsExt;
            fs::metadata(&abs)?.permissions().mode()
        };
        zip.start_file(name, SimpleFileOptions::default().unix_permissions(mode)).map_err(zerr)?;
        io::copy(&mut File::open(&abs)?, &mut zip)?;
    }
    zip.finish().map_err(zerr)?;
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let rel = path.strip_prefix(root).expect("child of root").to_owned();
        if path.is_dir() {
            let before = out.len();
            collect_files(root, &path, out)?;
            if out.len() == before {
                out.push(rel);
            }
        } else {
            out.push(rel);
        }
    }
    Ok(())
}
