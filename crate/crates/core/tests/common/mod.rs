#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_yaml::Value;
use toskose::tosca::pack_csar;

pub const TOSKOSE: &str = env!("CARGO_BIN_EXE_toskose");

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Pack the in-repo Thinking tree into `<dir>/thinking.csar`.
pub fn thinking_csar(dir: &Path) -> PathBuf {
    let dest = dir.join("thinking.csar");
    pack_csar(fixture("thinking/csar"), &dest).expect("pack fixture");
    dest
}

/// Copy the Thinking tree so a test can edit it before packing.
pub fn thinking_tree(dir: &Path) -> PathBuf {
    let dest = dir.join("tree");
    copy_tree(&fixture("thinking/csar"), &dest);
    dest
}

pub fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Sequences sorted and mappings compared by key set, so two documents that
/// differ only in ordering compare equal.
pub fn canonical(v: &Value) -> Value {
    match v {
        Value::Sequence(items) => {
            let mut items: Vec<Value> = items.iter().map(canonical).collect();
            items.sort_by_key(|i| serde_yaml::to_string(i).unwrap());
            Value::Sequence(items)
        }
        Value::Mapping(m) => {
            let mut entries: Vec<(Value, Value)> = m.iter().map(|(k, v)| (k.clone(), canonical(v))).collect();
            entries.sort_by_key(|(k, _)| serde_yaml::to_string(k).unwrap());
            Value::Mapping(entries.into_iter().collect())
        }
        Value::Tagged(t) => canonical(&t.value),
        other => other.clone(),
    }
}

pub fn yaml_file(path: &Path) -> Value {
    serde_yaml::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every entry of the output directory, relative to it.
pub fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if dir.exists() {
        walk(dir, dir, &mut out);
    }
    out.sort();
    out
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.push(path.strip_prefix(root).unwrap().to_owned());
        if path.is_dir() {
            walk(root, &path, out);
        }
    }
}

/// Pids of defunct processes whose parent is `parent`, read from /proc.
pub fn zombie_children(parent: u32) -> Vec<u32> {
    let mut out = Vec::new();
    for entry in fs::read_dir("/proc").unwrap().flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else { continue };
        let Ok(stat) = fs::read_to_string(entry.path().join("stat")) else { continue };
        // Fields after the parenthesised command: state, ppid, ...
        let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() > 1 && fields[0] == "Z" && fields[1].parse::<u32>() == Ok(parent) {
            out.push(pid);
        }
    }
    out
}

/// Pids of every live descendant of `root`, read from /proc.
pub fn descendants(root: u32) -> Vec<u32> {
    let mut parent_of = Vec::new();
    for entry in fs::read_dir("/proc").unwrap().flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else { continue };
        let Ok(stat) = fs::read_to_string(entry.path().join("stat")) else { continue };
        let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if let (Some(state), Some(Ok(ppid))) = (fields.first(), fields.get(1).map(|p| p.parse::<u32>())) {
            if *state != "Z" {
                parent_of.push((pid, ppid));
            }
        }
    }
    let mut found = vec![root];
    let mut i = 0;
    while i < found.len() {
        let p = found[i];
        found.extend(parent_of.iter().filter(|(_, pp)| *pp == p).map(|(c, _)| *c));
        i += 1;
    }
    found.remove(0);
    found
}

pub fn process_alive(pid: u32) -> bool {
    let Ok(stat) = fs::read_to_string(format!("/proc/{pid}/stat")) else { return false };
    stat.rsplit_once(')').and_then(|(_, r)| r.split_whitespace().next()).is_some_and(|s| s != "Z")
}
