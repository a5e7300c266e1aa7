//! Filesystem discovery and the deterministic worker pool the fan-out
//! commands share.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};

use attentrack_core::simworld::{read_scenario_jsonl, Scenario};
use attentrack_core::Error;

/// Scenario files under `path`: the file itself, or every `*.jsonl` in the
/// directory that is not a tracks file, sorted by name so downstream work is
/// order-deterministic.
pub fn scenario_files(path: &Path) -> Result<Vec<PathBuf>> {
    jsonl_files(path, |name| !name.ends_with(".tracks.jsonl"), "scenario")
}

/// Tracks files under `path`: the file itself, or every `*.tracks.jsonl` in
/// the directory, sorted by name.
pub fn tracks_files(path: &Path) -> Result<Vec<PathBuf>> {
    jsonl_files(path, |name| name.ends_with(".tracks.jsonl"), "tracks")
}

fn jsonl_files(path: &Path, want: impl Fn(&str) -> bool, kind: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path)
        .map_err(|e| Error::data(format!("cannot read directory {}: {e}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| Error::data(format!("cannot list {}: {e}", path.display())))?
            .path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned());
        if let Some(name) = name {
            if name.ends_with(".jsonl") && want(&name) && p.is_file() {
                files.push(p);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::data(format!("no {kind} files under {}", path.display())).into());
    }
    Ok(files)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let scenario = read_scenario_jsonl(&mut std::io::BufReader::new(file))
        .with_context(|| format!("scenario {}", path.display()))?;
    Ok(scenario)
}

pub fn load_scenarios(paths: &[PathBuf]) -> Result<Vec<Scenario>> {
    paths.iter().map(|p| load_scenario(p)).collect()
}

/// File stem with every extension stripped (`a/b.tracks.jsonl` -> `b`).
pub fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or(&name).to_string()
}

/// Maps `f` over `items` on up to `jobs` worker threads, preserving input
/// order in the result. Work items are handed out by an atomic cursor, so
/// the output is independent of scheduling.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                *slots[i].lock().expect("worker panicked holding a slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("worker panicked holding a slot")
                .expect("worker pool left a slot empty")
        })
        .collect()
}

/// Writes a file, contextualizing failures with the path.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}
