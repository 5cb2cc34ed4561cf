//! Shared helpers for integration tests: fixture repo copies and scripted
//! gateways.
#![allow(dead_code)] // each test binary uses a subset

use std::fs;
use std::path::{Path, PathBuf};

use ladu_core::llm_gateway::{Gateway, PriceTable, ReplayBackend};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in walkdir(src) {
        let rel = entry.strip_prefix(src).unwrap();
        let target = dst.join(rel);
        if entry.is_dir() {
            fs::create_dir_all(&target).unwrap();
        } else {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).unwrap();
            }
            fs::copy(&entry, &target).unwrap();
        }
    }
}

fn walkdir(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            out.push(p.clone());
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out
}

/// Copies the demo repo into `dst/repo` and returns that path.
pub fn fixture_repo(dst: &Path) -> PathBuf {
    let repo = dst.join("repo");
    copy_dir(&fixtures_dir().join("demo_repo"), &repo);
    repo
}

pub fn script_text(entries: &[(&str, u64, u64, &str)]) -> String {
    ReplayBackend::render_script(
        &entries
            .iter()
            .map(|(t, p, c, r)| (t.to_string(), *p, *c, r.to_string()))
            .collect::<Vec<_>>(),
    )
}

pub fn replay_gateway(entries: &[(&str, u64, u64, &str)]) -> Gateway {
    let backend = ReplayBackend::from_script(&script_text(entries)).unwrap();
    Gateway::new(Box::new(backend), PriceTable::default())
}

/// Writes a replay script file and returns its path.
pub fn write_script(dir: &Path, name: &str, entries: &[(&str, u64, u64, &str)]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, script_text(entries)).unwrap();
    path
}
