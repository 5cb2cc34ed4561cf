//! Runs the project's compile and test commands and reduces failure logs to
//! normalized, countable error fingerprints.
//!
//! Fingerprints are stable under changes to absolute path prefixes, line and
//! column numbers, timestamps, and durations, so "the same error" can be
//! counted across rounds.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repo;

/// Lines containing any of these markers are error-relevant.
pub const DEFAULT_ERROR_MARKERS: [&str; 5] = ["ERROR", "error:", "FAILED", "BUILD FAILURE", "Caused by:"];
/// Trailing context lines kept after each marker line.
const CONTEXT_LINES: usize = 2;
/// Excerpt cap.
const MAX_EXCERPT_LINES: usize = 200;
/// Long logs keep their first and last this many lines.
const LOG_CAP_LINES: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuildPhase {
    Compile,
    Test,
}

impl BuildPhase {
    pub fn label(&self) -> &'static str {
        match self {
            BuildPhase::Compile => "compile",
            BuildPhase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuildStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildResult {
    pub phase: BuildPhase,
    pub status: BuildStatus,
    pub log: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDigest {
    /// Hex digest of the normalized excerpt.
    pub fingerprint: String,
    /// Normalized, error-relevant log lines (at most 200).
    pub excerpt: String,
    pub phase: BuildPhase,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("command not found: {0}")]
    CommandNotFound(String),
    #[error("digest requested for a passing build")]
    NotAFailure,
}

fn run(phase: BuildPhase, repo_root: &Path, cmd: &str, extra_env: &[(String, String)]) -> Result<BuildResult, BuildError> {
    let started = Instant::now();
    let output = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(repo_root)
        .envs(extra_env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .output()
        .map_err(|e| BuildError::CommandNotFound(format!("{cmd}: {e}")))?;
    let duration_ms = started.elapsed().as_millis() as u64;
    // a shell reports a missing program as exit 127
    if output.status.code() == Some(127) {
        return Err(BuildError::CommandNotFound(cmd.to_string()));
    }
    let mut log = String::from_utf8_lossy(&output.stdout).into_owned();
    log.push_str(&String::from_utf8_lossy(&output.stderr));
    let status = if output.status.success() { BuildStatus::Pass } else { BuildStatus::Fail };
    Ok(BuildResult { phase, status, log: cap_log(&log), duration_ms })
}

/// Runs the configured compile command through the system shell with the
/// repo root as working directory.
pub fn compile(repo_root: &Path, cmd: &str, extra_env: &[(String, String)]) -> Result<BuildResult, BuildError> {
    run(BuildPhase::Compile, repo_root, cmd, extra_env)
}

pub fn run_tests(repo_root: &Path, cmd: &str, extra_env: &[(String, String)]) -> Result<BuildResult, BuildError> {
    run(BuildPhase::Test, repo_root, cmd, extra_env)
}

fn cap_log(log: &str) -> String {
    let lines: Vec<&str> = log.lines().collect();
    if lines.len() <= 2 * LOG_CAP_LINES {
        return log.to_string();
    }
    let omitted = lines.len() - 2 * LOG_CAP_LINES;
    let mut out = lines[..LOG_CAP_LINES].join("\n");
    out.push_str(&format!("\n... {omitted} lines omitted ...\n"));
    out.push_str(&lines[lines.len() - LOG_CAP_LINES..].join("\n"));
    out.push('\n');
    out
}

struct Normalizer {
    timestamp: Regex,
    duration: Regex,
    position: Regex,
    bracket_position: Regex,
}

fn normalizer() -> &'static Normalizer {
    static N: OnceLock<Normalizer> = OnceLock::new();
    N.get_or_init(|| Normalizer {
        timestamp: Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})?").unwrap(),
        duration: Regex::new(r"\b\d+(\.\d+)?\s*(ms|milliseconds|s|sec|secs|seconds)\b").unwrap(),
        position: Regex::new(r":\d+\b").unwrap(),
        bracket_position: Regex::new(r":\[\d+,\d+\]").unwrap(),
    })
}

/// Replaces absolute repo prefixes with `<REPO>`, ISO timestamps with `<T>`,
/// durations with `<D>`, and `:line:col` positions with `:#`.
pub fn normalize_log(text: &str, repo_root: &Path) -> String {
    let n = normalizer();
    let mut out = n.timestamp.replace_all(text, "<T>").into_owned();
    let root = repo_root.display().to_string();
    if !root.is_empty() && root != "/" {
        out = out.replace(&root, "<REPO>");
        if let Ok(canon) = repo_root.canonicalize() {
            let canon = canon.display().to_string();
            if canon != root {
                out = out.replace(&canon, "<REPO>");
            }
        }
    }
    out = n.duration.replace_all(&out, "<D>").into_owned();
    out = n.bracket_position.replace_all(&out, ":[#,#]").into_owned();
    out = n.position.replace_all(&out, ":#").into_owned();
    out
}

/// Reduces a failing build log to a normalized excerpt and its fingerprint:
/// marker lines plus 2 lines of trailing context each, capped at 200 lines,
/// hashed after normalization.
pub fn digest_errors(result: &BuildResult, repo_root: &Path) -> Result<ErrorDigest, BuildError> {
    digest_with_markers(result, repo_root, &DEFAULT_ERROR_MARKERS)
}

pub fn digest_with_markers(
    result: &BuildResult,
    repo_root: &Path,
    markers: &[&str],
) -> Result<ErrorDigest, BuildError> {
    if result.status == BuildStatus::Pass {
        return Err(BuildError::NotAFailure);
    }
    let lines: Vec<&str> = result.log.lines().collect();
    let mut keep = vec![false; lines.len()];
    for (i, line) in lines.iter().enumerate() {
        if markers.iter().any(|m| line.contains(m)) {
            for slot in keep.iter_mut().skip(i).take(CONTEXT_LINES + 1) {
                *slot = true;
            }
        }
    }
    let selected: Vec<&str> = lines
        .iter()
        .zip(&keep)
        .filter_map(|(l, k)| k.then_some(*l))
        .take(MAX_EXCERPT_LINES)
        .collect();
    let excerpt = normalize_log(&selected.join("\n"), repo_root);
    Ok(ErrorDigest {
        fingerprint: repo::fingerprint_str(&excerpt),
        excerpt,
        phase: result.phase,
    })
}
