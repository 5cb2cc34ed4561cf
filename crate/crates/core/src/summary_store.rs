//! The natural-language summary base: one single-line summary per code unit,
//! aligned to each file's unit tree, persisted in a sidecar directory and
//! refreshed incrementally as files change.
//!
//! Store layout (under `.ladu/summaries/` by default):
//! - `<repo-relative path>.sum` per source file: line 1 is the file summary,
//!   each following line is `[<kind> <name>] <text>` indented 2 spaces per
//!   nesting depth;
//! - `index.tsv`: `path<TAB>fingerprint` per summarized file;
//! - `warnings.tsv`: `path<TAB>reason` per skipped file (absent when none).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{estimate_tokens, ChatMessage, Gateway, GatewayError};
use crate::prompts::PromptPack;
use crate::repo;
use crate::syntax_units::{self, UnitKind, UnitSpan};

pub const STORE_DIR: &str = ".ladu/summaries";
const SUMMARY_EXT: &str = ".sum";
const FALLBACK_MAX_CHARS: usize = 160;

/// One summary line for one unit; the tree mirrors the unit tree's shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryNode {
    pub name: String,
    pub kind: UnitKind,
    pub text: String,
    pub children: Vec<SummaryNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub path: String,
    pub file_summary: String,
    /// Top-level units; shape-isomorphic to the unit tree's children.
    pub units: Vec<SummaryNode>,
    /// Content hash of the source at summarization time.
    pub code_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SummaryBase {
    pub files: BTreeMap<String, SummaryFile>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("summary shape mismatch: expected {expected_shape}, got {got_shape}")]
    ShapeMismatch { expected_shape: String, got_shape: String },
    #[error("alignment failed for {0} after retries")]
    AlignmentFailed(String),
    #[error("corrupt summary store: {0}")]
    CorruptStore(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-file outcome of a summarize/refresh pass; `attempts` counts gateway
/// calls (1 = aligned first try).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileOutcome {
    pub path: String,
    pub attempts: u32,
    pub fallback: bool,
}

impl SummaryFile {
    /// Rendering used by prompts and the store: file summary first, units
    /// indented 2 spaces per depth with their `[kind name]` marker.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.file_summary);
        out.push('\n');
        fn walk(n: &SummaryNode, depth: usize, out: &mut String) {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&format!("[{} {}] {}\n", n.kind.token(), n.name, n.text));
            for c in &n.children {
                walk(c, depth + 1, out);
            }
        }
        for u in &self.units {
            walk(u, 1, &mut out);
        }
        out
    }

    /// Sum of estimated tokens over all summary lines.
    pub fn token_estimate(&self) -> u64 {
        let mut total = estimate_tokens(&self.file_summary);
        fn walk(n: &SummaryNode, total: &mut u64) {
            *total += estimate_tokens(&n.text);
            for c in &n.children {
                walk(c, total);
            }
        }
        for u in &self.units {
            walk(u, &mut total);
        }
        total
    }
}

impl SummaryBase {
    /// One line per file, for the first retrieval stage.
    pub fn file_level_lines(&self) -> String {
        let mut out = String::new();
        for (path, f) in &self.files {
            out.push_str(&format!("{path}: {}\n", f.file_summary));
        }
        out
    }

    pub fn token_estimate(&self) -> u64 {
        self.files.values().map(SummaryFile::token_estimate).sum()
    }
}

// ---------------------------------------------------------------------------
// Alignment

/// Parses the gateway's indented summary and aligns it with the unit tree.
///
/// Depth is indentation / 2; line 1 must be the unindented file summary.
/// Succeeds iff the parsed tree is shape-isomorphic to `unit_tree`, in which
/// case names and kinds are attached from the tree.
pub fn align(summary_text: &str, unit_tree: &UnitSpan) -> Result<SummaryFile, StoreError> {
    #[derive(Debug)]
    struct Raw {
        text: String,
        children: Vec<Raw>,
    }

    let mut lines: Vec<(usize, String)> = Vec::new();
    for raw_line in summary_text.lines() {
        let line = raw_line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with("```") {
            continue;
        }
        let spaces = line.len() - line.trim_start().len();
        if spaces % 2 != 0 {
            return Err(StoreError::ShapeMismatch {
                expected_shape: unit_tree.shape_string(),
                got_shape: format!("odd indentation ({spaces} spaces) on line {:?}", line.trim_start()),
            });
        }
        lines.push((spaces / 2, line.trim_start().to_string()));
    }

    if lines.is_empty() || lines[0].0 != 0 {
        return Err(StoreError::ShapeMismatch {
            expected_shape: unit_tree.shape_string(),
            got_shape: "missing file-level summary line".to_string(),
        });
    }
    let file_summary = lines[0].1.clone();

    // depth d line becomes a child of the most recent depth d-1 line;
    // `open` holds the chain of unclosed nodes, one per depth
    let mut roots: Vec<Raw> = Vec::new();
    let mut open: Vec<Raw> = Vec::new();
    fn close_to(depth: usize, open: &mut Vec<Raw>, roots: &mut Vec<Raw>) {
        while open.len() >= depth {
            let done = open.pop().unwrap();
            if let Some(parent) = open.last_mut() {
                parent.children.push(done);
            } else {
                roots.push(done);
            }
        }
    }
    for (depth, text) in lines.into_iter().skip(1) {
        if depth == 0 {
            return Err(StoreError::ShapeMismatch {
                expected_shape: unit_tree.shape_string(),
                got_shape: "more than one file-level line".to_string(),
            });
        }
        if depth > open.len() + 1 {
            return Err(StoreError::ShapeMismatch {
                expected_shape: unit_tree.shape_string(),
                got_shape: format!("indentation jumps to depth {depth}"),
            });
        }
        close_to(depth, &mut open, &mut roots);
        open.push(Raw { text, children: Vec::new() });
    }
    close_to(1, &mut open, &mut roots);

    fn zip(raw: &Raw, unit: &UnitSpan) -> Option<SummaryNode> {
        if raw.children.len() != unit.children.len() {
            return None;
        }
        let children = raw
            .children
            .iter()
            .zip(&unit.children)
            .map(|(r, u)| zip(r, u))
            .collect::<Option<Vec<_>>>()?;
        Some(SummaryNode {
            name: unit.name.clone(),
            kind: unit.kind,
            text: raw.text.clone(),
            children,
        })
    }

    fn raw_shape(roots: &[Raw]) -> String {
        fn walk(n: &Raw, out: &mut String) {
            out.push('[');
            for c in &n.children {
                walk(c, out);
            }
            out.push(']');
        }
        let mut s = String::new();
        for r in roots {
            walk(r, &mut s);
        }
        format!("[{s}]")
    }

    if roots.len() != unit_tree.children.len() {
        return Err(StoreError::ShapeMismatch {
            expected_shape: unit_tree.shape_string(),
            got_shape: raw_shape(&roots),
        });
    }
    let units = roots
        .iter()
        .zip(&unit_tree.children)
        .map(|(r, u)| zip(r, u))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| StoreError::ShapeMismatch {
            expected_shape: unit_tree.shape_string(),
            got_shape: raw_shape(&roots),
        })?;

    Ok(SummaryFile {
        path: unit_tree.path.clone(),
        file_summary,
        units,
        code_fingerprint: String::new(),
    })
}

/// Deterministic fallback installed when alignment keeps failing: each unit's
/// summary is its declaration line, trimmed to one line.
pub fn fallback_summary(unit_tree: &UnitSpan, source_text: &str) -> SummaryFile {
    fn one_line(s: &str) -> String {
        let t = s.trim();
        let mut line = t.chars().take(FALLBACK_MAX_CHARS).collect::<String>();
        if line.is_empty() {
            line = "(empty)".to_string();
        }
        line
    }
    fn walk(unit: &UnitSpan, source: &str) -> SummaryNode {
        let decl = repo::slice_lines(source, unit.start_line, unit.start_line);
        SummaryNode {
            name: unit.name.clone(),
            kind: unit.kind,
            text: one_line(decl),
            children: unit.children.iter().map(|c| walk(c, source)).collect(),
        }
    }
    let file_summary = source_text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(one_line)
        .unwrap_or_else(|| unit_tree.name.clone());
    SummaryFile {
        path: unit_tree.path.clone(),
        file_summary,
        units: unit_tree.children.iter().map(|c| walk(c, source_text)).collect(),
        code_fingerprint: String::new(),
    }
}

/// Indented name/kind skeleton pasted into summarize prompts.
pub fn render_skeleton(unit_tree: &UnitSpan) -> String {
    let mut out = format!("file: {}\n", unit_tree.name);
    fn walk(n: &UnitSpan, depth: usize, out: &mut String) {
        out.push_str(&"  ".repeat(depth));
        out.push_str(&format!("{} {}\n", n.kind.token(), n.name));
        for c in &n.children {
            walk(c, depth + 1, out);
        }
    }
    for c in &unit_tree.children {
        walk(c, 1, &mut out);
    }
    out
}

// ---------------------------------------------------------------------------
// Summarization flow

/// Gateway attempts per file: 1 initial + 2 retries with the mismatch
/// explained, then the deterministic fallback.
const MAX_ALIGN_ATTEMPTS: u32 = 3;

fn summarize_one(
    rel_path: &str,
    source: &str,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<(Option<SummaryFile>, FileOutcome, Option<Warning>), StoreError> {
    let tree = match syntax_units::extract_units(source, rel_path) {
        Ok(t) => t,
        Err(e) => {
            return Ok((
                None,
                FileOutcome { path: rel_path.to_string(), attempts: 0, fallback: false },
                Some(Warning { path: rel_path.to_string(), reason: e.to_string() }),
            ));
        }
    };
    let skeleton = render_skeleton(&tree);
    let tag = format!("summarize:{rel_path}");
    let mut last_mismatch = String::new();
    for attempt in 1..=MAX_ALIGN_ATTEMPTS {
        let prompt = if attempt == 1 {
            pack.render(
                "summarize",
                &[("path", rel_path), ("source", source), ("skeleton", &skeleton)],
            )
        } else {
            pack.render(
                "summarize_retry",
                &[
                    ("path", rel_path),
                    ("source", source),
                    ("skeleton", &skeleton),
                    ("mismatch", &last_mismatch),
                ],
            )
        };
        let exchange = gateway.complete(&tag, &[ChatMessage::user(prompt)])?;
        match align(&exchange.completion, &tree) {
            Ok(mut sf) => {
                sf.code_fingerprint = repo::fingerprint_str(source);
                return Ok((
                    Some(sf),
                    FileOutcome { path: rel_path.to_string(), attempts: attempt, fallback: false },
                    None,
                ));
            }
            Err(StoreError::ShapeMismatch { expected_shape, got_shape }) => {
                last_mismatch = format!("expected shape {expected_shape}, got {got_shape}");
            }
            Err(e) => return Err(e),
        }
    }
    let mut sf = fallback_summary(&tree, source);
    sf.code_fingerprint = repo::fingerprint_str(source);
    Ok((
        Some(sf),
        FileOutcome { path: rel_path.to_string(), attempts: MAX_ALIGN_ATTEMPTS, fallback: true },
        Some(Warning {
            path: rel_path.to_string(),
            reason: format!("alignment failed after {MAX_ALIGN_ATTEMPTS} attempts; fallback summaries installed"),
        }),
    ))
}

/// One-off preprocessing: summarize every Java file in the repository.
/// Files are processed in sorted path order; per-file results are
/// independent, so the outcome does not depend on processing order.
pub fn summarize_repo(
    repo_root: &Path,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<(SummaryBase, Vec<FileOutcome>), StoreError> {
    let mut base = SummaryBase::default();
    let mut outcomes = Vec::new();
    for rel in repo::list_java_files(repo_root) {
        let source = fs::read_to_string(repo_root.join(&rel))?;
        let (sf, outcome, warning) = summarize_one(&rel, &source, gateway, pack)?;
        if let Some(sf) = sf {
            base.files.insert(rel.clone(), sf);
        }
        if let Some(w) = warning {
            base.warnings.push(w);
        }
        outcomes.push(outcome);
    }
    Ok((base, outcomes))
}

/// Re-summarizes exactly the changed paths: deleted files drop out, new Java
/// files gain entries, config files are ignored, and every other entry is
/// left byte-identical.
pub fn refresh(
    mut base: SummaryBase,
    changed_paths: &[String],
    repo_root: &Path,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<(SummaryBase, Vec<FileOutcome>), StoreError> {
    let mut outcomes = Vec::new();
    let mut sorted: Vec<&String> = changed_paths.iter().collect();
    sorted.sort();
    sorted.dedup();
    for rel in sorted {
        if !repo::is_java_path(rel) {
            continue;
        }
        let abs = repo_root.join(rel);
        base.warnings.retain(|w| &w.path != rel);
        if !abs.exists() {
            base.files.remove(rel);
            continue;
        }
        let source = fs::read_to_string(&abs)?;
        let (sf, outcome, warning) = summarize_one(rel, &source, gateway, pack)?;
        match sf {
            Some(sf) => {
                base.files.insert(rel.clone(), sf);
            }
            None => {
                base.files.remove(rel);
            }
        }
        if let Some(w) = warning {
            base.warnings.push(w);
        }
        outcomes.push(outcome);
    }
    Ok((base, outcomes))
}

/// Paths whose on-disk content no longer matches the stored fingerprint,
/// plus new Java files and deleted ones.
pub fn stale_paths(base: &SummaryBase, repo_root: &Path) -> Vec<String> {
    let mut changed = Vec::new();
    let current = repo::list_java_files(repo_root);
    for rel in &current {
        match base.files.get(rel) {
            Some(sf) => {
                let content = fs::read(repo_root.join(rel)).unwrap_or_default();
                if repo::fingerprint_bytes(&content) != sf.code_fingerprint {
                    changed.push(rel.clone());
                }
            }
            None => {
                if !base.warnings.iter().any(|w| &w.path == rel) {
                    changed.push(rel.clone());
                }
            }
        }
    }
    for rel in base.files.keys() {
        if !current.contains(rel) {
            changed.push(rel.clone());
        }
    }
    changed.sort();
    changed.dedup();
    changed
}

// ---------------------------------------------------------------------------
// Persistence

fn sum_path(store_dir: &Path, rel: &str) -> PathBuf {
    store_dir.join(format!("{rel}{SUMMARY_EXT}"))
}

fn write_if_changed(path: &Path, content: &str) -> std::io::Result<bool> {
    if let Ok(existing) = fs::read_to_string(path) {
        if existing == content {
            return Ok(false);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)?;
    Ok(true)
}

/// Writes the store, touching only files whose content changed. Returns the
/// store-relative names of rewritten summary files.
pub fn persist(base: &SummaryBase, store_dir: &Path) -> Result<Vec<String>, StoreError> {
    fs::create_dir_all(store_dir)?;
    let mut rewritten = Vec::new();

    let mut index = String::new();
    for (path, sf) in &base.files {
        index.push_str(&format!("{path}\t{}\n", sf.code_fingerprint));
        if write_if_changed(&sum_path(store_dir, path), &sf.render())? {
            rewritten.push(path.clone());
        }
    }
    write_if_changed(&store_dir.join("index.tsv"), &index)?;

    let warnings_path = store_dir.join("warnings.tsv");
    if base.warnings.is_empty() {
        if warnings_path.exists() {
            fs::remove_file(&warnings_path)?;
        }
    } else {
        let mut w = String::new();
        for warning in &base.warnings {
            w.push_str(&format!("{}\t{}\n", warning.path, warning.reason.replace(['\t', '\n'], " ")));
        }
        write_if_changed(&warnings_path, &w)?;
    }

    // prune summary files for paths no longer in the base
    let live: Vec<PathBuf> = base.files.keys().map(|p| sum_path(store_dir, p)).collect();
    for entry in walkdir::WalkDir::new(store_dir).into_iter().filter_map(|e| e.ok()) {
        let p = entry.path();
        if entry.file_type().is_file()
            && p.to_string_lossy().ends_with(SUMMARY_EXT)
            && !live.iter().any(|l| l == p)
        {
            fs::remove_file(p)?;
        }
    }
    Ok(rewritten)
}

fn parse_sum_file(path: &str, text: &str, fingerprint: &str) -> Result<SummaryFile, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptStore(format!("{path}: {reason}"));
    let mut lines = text.lines();
    let file_summary = lines
        .next()
        .ok_or_else(|| corrupt("empty summary file".into()))?
        .to_string();

    struct Builder {
        node: SummaryNode,
    }
    let mut roots: Vec<SummaryNode> = Vec::new();
    let mut stack: Vec<Builder> = Vec::new();

    fn close_to(depth: usize, stack: &mut Vec<Builder>, roots: &mut Vec<SummaryNode>) {
        while stack.len() >= depth {
            let done = stack.pop().unwrap().node;
            if let Some(parent) = stack.last_mut() {
                parent.node.children.push(done);
            } else {
                roots.push(done);
            }
        }
    }

    for (i, raw) in lines.enumerate() {
        let lineno = i + 2;
        let spaces = raw.len() - raw.trim_start().len();
        if spaces % 2 != 0 || spaces == 0 {
            return Err(corrupt(format!("bad indentation on line {lineno}")));
        }
        let depth = spaces / 2;
        if depth > stack.len() + 1 {
            return Err(corrupt(format!("indentation jump on line {lineno}")));
        }
        let body = raw.trim_start();
        let rest = body
            .strip_prefix('[')
            .ok_or_else(|| corrupt(format!("missing unit marker on line {lineno}")))?;
        let (marker, text) = rest
            .split_once("] ")
            .or_else(|| rest.split_once(']').map(|(m, t)| (m, t)))
            .ok_or_else(|| corrupt(format!("unterminated unit marker on line {lineno}")))?;
        let (kind_tok, name) = marker
            .split_once(' ')
            .ok_or_else(|| corrupt(format!("bad unit marker on line {lineno}")))?;
        let kind = UnitKind::from_token(kind_tok)
            .ok_or_else(|| corrupt(format!("unknown unit kind '{kind_tok}' on line {lineno}")))?;

        close_to(depth, &mut stack, &mut roots);
        stack.push(Builder {
            node: SummaryNode {
                name: name.to_string(),
                kind,
                text: text.to_string(),
                children: Vec::new(),
            },
        });
    }
    close_to(1, &mut stack, &mut roots);

    Ok(SummaryFile {
        path: path.to_string(),
        file_summary,
        units: roots,
        code_fingerprint: fingerprint.to_string(),
    })
}

/// Loads the store; the store is the source of truth, so hand-edited
/// summary lines are reflected in the result.
pub fn load(store_dir: &Path) -> Result<SummaryBase, StoreError> {
    let index_path = store_dir.join("index.tsv");
    let index = fs::read_to_string(&index_path)
        .map_err(|_| StoreError::CorruptStore(format!("missing index at {}", index_path.display())))?;

    let mut base = SummaryBase::default();
    for (i, line) in index.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (path, fingerprint) = line
            .split_once('\t')
            .ok_or_else(|| StoreError::CorruptStore(format!("index line {} lacks a tab", i + 1)))?;
        let text = fs::read_to_string(sum_path(store_dir, path))
            .map_err(|_| StoreError::CorruptStore(format!("missing summary file for {path}")))?;
        let sf = parse_sum_file(path, &text, fingerprint)?;
        base.files.insert(path.to_string(), sf);
    }

    if let Ok(w) = fs::read_to_string(store_dir.join("warnings.tsv")) {
        for line in w.lines() {
            if let Some((path, reason)) = line.split_once('\t') {
                base.warnings.push(Warning { path: path.to_string(), reason: reason.to_string() });
            }
        }
    }
    Ok(base)
}

/// Summary-base tokens versus source tokens, for the compression line the
/// summarize command prints.
pub fn compression_stats(base: &SummaryBase, repo_root: &Path) -> (u64, u64) {
    let summary_tokens = base.token_estimate();
    let source_tokens: u64 = repo::list_java_files(repo_root)
        .iter()
        .map(|rel| {
            fs::read_to_string(repo_root.join(rel))
                .map(|s| estimate_tokens(&s))
                .unwrap_or(0)
        })
        .sum();
    (summary_tokens, source_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax_units::extract_units;

    fn sample_tree() -> UnitSpan {
        let src = "class Foo {\n    void a() {\n    }\n    void b() {\n    }\n}\n";
        extract_units(src, "Foo.java").unwrap()
    }

    #[test]
    fn align_matches_shape() {
        let tree = sample_tree();
        let summary = "Top file line.\n  Class line.\n    Method a line.\n    Method b line.\n";
        let sf = align(summary, &tree).unwrap();
        assert_eq!(sf.file_summary, "Top file line.");
        assert_eq!(sf.units.len(), 1);
        assert_eq!(sf.units[0].name, "Foo");
        assert_eq!(sf.units[0].children.len(), 2);
        assert_eq!(sf.units[0].children[1].text, "Method b line.");
    }

    #[test]
    fn align_empty_file_single_line() {
        let tree = extract_units("", "E.java").unwrap();
        let sf = align("Just the file line.\n", &tree).unwrap();
        assert!(sf.units.is_empty());
    }

    #[test]
    fn align_missing_method_line_is_mismatch() {
        let tree = sample_tree();
        let err = align("File.\n  Class.\n    Only one method line.\n", &tree).unwrap_err();
        match err {
            StoreError::ShapeMismatch { expected_shape, got_shape } => {
                assert_eq!(expected_shape, "[[[][]]]");
                assert_eq!(got_shape, "[[[]]]");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn fallback_uses_declaration_lines() {
        let src = "class Foo {\n    void a() {\n    }\n    void b() {\n    }\n}\n";
        let tree = extract_units(src, "Foo.java").unwrap();
        let sf = fallback_summary(&tree, src);
        assert_eq!(sf.units[0].text, "class Foo {");
        assert_eq!(sf.units[0].children[0].text, "void a() {");
    }

    #[test]
    fn store_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let src = "class Foo {\n    void a() {\n    }\n    void b() {\n    }\n}\n";
        let tree = extract_units(src, "src/Foo.java").unwrap();
        let mut sf = align("File.\n  Class.\n    A.\n    B.\n", &tree).unwrap();
        sf.code_fingerprint = repo::fingerprint_str(src);
        let mut base = SummaryBase::default();
        base.files.insert("src/Foo.java".to_string(), sf);
        base.warnings.push(Warning { path: "src/Bad.java".into(), reason: "unbalanced braces at line 3".into() });

        persist(&base, dir.path()).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded, base);

        // second persist rewrites nothing
        let rewritten = persist(&base, dir.path()).unwrap();
        assert!(rewritten.is_empty());
    }

    #[test]
    fn load_of_empty_directory_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(err, StoreError::CorruptStore(_)));
    }

    #[test]
    fn hand_edited_store_wins_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let src = "class Foo {\n    void a() {\n    }\n}\n";
        let tree = extract_units(src, "Foo.java").unwrap();
        let mut sf = align("File.\n  Class.\n    A.\n", &tree).unwrap();
        sf.code_fingerprint = repo::fingerprint_str(src);
        let mut base = SummaryBase::default();
        base.files.insert("Foo.java".to_string(), sf);
        persist(&base, dir.path()).unwrap();

        let sum = dir.path().join("Foo.java.sum");
        let edited = fs::read_to_string(&sum).unwrap().replace("[method a] A.", "[method a] Edited.");
        fs::write(&sum, edited).unwrap();

        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.files["Foo.java"].units[0].children[0].text, "Edited.");
    }
}
