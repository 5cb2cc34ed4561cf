//! Repository file helpers: line-accurate slicing, fingerprints, file discovery.
//!
//! All paths handed around the crate are repo-relative, `/`-separated strings.
//! Line numbers are 1-based and inclusive; a file's line count is the number
//! of `\n`-separated segments, where a trailing newline does not open a new
//! line (`"a\nb\n"` has 2 lines, `""` has 0).

use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub fn line_count(text: &str) -> usize {
    if text.is_empty() {
        return 0;
    }
    let n = text.as_bytes().iter().filter(|&&b| b == b'\n').count();
    if text.ends_with('\n') {
        n
    } else {
        n + 1
    }
}

/// Byte offset of the start of each line, plus a final sentinel at `text.len()`.
fn line_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0];
    for (i, b) in text.bytes().enumerate() {
        if b == b'\n' {
            starts.push(i + 1);
        }
    }
    if *starts.last().unwrap() != text.len() {
        starts.push(text.len());
    } else if text.is_empty() {
        starts.push(0);
    }
    starts
}

/// Exact bytes of lines `start..=end`, including the trailing newline of
/// `end` when the file has one. Empty spans (`end < start`) yield `""`.
pub fn slice_lines(text: &str, start_line: usize, end_line: usize) -> &str {
    if end_line < start_line || start_line == 0 {
        return "";
    }
    let starts = line_starts(text);
    let total = line_count(text);
    if start_line > total {
        return "";
    }
    let end = end_line.min(total);
    let from = starts[start_line - 1];
    let to = if end < starts.len() { starts[end] } else { text.len() };
    &text[from..to]
}

/// Whole-line splice: replaces lines `start..=end` with `replacement`,
/// leaving every byte outside the span untouched. The replacement is
/// normalized to end with a newline when anything follows the span or the
/// original span ended with one.
pub fn splice_lines(text: &str, start_line: usize, end_line: usize, replacement: &str) -> String {
    let starts = line_starts(text);
    let total = line_count(text);
    let start = start_line.min(total + 1);
    let end = end_line.min(total);
    let from = if start == 0 { 0 } else { starts[start.saturating_sub(1)] };
    let to = if end < start {
        from
    } else if end < starts.len() {
        starts[end]
    } else {
        text.len()
    };
    let mut body = replacement.to_string();
    let span_had_newline = to > from && text[..to].ends_with('\n');
    let needs_newline = to < text.len() || span_had_newline;
    if needs_newline && !body.is_empty() && !body.ends_with('\n') {
        body.push('\n');
    }
    let mut out = String::with_capacity(text.len() - (to - from) + body.len());
    out.push_str(&text[..from]);
    out.push_str(&body);
    out.push_str(&text[to..]);
    out
}

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_digest(&hasher.finalize())
}

pub fn fingerprint_str(text: &str) -> String {
    fingerprint_bytes(text.as_bytes())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// A repo-relative path is safe when it has no `..`/root components and is
/// non-empty. Everything the edit pipeline touches must pass this.
pub fn is_safe_rel_path(path: &str) -> bool {
    if path.is_empty() {
        return false;
    }
    Path::new(path)
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        && !Path::new(path).is_absolute()
}

pub fn join_repo(repo_root: &Path, rel: &str) -> PathBuf {
    repo_root.join(rel)
}

fn rel_str(root: &Path, p: &Path) -> Option<String> {
    let rel = p.strip_prefix(root).ok()?;
    let s = rel
        .components()
        .filter_map(|c| match c {
            Component::Normal(os) => os.to_str(),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/");
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

fn walk_sorted(repo_root: &Path, keep: impl Fn(&str) -> bool) -> Vec<String> {
    let mut out: Vec<String> = WalkDir::new(repo_root)
        .into_iter()
        .filter_entry(|e| e.file_name().to_str() != Some(".ladu") && e.file_name().to_str() != Some(".git"))
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| rel_str(repo_root, e.path()))
        .filter(|p| keep(p))
        .collect();
    out.sort();
    out
}

pub fn list_java_files(repo_root: &Path) -> Vec<String> {
    walk_sorted(repo_root, is_java_path)
}

pub fn list_config_files(repo_root: &Path) -> Vec<String> {
    walk_sorted(repo_root, is_config_path)
}

pub fn is_java_path(path: &str) -> bool {
    path.ends_with(".java")
}

pub fn is_config_path(path: &str) -> bool {
    path.ends_with("pom.xml") || path.ends_with(".yml") || path.ends_with(".yaml") || path.ends_with(".xml")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_count_edges() {
        assert_eq!(line_count(""), 0);
        assert_eq!(line_count("a"), 1);
        assert_eq!(line_count("a\n"), 1);
        assert_eq!(line_count("a\nb"), 2);
        assert_eq!(line_count("a\nb\n"), 2);
        assert_eq!(line_count("\n"), 1);
    }

    #[test]
    fn slice_and_splice_roundtrip() {
        let text = "one\ntwo\nthree\nfour";
        assert_eq!(slice_lines(text, 2, 3), "two\nthree\n");
        assert_eq!(slice_lines(text, 4, 4), "four");
        assert_eq!(slice_lines(text, 1, 4), text);
        let spliced = splice_lines(text, 2, 3, "TWO\nTHREE");
        assert_eq!(spliced, "one\nTWO\nTHREE\nfour");
        // splicing a span with identical text is the identity
        assert_eq!(splice_lines(text, 2, 3, "two\nthree"), text);
    }

    #[test]
    fn splice_preserves_missing_trailing_newline() {
        let text = "a\nb";
        assert_eq!(splice_lines(text, 2, 2, "B"), "a\nB");
        let text2 = "a\nb\n";
        assert_eq!(splice_lines(text2, 2, 2, "B"), "a\nB\n");
    }

    #[test]
    fn safe_paths() {
        assert!(is_safe_rel_path("src/Main.java"));
        assert!(!is_safe_rel_path("../etc/passwd"));
        assert!(!is_safe_rel_path("/abs/path"));
        assert!(!is_safe_rel_path(""));
        assert!(!is_safe_rel_path("a/../b"));
    }
}
