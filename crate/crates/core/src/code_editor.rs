//! The code agent's mechanical half: parse edit proposals from the strict
//! block wire format and apply them atomically to the working tree.
//!
//! Wire format, one block per edit:
//! ```text
//! === FILE_REPLACE <path> ===      | === UNIT_REPLACE <path>::<Type>::<member> ===
//! <content lines>                  | === FILE_CREATE <path> ===
//! === END ===                      | === FILE_DELETE <path> ===   (no content)
//! ```
//! Edits are whole-line splices; unit replacement touches no byte outside
//! the unit's span.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use similar::{ChangeTag, TextDiff};
use thiserror::Error;

use crate::control::UnitRef;
use crate::repo;
use crate::syntax_units;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edit {
    ReplaceUnit { unit: UnitRef, text: String },
    ReplaceFile { path: String, content: String },
    CreateFile { path: String, content: String },
    DeleteFile { path: String },
}

impl Edit {
    pub fn path(&self) -> &str {
        match self {
            Edit::ReplaceUnit { unit, .. } => &unit.path,
            Edit::ReplaceFile { path, .. } | Edit::CreateFile { path, .. } | Edit::DeleteFile { path } => path,
        }
    }

    fn target_key(&self) -> String {
        match self {
            Edit::ReplaceUnit { unit, .. } => unit.render(),
            other => other.path().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditProposal {
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineDelta {
    pub added: u64,
    pub removed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChangeSet {
    pub changed_paths: BTreeSet<String>,
    pub created_paths: BTreeSet<String>,
    pub deleted_paths: BTreeSet<String>,
    pub line_delta: LineDelta,
}

impl ChangeSet {
    /// All paths whose content is different after apply, in sorted order.
    pub fn touched_paths(&self) -> Vec<String> {
        self.changed_paths
            .iter()
            .chain(&self.created_paths)
            .chain(&self.deleted_paths)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EditError {
    #[error("malformed proposal at line {line}: {reason}")]
    MalformedProposal { line: usize, reason: String },
    #[error("stale unit reference: {0}")]
    StaleUnitRef(String),
    #[error("target does not exist: {0}")]
    TargetMissing(String),
    #[error("target already exists: {0}")]
    TargetExists(String),
    #[error("unsafe path: {0}")]
    UnsafePath(String),
    #[error("overlapping edits on {0}")]
    OverlappingEdits(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Parsing

/// Strict parse of the fenced block format. Unknown block kinds are
/// rejected; prose between blocks is ignored.
pub fn parse_proposal(agent_text: &str) -> Result<EditProposal, EditError> {
    let malformed = |line: usize, reason: String| EditError::MalformedProposal { line, reason };
    let mut edits: Vec<Edit> = Vec::new();
    let mut lines = agent_text.lines().enumerate().peekable();

    while let Some((i, line)) = lines.next() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if !(trimmed.starts_with("=== ") && trimmed.ends_with(" ===")) {
            continue;
        }
        let inner = trimmed[4..trimmed.len() - 4].trim();
        if inner == "END" {
            return Err(malformed(lineno, "END sentinel without an open block".into()));
        }
        let (kind, arg) = inner
            .split_once(' ')
            .ok_or_else(|| malformed(lineno, format!("block header lacks an argument: '{trimmed}'")))?;
        let arg = arg.trim().to_string();

        let mut content_lines: Vec<&str> = Vec::new();
        let mut closed = false;
        for (_, l) in lines.by_ref() {
            if l.trim() == "=== END ===" {
                closed = true;
                break;
            }
            content_lines.push(l);
        }
        if !closed {
            return Err(malformed(lineno, format!("missing END sentinel for {kind} block")));
        }
        let content = if content_lines.is_empty() {
            String::new()
        } else {
            format!("{}\n", content_lines.join("\n"))
        };

        let edit = match kind {
            "FILE_REPLACE" => Edit::ReplaceFile { path: arg, content },
            "FILE_CREATE" => Edit::CreateFile { path: arg, content },
            "FILE_DELETE" => {
                if !content_lines.is_empty() {
                    return Err(malformed(lineno, "FILE_DELETE block must have no content".into()));
                }
                Edit::DeleteFile { path: arg }
            }
            "UNIT_REPLACE" => {
                let unit = UnitRef::parse(&arg)
                    .map_err(|e| malformed(lineno, e.to_string()))?;
                if unit.segments.is_empty() {
                    return Err(malformed(lineno, "UNIT_REPLACE requires a unit reference, not a bare path".into()));
                }
                Edit::ReplaceUnit { unit, text: content }
            }
            other => return Err(malformed(lineno, format!("unknown block kind '{other}'"))),
        };

        if !repo::is_safe_rel_path(edit.path()) {
            return Err(malformed(lineno, format!("unsafe path '{}'", edit.path())));
        }
        if edits.iter().any(|e| e.target_key() == edit.target_key()) {
            return Err(malformed(lineno, format!("duplicate edit target '{}'", edit.target_key())));
        }
        edits.push(edit);
    }
    Ok(EditProposal { edits })
}

// ---------------------------------------------------------------------------
// Apply

struct PlannedWrite {
    path: String,
    old: Option<String>,
    new: Option<String>,
}

/// Applies all edits or none: every read and validation happens before the
/// first byte is written, and each file is then swapped in via a temp file
/// rename.
pub fn apply(proposal: &EditProposal, repo_root: &Path) -> Result<ChangeSet, EditError> {
    // group unit replacements per file so spans from one extraction are
    // spliced together (bottom-up), then validate everything else
    let mut unit_edits: HashMap<String, Vec<(&UnitRef, &str)>> = HashMap::new();
    let mut file_ops: Vec<&Edit> = Vec::new();
    for edit in &proposal.edits {
        if !repo::is_safe_rel_path(edit.path()) {
            return Err(EditError::UnsafePath(edit.path().to_string()));
        }
        match edit {
            Edit::ReplaceUnit { unit, text } => {
                unit_edits.entry(unit.path.clone()).or_default().push((unit, text));
            }
            other => file_ops.push(other),
        }
    }
    for path in unit_edits.keys() {
        if file_ops.iter().any(|e| e.path() == path) {
            return Err(EditError::OverlappingEdits(path.clone()));
        }
    }

    let mut planned: Vec<PlannedWrite> = Vec::new();

    for (path, mut edits) in unit_edits {
        let abs = repo_root.join(&path);
        let old = fs::read_to_string(&abs).map_err(|_| EditError::TargetMissing(path.clone()))?;
        let tree = syntax_units::extract_units(&old, &path)
            .map_err(|_| EditError::StaleUnitRef(format!("{path} (no longer parses)")))?;
        let mut spans: Vec<(usize, usize, &str, String)> = Vec::new();
        for (unit, text) in edits.drain(..) {
            let span = tree
                .resolve(&unit.segments)
                .ok_or_else(|| EditError::StaleUnitRef(unit.render()))?;
            spans.push((span.start_line, span.end_line, text, unit.render()));
        }
        spans.sort_by_key(|s| s.0);
        for pair in spans.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(EditError::OverlappingEdits(path.clone()));
            }
        }
        let mut new = old.clone();
        for (start, end, text, _) in spans.iter().rev() {
            new = repo::splice_lines(&new, *start, *end, text);
        }
        planned.push(PlannedWrite { path, old: Some(old), new: Some(new) });
    }

    for edit in file_ops {
        let abs = repo_root.join(edit.path());
        match edit {
            Edit::ReplaceFile { path, content } => {
                let old = fs::read_to_string(&abs).map_err(|_| EditError::TargetMissing(path.clone()))?;
                planned.push(PlannedWrite { path: path.clone(), old: Some(old), new: Some(content.clone()) });
            }
            Edit::CreateFile { path, content } => {
                if abs.exists() {
                    return Err(EditError::TargetExists(path.clone()));
                }
                planned.push(PlannedWrite { path: path.clone(), old: None, new: Some(content.clone()) });
            }
            Edit::DeleteFile { path } => {
                let old = fs::read_to_string(&abs).map_err(|_| EditError::TargetMissing(path.clone()))?;
                planned.push(PlannedWrite { path: path.clone(), old: Some(old), new: None });
            }
            Edit::ReplaceUnit { .. } => unreachable!("grouped above"),
        }
    }

    // write phase; validation is complete, nothing has touched the tree yet
    let mut change_set = ChangeSet::default();
    for write in &planned {
        let abs = repo_root.join(&write.path);
        match (&write.old, &write.new) {
            (_, Some(new)) => {
                if write.old.as_deref() == Some(new.as_str()) {
                    continue;
                }
                if let Some(parent) = abs.parent() {
                    fs::create_dir_all(parent)?;
                }
                let tmp = abs.with_extension("ladu-staged");
                fs::write(&tmp, new)?;
                fs::rename(&tmp, &abs)?;
                if write.old.is_some() {
                    change_set.changed_paths.insert(write.path.clone());
                } else {
                    change_set.created_paths.insert(write.path.clone());
                }
            }
            (Some(_), None) => {
                fs::remove_file(&abs)?;
                change_set.deleted_paths.insert(write.path.clone());
            }
            (None, None) => {}
        }
        let (a, r) = diff_counts(write.old.as_deref().unwrap_or(""), write.new.as_deref().unwrap_or(""));
        change_set.line_delta.added += a;
        change_set.line_delta.removed += r;
    }
    Ok(change_set)
}

/// Unified-diff line accounting between two texts.
pub fn diff_counts(old: &str, new: &str) -> (u64, u64) {
    let diff = TextDiff::from_lines(old, new);
    let mut added = 0;
    let mut removed = 0;
    for change in diff.iter_all_changes() {
        match change.tag() {
            ChangeTag::Insert => added += 1,
            ChangeTag::Delete => removed += 1,
            ChangeTag::Equal => {}
        }
    }
    (added, removed)
}

/// Unified diff text for one file, in `--- a/<path>` / `+++ b/<path>` form.
pub fn render_unified_diff(old: &str, new: &str, path: &str) -> String {
    if old == new {
        return String::new();
    }
    let diff = TextDiff::from_lines(old, new);
    let mut out = format!("--- a/{path}\n+++ b/{path}\n");
    out.push_str(&diff.unified_diff().context_radius(3).to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    const CLASS: &str = "class A {\n    int f() {\n        return 1;\n    }\n}\n";

    #[test]
    fn parse_single_file_replace() {
        let text = "=== FILE_REPLACE pom.xml ===\n<project/>\n=== END ===\n";
        let p = parse_proposal(text).unwrap();
        assert_eq!(p.edits.len(), 1);
        assert_eq!(p.edits[0], Edit::ReplaceFile { path: "pom.xml".into(), content: "<project/>\n".into() });
    }

    #[test]
    fn parse_unit_replace_ref() {
        let text = "=== UNIT_REPLACE A.java::Foo::bar ===\nvoid bar() {\n}\n=== END ===\n";
        let p = parse_proposal(text).unwrap();
        match &p.edits[0] {
            Edit::ReplaceUnit { unit, .. } => {
                assert_eq!(unit.path, "A.java");
                assert_eq!(unit.segments, vec!["Foo", "bar"]);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn missing_end_sentinel_is_malformed() {
        let err = parse_proposal("=== FILE_CREATE x.txt ===\ncontent\n").unwrap_err();
        assert!(matches!(err, EditError::MalformedProposal { line: 1, .. }));
    }

    #[test]
    fn unknown_block_kind_rejected() {
        let err = parse_proposal("=== FILE_RENAME a b ===\n=== END ===\n").unwrap_err();
        assert!(matches!(err, EditError::MalformedProposal { .. }));
    }

    #[test]
    fn duplicate_target_rejected() {
        let text = "=== FILE_REPLACE a.txt ===\nx\n=== END ===\n=== FILE_REPLACE a.txt ===\ny\n=== END ===\n";
        let err = parse_proposal(text).unwrap_err();
        assert!(matches!(err, EditError::MalformedProposal { .. }));
    }

    #[test]
    fn dotdot_path_rejected() {
        let err = parse_proposal("=== FILE_CREATE ../evil.txt ===\nx\n=== END ===\n").unwrap_err();
        assert!(matches!(err, EditError::MalformedProposal { .. }));
    }

    #[test]
    fn empty_proposal_applies_to_nothing() {
        let dir = tempdir().unwrap();
        let cs = apply(&EditProposal::default(), dir.path()).unwrap();
        assert!(cs.changed_paths.is_empty());
        assert_eq!(cs.line_delta, LineDelta::default());
    }

    #[test]
    fn unit_replace_is_local() {
        let dir = tempdir().unwrap();
        // 3-line method formatted so the replacement shares no lines with it
        let src = "class A {\n    int f()\n    {\n        return 1; }\n}\n";
        fs::write(dir.path().join("A.java"), src).unwrap();
        let proposal = parse_proposal(
            "=== UNIT_REPLACE A.java::A::f ===\n    long g(int a, int b) {\n        int s = a + b;\n        s *= 2;\n        return s;\n    }\n=== END ===\n",
        )
        .unwrap();
        let cs = apply(&proposal, dir.path()).unwrap();
        let after = fs::read_to_string(dir.path().join("A.java")).unwrap();
        assert_eq!(after, "class A {\n    long g(int a, int b) {\n        int s = a + b;\n        s *= 2;\n        return s;\n    }\n}\n");
        assert_eq!(cs.line_delta, LineDelta { added: 5, removed: 3 });
        assert_eq!(cs.changed_paths.len(), 1);
    }

    #[test]
    fn create_then_delete_distinct_paths() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("old.txt"), "bye\n").unwrap();
        let proposal = parse_proposal(
            "=== FILE_CREATE fresh.txt ===\nhi\n=== END ===\n=== FILE_DELETE old.txt ===\n=== END ===\n",
        )
        .unwrap();
        let cs = apply(&proposal, dir.path()).unwrap();
        assert!(cs.created_paths.contains("fresh.txt"));
        assert!(cs.deleted_paths.contains("old.txt"));
        assert!(dir.path().join("fresh.txt").exists());
        assert!(!dir.path().join("old.txt").exists());
    }

    #[test]
    fn failing_apply_leaves_tree_untouched() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("A.java"), CLASS).unwrap();
        // first edit is valid, second references a unit that does not exist
        let proposal = parse_proposal(
            "=== FILE_REPLACE A.java ===\nclass A {}\n=== END ===\n=== UNIT_REPLACE B.java::Nope::x ===\nvoid x() {}\n=== END ===\n",
        )
        .unwrap();
        let before = fs::read_to_string(dir.path().join("A.java")).unwrap();
        let err = apply(&proposal, dir.path()).unwrap_err();
        assert!(matches!(err, EditError::TargetMissing(_)));
        let after = fs::read_to_string(dir.path().join("A.java")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn stale_unit_ref_detected() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("A.java"), CLASS).unwrap();
        let proposal = parse_proposal(
            "=== UNIT_REPLACE A.java::A::gone ===\nint gone() { return 0; }\n=== END ===\n",
        )
        .unwrap();
        let err = apply(&proposal, dir.path()).unwrap_err();
        assert!(matches!(err, EditError::StaleUnitRef(_)));
    }

    #[test]
    fn diff_counts_match_udiff_parse() {
        let old = "a\nb\nc\n";
        let new = "a\nB\nc\nd\n";
        let (added, removed) = diff_counts(old, new);
        assert_eq!((added, removed), (2, 1));
        let rendered = render_unified_diff(old, new, "x.txt");
        let plus = rendered.lines().filter(|l| l.starts_with('+') && !l.starts_with("+++")).count() as u64;
        let minus = rendered.lines().filter(|l| l.starts_with('-') && !l.starts_with("---")).count() as u64;
        assert_eq!((plus, minus), (added, removed));
    }
}
