//! Patch-diff evaluation: parse unified diffs into per-file added/removed
//! line multisets, score a candidate against a gold diff by exact line
//! matching, and report a session's execution metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{SessionState, UpgradeSession};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    /// Multiset of added line texts (leading `+` stripped, nothing else).
    pub added: Vec<String>,
    /// Multiset of removed line texts.
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiffModel {
    pub files: BTreeMap<String, FileDiff>,
}

impl DiffModel {
    pub fn added_total(&self) -> u64 {
        self.files.values().map(|f| f.added.len() as u64).sum()
    }
    pub fn removed_total(&self) -> u64 {
        self.files.values().map(|f| f.removed.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub files_candidate: u64,
    pub files_gold: u64,
    pub common_files: u64,
    pub added_candidate: u64,
    pub removed_candidate: u64,
    pub added_gold: u64,
    pub removed_gold: u64,
    pub common_added: u64,
    pub common_removed: u64,
    pub precision_added: Option<f64>,
    pub precision_removed: Option<f64>,
    pub recall_added: Option<f64>,
    pub recall_removed: Option<f64>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("malformed diff at line {line}: {reason}")]
    MalformedDiff { line: usize, reason: String },
    #[error("session has not terminated")]
    SessionNotTerminated,
}

// ---------------------------------------------------------------------------
// Parsing

fn clean_diff_path(raw: &str) -> String {
    let path = raw.split('\t').next().unwrap_or(raw).trim();
    let path = path.strip_prefix("a/").or_else(|| path.strip_prefix("b/")).unwrap_or(path);
    path.to_string()
}

/// Parses a unified diff; context lines and headers are ignored, `+`/`-`
/// lines accumulate into per-file multisets.
pub fn parse_unified_diff(text: &str) -> Result<DiffModel, EvalError> {
    let mut model = DiffModel::default();
    let mut pending_source: Option<String> = None;
    let mut current: Option<String> = None;
    let mut in_hunk = false;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let malformed = |reason: &str| EvalError::MalformedDiff { line: lineno, reason: reason.to_string() };

        if line.starts_with("diff ")
            || line.starts_with("index ")
            || line.starts_with("new file mode")
            || line.starts_with("deleted file mode")
            || line.starts_with("old mode")
            || line.starts_with("new mode")
            || line.starts_with("similarity index")
            || line.starts_with("rename from")
            || line.starts_with("rename to")
            || line.starts_with("Binary files")
        {
            in_hunk = false;
            continue;
        }
        if let Some(p) = line.strip_prefix("--- ") {
            pending_source = Some(clean_diff_path(p));
            in_hunk = false;
            continue;
        }
        if let Some(p) = line.strip_prefix("+++ ") {
            let source = pending_source
                .take()
                .ok_or_else(|| malformed("'+++' header without matching '---'"))?;
            let target = clean_diff_path(p);
            let path = if target == "/dev/null" { source } else { target };
            model.files.entry(path.clone()).or_insert_with(|| FileDiff { path: path.clone(), ..Default::default() });
            current = Some(path);
            in_hunk = false;
            continue;
        }
        if line.starts_with("@@") {
            if current.is_none() {
                return Err(malformed("hunk header before any file header"));
            }
            if !is_hunk_header(line) {
                return Err(malformed("bad hunk header"));
            }
            in_hunk = true;
            continue;
        }
        if in_hunk {
            let file = model.files.get_mut(current.as_ref().expect("in_hunk implies current")).unwrap();
            if let Some(added) = line.strip_prefix('+') {
                file.added.push(added.to_string());
            } else if let Some(removed) = line.strip_prefix('-') {
                file.removed.push(removed.to_string());
            } else if line.starts_with(' ') || line.is_empty() || line.starts_with('\\') {
                // context / no-newline marker
            } else {
                in_hunk = false;
            }
            continue;
        }
        if line.starts_with('+') || line.starts_with('-') {
            return Err(malformed("diff line outside any hunk"));
        }
    }
    Ok(model)
}

fn is_hunk_header(line: &str) -> bool {
    // @@ -l[,n] +l[,n] @@[ trailing]
    let Some(rest) = line.strip_prefix("@@ -") else {
        return false;
    };
    let Some((ranges, _)) = rest.split_once(" @@") else {
        return false;
    };
    let Some((old, new)) = ranges.split_once(" +") else {
        return false;
    };
    let num_ok = |s: &str| {
        let (a, b) = s.split_once(',').unwrap_or((s, "0"));
        !a.is_empty() && a.bytes().all(|c| c.is_ascii_digit()) && b.bytes().all(|c| c.is_ascii_digit())
    };
    num_ok(old) && num_ok(new)
}

// ---------------------------------------------------------------------------
// Comparison

fn counts(lines: &[String]) -> HashMap<&str, u64> {
    let mut map = HashMap::new();
    for l in lines {
        *map.entry(l.as_str()).or_insert(0) += 1;
    }
    map
}

/// Multiset intersection cardinality of exact line texts.
fn common_count(a: &[String], b: &[String]) -> u64 {
    let ca = counts(a);
    let cb = counts(b);
    ca.iter().map(|(line, n)| (*n).min(*cb.get(line).unwrap_or(&0))).sum()
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Exact-match scoring of a candidate patch against the gold patch: common
/// files by path, common lines per common file as multiset intersections of
/// raw line texts.
pub fn compare(candidate: &DiffModel, gold: &DiffModel) -> ComparisonReport {
    let mut common_files = 0;
    let mut common_added = 0;
    let mut common_removed = 0;
    for (path, cand) in &candidate.files {
        if let Some(g) = gold.files.get(path) {
            common_files += 1;
            common_added += common_count(&cand.added, &g.added);
            common_removed += common_count(&cand.removed, &g.removed);
        }
    }
    let added_candidate = candidate.added_total();
    let removed_candidate = candidate.removed_total();
    let added_gold = gold.added_total();
    let removed_gold = gold.removed_total();
    ComparisonReport {
        files_candidate: candidate.files.len() as u64,
        files_gold: gold.files.len() as u64,
        common_files,
        added_candidate,
        removed_candidate,
        added_gold,
        removed_gold,
        common_added,
        common_removed,
        precision_added: ratio(common_added, added_candidate),
        precision_removed: ratio(common_removed, removed_candidate),
        recall_added: ratio(common_added, added_gold),
        recall_removed: ratio(common_removed, removed_gold),
    }
}

// ---------------------------------------------------------------------------
// Execution metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionMetrics {
    pub steps: u64,
    pub runtime_s: f64,
    pub total_tokens: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub cost_usd: f64,
}

/// Steps, runtime, tokens and cost of a terminated session; summarization
/// tokens are part of the total.
pub fn execution_metrics(session: &UpgradeSession) -> Result<ExecutionMetrics, EvalError> {
    if !matches!(session.state, SessionState::Succeeded | SessionState::HandedOver) {
        return Err(EvalError::SessionNotTerminated);
    }
    Ok(ExecutionMetrics {
        steps: session.transcript.len() as u64,
        runtime_s: session.wall_time_ms as f64 / 1000.0,
        total_tokens: session.usage.total_tokens,
        total_prompt_tokens: session.usage.total_prompt_tokens,
        total_completion_tokens: session.usage.total_completion_tokens,
        cost_usd: session.usage.cost_usd,
    })
}

// ---------------------------------------------------------------------------
// Rendering

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// Machine-readable `key=value` lines.
pub fn render_report_kv(report: &ComparisonReport) -> String {
    format!(
        "files_candidate={}\nfiles_gold={}\ncommon_files={}\nadded_candidate={}\nremoved_candidate={}\nadded_gold={}\nremoved_gold={}\ncommon_added={}\ncommon_removed={}\nprecision_added={}\nprecision_removed={}\nrecall_added={}\nrecall_removed={}\n",
        report.files_candidate,
        report.files_gold,
        report.common_files,
        report.added_candidate,
        report.removed_candidate,
        report.added_gold,
        report.removed_gold,
        report.common_added,
        report.common_removed,
        fmt_ratio(report.precision_added),
        fmt_ratio(report.precision_removed),
        fmt_ratio(report.recall_added),
        fmt_ratio(report.recall_removed),
    )
}

/// Aligned table in the usual comparison column order: files, gold files,
/// common files, A:R, gold A:R, common A:R.
pub fn render_report_table(report: &ComparisonReport) -> String {
    let headers = ["#Files", "#Files (G)", "#Common Files", "#Lines A:R", "#Lines A:R (G)", "#Common Lines"];
    let row = [
        report.files_candidate.to_string(),
        report.files_gold.to_string(),
        report.common_files.to_string(),
        format!("{}:{}", report.added_candidate, report.removed_candidate),
        format!("{}:{}", report.added_gold, report.removed_gold),
        format!("{}:{}", report.common_added, report.common_removed),
    ];
    let widths: Vec<usize> = headers
        .iter()
        .zip(&row)
        .map(|(h, r)| h.len().max(r.len()))
        .collect();
    let mut out = String::new();
    for (h, w) in headers.iter().zip(&widths) {
        out.push_str(&format!("{h:<w$}  ", w = w));
    }
    out.push('\n');
    for (r, w) in row.iter().zip(&widths) {
        out.push_str(&format!("{r:<w$}  ", w = w));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_simple_addition() {
        let diff = "--- a/x.txt\n+++ b/x.txt\n@@ -0,0 +1,2 @@\n+hello\n+world\n";
        let model = parse_unified_diff(diff).unwrap();
        assert_eq!(model.files.len(), 1);
        let f = &model.files["x.txt"];
        assert_eq!(f.added, vec!["hello", "world"]);
        assert!(f.removed.is_empty());
    }

    #[test]
    fn empty_text_empty_model() {
        let model = parse_unified_diff("").unwrap();
        assert!(model.files.is_empty());
    }

    #[test]
    fn deleted_file_uses_source_path() {
        let diff = "--- a/gone.txt\n+++ /dev/null\n@@ -1,1 +0,0 @@\n-bye\n";
        let model = parse_unified_diff(diff).unwrap();
        assert!(model.files.contains_key("gone.txt"));
    }

    #[test]
    fn stray_plus_line_rejected() {
        let err = parse_unified_diff("+orphan\n").unwrap_err();
        assert!(matches!(err, EvalError::MalformedDiff { line: 1, .. }));
    }

    #[test]
    fn identical_diffs_score_one() {
        let diff = "--- a/x\n+++ b/x\n@@ -1,2 +1,2 @@\n-a\n-b\n+c\n+d\n";
        let m = parse_unified_diff(diff).unwrap();
        let r = compare(&m, &m);
        assert_eq!(r.common_files, 1);
        assert_eq!(r.common_added, r.added_candidate);
        assert_eq!(r.common_removed, r.removed_candidate);
        assert_eq!(r.precision_added, Some(1.0));
        assert_eq!(r.recall_removed, Some(1.0));
    }

    #[test]
    fn duplicate_lines_pair_once_each() {
        let cand = parse_unified_diff("--- a/x\n+++ b/x\n@@ -1,3 +0,0 @@\n-dup\n-dup\n-dup\n").unwrap();
        let gold = parse_unified_diff("--- a/x\n+++ b/x\n@@ -1,2 +0,0 @@\n-dup\n-dup\n").unwrap();
        let r = compare(&cand, &gold);
        assert_eq!(r.common_removed, 2);
    }

    #[test]
    fn removed_precision_example() {
        // candidate removes 7 lines, 5 of which appear among gold's removals
        let mut cand = DiffModel::default();
        cand.files.insert(
            "f".into(),
            FileDiff {
                path: "f".into(),
                added: vec![],
                removed: (0..7).map(|i| format!("line{i}")).collect(),
            },
        );
        let mut gold = DiffModel::default();
        gold.files.insert(
            "f".into(),
            FileDiff {
                path: "f".into(),
                added: vec![],
                removed: (0..5).map(|i| format!("line{i}")).collect(),
            },
        );
        let r = compare(&cand, &gold);
        assert_eq!(r.common_removed, 5);
        let p = r.precision_removed.unwrap();
        assert!((p - 5.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn kv_and_table_render() {
        let diff = "--- a/x\n+++ b/x\n@@ -1 +1 @@\n-a\n+b\n";
        let m = parse_unified_diff(diff).unwrap();
        let r = compare(&m, &m);
        let kv = render_report_kv(&r);
        assert!(kv.contains("common_files=1"));
        assert!(kv.contains("precision_removed=1.0000"));
        let table = render_report_table(&r);
        assert!(table.contains("#Lines A:R"));
        assert!(table.contains("1:1"));
    }
}
