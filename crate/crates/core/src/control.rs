//! The control agent: initial upgrade instructions, two-stage retrieval over
//! the summary base (files first, then units), context assembly under a
//! token budget, and error resolution.
//!
//! Agent answers are line-oriented structured blocks parsed strictly; a
//! single reformat retry is issued on parse failure.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build_adapter::ErrorDigest;
use crate::llm_gateway::{estimate_tokens, ChatMessage, Gateway, GatewayError};
use crate::prompts::PromptPack;
use crate::repo;
use crate::summary_store::{SummaryBase, SummaryFile};
use crate::syntax_units::{self, ConfigStructure, UnitSpan};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed agent output: {0}")]
    MalformedAgentOutput(String),
    #[error("unresolvable unit reference: {0}")]
    UnresolvableUnit(String),
    #[error("write snippets alone exceed the context budget ({needed} > {budget} tokens)")]
    OverBudgetUnsatisfiable { needed: u64, budget: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// What to change this round, as decided by the control agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub task_text: String,
    pub target_files: Vec<String>,
    pub rationale: String,
    pub round: u32,
    pub cannot_resolve: bool,
}

/// `path::Segment::Segment` reference into a file's unit tree. An empty
/// segment chain denotes the whole file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRef {
    pub path: String,
    pub segments: Vec<String>,
}

impl UnitRef {
    pub fn parse(s: &str) -> Result<UnitRef, ControlError> {
        let mut parts = s.split("::");
        let path = parts
            .next()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| ControlError::MalformedAgentOutput(format!("empty unit reference '{s}'")))?;
        let segments: Vec<String> = parts.map(str::to_string).collect();
        if segments.iter().any(|x| x.is_empty()) {
            return Err(ControlError::MalformedAgentOutput(format!("empty segment in unit reference '{s}'")));
        }
        Ok(UnitRef { path: path.to_string(), segments })
    }

    pub fn render(&self) -> String {
        let mut s = self.path.clone();
        for seg in &self.segments {
            s.push_str("::");
            s.push_str(seg);
        }
        s
    }
}

impl std::fmt::Display for UnitRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteTarget {
    Existing(UnitRef),
    New { parent: UnitRef, name: String },
}

impl WriteTarget {
    pub fn render(&self) -> String {
        match self {
            WriteTarget::Existing(r) => r.render(),
            WriteTarget::New { parent, name } => format!("{} + {name}", parent.render()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextPlan {
    pub to_read: Vec<UnitRef>,
    pub to_write: Vec<WriteTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub read_snippets: Vec<(UnitRef, String)>,
    pub write_snippets: Vec<(WriteTarget, String)>,
    pub budget_tokens: u64,
    pub used_tokens: u64,
}

// ---------------------------------------------------------------------------
// Block parsing

/// Extracts the lines between `=== <header> ===` and `=== END ===`.
/// Prose outside the block is tolerated; a missing block or missing END is
/// an error.
fn parse_block<'a>(text: &'a str, header: &str) -> Result<Vec<&'a str>, String> {
    let open = format!("=== {header} ===");
    let mut in_block = false;
    let mut body = Vec::new();
    for line in text.lines() {
        if !in_block {
            if line.trim() == open {
                in_block = true;
            }
        } else if line.trim() == "=== END ===" {
            return Ok(body);
        } else {
            body.push(line);
        }
    }
    if in_block {
        Err(format!("missing END sentinel for {header} block"))
    } else {
        Err(format!("missing {header} block"))
    }
}

fn parse_instructions(text: &str, round: u32) -> Result<InstructionSet, String> {
    let body = parse_block(text, "INSTRUCTIONS")?;
    let mut task = None;
    let mut rationale = String::new();
    let mut targets = Vec::new();
    let mut cannot_resolve = false;
    for line in body {
        if let Some(t) = line.strip_prefix("TASK: ") {
            if task.replace(t.trim().to_string()).is_some() {
                return Err("duplicate TASK line".into());
            }
        } else if let Some(r) = line.strip_prefix("RATIONALE: ") {
            rationale = r.trim().to_string();
        } else if let Some(p) = line.strip_prefix("TARGET: ") {
            let p = p.trim().to_string();
            if !targets.contains(&p) {
                targets.push(p);
            }
        } else if line.trim() == "CANNOT_RESOLVE" {
            cannot_resolve = true;
        } else if !line.trim().is_empty() {
            return Err(format!("unexpected line in INSTRUCTIONS block: '{line}'"));
        }
    }
    let task_text = task.ok_or("missing TASK line")?;
    if task_text.is_empty() {
        return Err("empty TASK line".into());
    }
    if round >= 1 && targets.is_empty() && !cannot_resolve {
        return Err("no TARGET lines in a resolution round".into());
    }
    Ok(InstructionSet { task_text, target_files: targets, rationale, round, cannot_resolve })
}

fn parse_file_selection(text: &str) -> Result<Vec<String>, String> {
    let body = parse_block(text, "FILES")?;
    let mut out = Vec::new();
    for line in body {
        let p = line.trim();
        if p.is_empty() {
            continue;
        }
        let p = p.to_string();
        if !out.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn parse_plan(text: &str) -> Result<ContextPlan, String> {
    let body = parse_block(text, "PLAN")?;
    let mut plan = ContextPlan::default();
    for line in body {
        if let Some(r) = line.strip_prefix("READ: ") {
            let unit = UnitRef::parse(r.trim()).map_err(|e| e.to_string())?;
            if !plan.to_read.contains(&unit) {
                plan.to_read.push(unit);
            }
        } else if let Some(w) = line.strip_prefix("WRITE: ") {
            let unit = UnitRef::parse(w.trim()).map_err(|e| e.to_string())?;
            if unit.segments.is_empty() {
                return Err(format!("WRITE requires a unit, not a whole file: '{w}'"));
            }
            let target = WriteTarget::Existing(unit);
            if !plan.to_write.contains(&target) {
                plan.to_write.push(target);
            }
        } else if let Some(n) = line.strip_prefix("NEW: ") {
            let (parent, name) = n
                .rsplit_once(" + ")
                .ok_or_else(|| format!("NEW line lacks ' + ': '{n}'"))?;
            let parent = UnitRef::parse(parent.trim()).map_err(|e| e.to_string())?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err("NEW line has an empty proposed name".into());
            }
            let target = WriteTarget::New { parent, name };
            if !plan.to_write.contains(&target) {
                plan.to_write.push(target);
            }
        } else if !line.trim().is_empty() {
            return Err(format!("unexpected line in PLAN block: '{line}'"));
        }
    }
    Ok(plan)
}

/// Runs a gateway call and a strict parse with one reformat retry.
fn call_and_parse<T>(
    gateway: &Gateway,
    pack: &PromptPack,
    tag: &str,
    prompt: String,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, ControlError> {
    let exchange = gateway.complete(tag, &[ChatMessage::user(prompt)])?;
    match parse(&exchange.completion) {
        Ok(v) => Ok(v),
        Err(reason) => {
            let retry_prompt = pack.render("reformat", &[("reason", &reason)]);
            let retry = gateway.complete(
                tag,
                &[
                    ChatMessage::user(retry_prompt),
                    ChatMessage {
                        role: crate::llm_gateway::Role::Assistant,
                        content: exchange.completion.clone(),
                    },
                ],
            )?;
            parse(&retry.completion).map_err(ControlError::MalformedAgentOutput)
        }
    }
}

// ---------------------------------------------------------------------------
// Operations

/// Round-0 instructions from the migration guide (or the agent's internal
/// knowledge when no guide exists) plus the config structures.
pub fn initial_instructions(
    guide: Option<&str>,
    configs: &[ConfigStructure],
    target_version: &str,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<InstructionSet, ControlError> {
    let guide_section = match guide {
        Some(g) => format!("Migration guide for the target version:\n{g}"),
        None => "No migration guide is available; rely on your internal knowledge to perform the upgrade."
            .to_string(),
    };
    let config_structures = render_configs(configs);
    let prompt = pack.render(
        "initial_instructions",
        &[
            ("target_version", target_version),
            ("guide_section", &guide_section),
            ("config_structures", &config_structures),
        ],
    );
    call_and_parse(gateway, pack, "control:initial", prompt, |t| parse_instructions(t, 0))
}

/// Stage one of retrieval: only file-level summary lines go into the prompt.
/// The returned paths are validated against the base; an unknown path is a
/// malformed answer naming the offender.
pub fn select_files(
    task_text: &str,
    base: &SummaryBase,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<Vec<String>, ControlError> {
    let prompt = pack.render(
        "select_files",
        &[("task", task_text), ("file_summaries", &base.file_level_lines())],
    );
    let paths = call_and_parse(gateway, pack, "control:select_files", prompt, parse_file_selection)?;
    for p in &paths {
        if !base.files.contains_key(p) {
            return Err(ControlError::MalformedAgentOutput(format!("unknown path: {p}")));
        }
    }
    Ok(paths)
}

/// A selected file's summaries plus its current unit tree, for reference
/// validation.
pub struct SelectedFile<'a> {
    pub summary: &'a SummaryFile,
    pub units: &'a UnitSpan,
}

/// Stage two of retrieval: full summaries of only the selected files go into
/// the prompt; the agent names units to read and units to write (existing or
/// new under a resolvable parent).
pub fn select_units(
    task_text: &str,
    selected: &[SelectedFile<'_>],
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<ContextPlan, ControlError> {
    let mut full = String::new();
    for sf in selected {
        full.push_str(&format!("FILE {}\n", sf.summary.path));
        for line in sf.summary.render().lines() {
            full.push_str("  ");
            full.push_str(line);
            full.push('\n');
        }
    }
    let prompt = pack.render("select_units", &[("task", task_text), ("full_summaries", &full)]);
    let plan = call_and_parse(gateway, pack, "control:select_units", prompt, parse_plan)?;

    let trees: HashMap<&str, &UnitSpan> = selected.iter().map(|s| (s.summary.path.as_str(), s.units)).collect();
    let resolve = |unit: &UnitRef| -> bool {
        trees
            .get(unit.path.as_str())
            .map(|tree| tree.resolve(&unit.segments).is_some())
            .unwrap_or(false)
    };
    for r in &plan.to_read {
        if !resolve(r) {
            return Err(ControlError::UnresolvableUnit(r.render()));
        }
    }
    for w in &plan.to_write {
        let ok = match w {
            WriteTarget::Existing(r) => resolve(r),
            WriteTarget::New { parent, .. } => resolve(parent),
        };
        if !ok {
            return Err(ControlError::UnresolvableUnit(w.render()));
        }
    }
    Ok(plan)
}

/// Fetches the exact current span text for every planned unit. When the
/// estimate exceeds the budget, to-read snippets are dropped last-selected
/// first; to-write snippets are never dropped.
pub fn assemble_context(
    plan: &ContextPlan,
    repo_root: &Path,
    budget_tokens: u64,
) -> Result<ContextBundle, ControlError> {
    let mut sources: HashMap<String, (String, UnitSpan)> = HashMap::new();
    let mut fetch = |unit: &UnitRef| -> Result<String, ControlError> {
        if !sources.contains_key(&unit.path) {
            let text = fs::read_to_string(repo_root.join(&unit.path))?;
            let tree = syntax_units::extract_units(&text, &unit.path)
                .map_err(|_| ControlError::UnresolvableUnit(unit.render()))?;
            sources.insert(unit.path.clone(), (text, tree));
        }
        let (text, tree) = &sources[&unit.path];
        let span = tree
            .resolve(&unit.segments)
            .ok_or_else(|| ControlError::UnresolvableUnit(unit.render()))?;
        Ok(repo::slice_lines(text, span.start_line, span.end_line).to_string())
    };

    let mut write_snippets = Vec::new();
    for w in &plan.to_write {
        let text = match w {
            WriteTarget::Existing(r) => fetch(r)?,
            // a new unit has no current text; the reference itself carries
            // the location
            WriteTarget::New { .. } => String::new(),
        };
        write_snippets.push((w.clone(), text));
    }
    let mut read_snippets = Vec::new();
    for r in &plan.to_read {
        read_snippets.push((r.clone(), fetch(r)?));
    }

    let tally = |reads: &[(UnitRef, String)], writes: &[(WriteTarget, String)]| -> u64 {
        reads.iter().map(|(_, t)| estimate_tokens(t)).sum::<u64>()
            + writes.iter().map(|(_, t)| estimate_tokens(t)).sum::<u64>()
    };
    let write_cost = tally(&[], &write_snippets);
    if write_cost > budget_tokens {
        return Err(ControlError::OverBudgetUnsatisfiable { needed: write_cost, budget: budget_tokens });
    }
    let mut used = tally(&read_snippets, &write_snippets);
    while used > budget_tokens && !read_snippets.is_empty() {
        read_snippets.pop();
        used = tally(&read_snippets, &write_snippets);
    }

    Ok(ContextBundle {
        read_snippets,
        write_snippets,
        budget_tokens,
        used_tokens: used,
    })
}

/// Turns a failure digest into next-round instructions; the agent may
/// declare `cannot_resolve`, which the orchestrator maps to handover.
pub fn resolve_errors(
    digest: &ErrorDigest,
    _base: &SummaryBase,
    configs: &[ConfigStructure],
    prev_round: u32,
    gateway: &Gateway,
    pack: &PromptPack,
) -> Result<InstructionSet, ControlError> {
    let round = prev_round + 1;
    let prompt = pack.render(
        "resolve",
        &[
            ("phase", digest.phase.label()),
            ("error_excerpt", &digest.excerpt),
            ("config_structures", &render_configs(configs)),
            ("round", &round.to_string()),
        ],
    );
    call_and_parse(gateway, pack, "control:resolve", prompt, |t| parse_instructions(t, round))
}

fn render_configs(configs: &[ConfigStructure]) -> String {
    if configs.is_empty() {
        return "(none)".to_string();
    }
    configs.iter().map(ConfigStructure::render).collect::<Vec<_>>().join("")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instructions_block_parses() {
        let text = "noise\n=== INSTRUCTIONS ===\nTASK: Bump the dependency.\nRATIONALE: Guide says so.\nTARGET: pom.xml\n=== END ===\ntrailing";
        let ins = parse_instructions(text, 0).unwrap();
        assert_eq!(ins.task_text, "Bump the dependency.");
        assert_eq!(ins.target_files, vec!["pom.xml"]);
        assert!(!ins.cannot_resolve);
    }

    #[test]
    fn cannot_resolve_flag() {
        let text = "=== INSTRUCTIONS ===\nTASK: Give up.\nCANNOT_RESOLVE\n=== END ===";
        let ins = parse_instructions(text, 3).unwrap();
        assert!(ins.cannot_resolve);
        assert!(ins.target_files.is_empty());
    }

    #[test]
    fn missing_end_sentinel_rejected() {
        let err = parse_instructions("=== INSTRUCTIONS ===\nTASK: x\n", 0).unwrap_err();
        assert!(err.contains("END"));
    }

    #[test]
    fn resolution_round_requires_targets() {
        let text = "=== INSTRUCTIONS ===\nTASK: Something vague.\n=== END ===";
        assert!(parse_instructions(text, 1).is_err());
        assert!(parse_instructions(text, 0).is_ok());
    }

    #[test]
    fn file_selection_dedupes_preserving_order() {
        let text = "=== FILES ===\nb.java\na.java\nb.java\n=== END ===";
        assert_eq!(parse_file_selection(text).unwrap(), vec!["b.java", "a.java"]);
    }

    #[test]
    fn plan_parses_reads_writes_and_new() {
        let text = "=== PLAN ===\nREAD: A.java::Baz\nWRITE: A.java::Foo::bar\nNEW: A.java::Foo + helper\n=== END ===";
        let plan = parse_plan(text).unwrap();
        assert_eq!(plan.to_read.len(), 1);
        assert_eq!(plan.to_write.len(), 2);
        assert_eq!(plan.to_write[0], WriteTarget::Existing(UnitRef::parse("A.java::Foo::bar").unwrap()));
        match &plan.to_write[1] {
            WriteTarget::New { parent, name } => {
                assert_eq!(parent.render(), "A.java::Foo");
                assert_eq!(name, "helper");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn unit_ref_render_roundtrip() {
        let r = UnitRef::parse("src/A.java::Foo::bar").unwrap();
        assert_eq!(r.segments, vec!["Foo", "bar"]);
        assert_eq!(r.render(), "src/A.java::Foo::bar");
        assert!(UnitRef::parse("A.java::::x").is_err());
    }
}
