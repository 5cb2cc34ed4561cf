//! The upgrade session state machine: preprocessing, initial instructions,
//! edit application, compile/test/repair cycles, bounded stop conditions,
//! handover reporting, and resumption.
//!
//! State transitions:
//! ```text
//! Init → Summarizing → InitialInstructions → {Editing | Compiling}
//! Editing → Compiling
//! Compiling → Testing (pass) | Resolving (fail) | HandedOver (repeated error)
//! Testing → Succeeded (pass) | Resolving (fail) | HandedOver (repeated error)
//! Resolving → Localizing → Editing | HandedOver (cannot resolve)
//! resume: HandedOver → Summarizing → Compiling
//! ```
//! Any component failure inside the loop maps to `HandedOver` with a
//! `ConfigOrIOFailure` reason rather than an error return.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build_adapter::{self, BuildResult, BuildStatus, ErrorDigest};
use crate::code_editor::{self, ChangeSet};
use crate::config::{ConfigError, ToolConfig};
use crate::control::{self, InstructionSet, SelectedFile};
use crate::llm_gateway::{ChatMessage, Gateway, UsageReport};
use crate::prompts::PromptPack;
use crate::repo;
use crate::summary_store::{self, FileOutcome, SummaryBase};
use crate::syntax_units::{self, ConfigStructure, UnitSpan};

pub const SESSION_DIR: &str = ".ladu/session";
const LOCK_FILE: &str = ".ladu/lock";
/// Replanning attempts after a stale unit reference before giving up.
const MAX_STALE_REPLANS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Init,
    Summarizing,
    InitialInstructions,
    Localizing,
    Editing,
    Compiling,
    Testing,
    Resolving,
    Succeeded,
    HandedOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    LlmCall,
    Compile,
    Test,
    Apply,
    Refresh,
    Decision,
}

impl StepKind {
    pub fn label(&self) -> &'static str {
        match self {
            StepKind::LlmCall => "llm_call",
            StepKind::Compile => "compile",
            StepKind::Test => "test",
            StepKind::Apply => "apply",
            StepKind::Refresh => "refresh",
            StepKind::Decision => "decision",
        }
    }

    fn from_label(s: &str) -> Option<StepKind> {
        Some(match s {
            "llm_call" => StepKind::LlmCall,
            "compile" => StepKind::Compile,
            "test" => StepKind::Test,
            "apply" => StepKind::Apply,
            "refresh" => StepKind::Refresh,
            "decision" => StepKind::Decision,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u64,
    pub kind: StepKind,
    pub summary: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandoverReason {
    AgentCannotResolve,
    RepeatedError { fingerprint: String, count: u32 },
    ConfigOrIoFailure,
}

impl HandoverReason {
    pub fn label(&self) -> String {
        match self {
            HandoverReason::AgentCannotResolve => "agent cannot resolve".to_string(),
            HandoverReason::RepeatedError { fingerprint, count } => {
                format!("repeated error (fingerprint {fingerprint}, seen {count} times)")
            }
            HandoverReason::ConfigOrIoFailure => "configuration or i/o failure".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpgradeSession {
    pub session_id: String,
    pub repo_root: String,
    pub target_version: String,
    pub state: SessionState,
    pub transcript: Vec<Step>,
    pub error_counts: BTreeMap<String, u32>,
    pub config: ToolConfig,
    pub started_at_unix_ms: u64,
    pub wall_time_ms: u64,
    pub usage: UsageReport,
    pub handover: Option<HandoverReason>,
    pub last_error_excerpt: String,
    /// Resolution round of the most recent instructions.
    pub last_round: u32,
}

impl UpgradeSession {
    pub fn steps_summary(&self) -> Vec<String> {
        self.transcript
            .iter()
            .map(|s| format!("{} {} {}", s.index, s.kind.label(), s.summary))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoverReport {
    pub reason: HandoverReason,
    pub steps_summary: Vec<String>,
    pub last_error_excerpt: String,
    pub resume_token: String,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no summary base at {0}; run summarize first or pass --summarize-first")]
    MissingSummaryBase(String),
    #[error("repository is locked by another session ({0})")]
    Locked(String),
    #[error("unknown resume token: {0}")]
    UnknownToken(String),
    #[error("session is not handed over")]
    NotHandedOver,
    #[error(transparent)]
    Gateway(#[from] crate::llm_gateway::GatewayError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session store: {0}")]
    CorruptSession(String),
}

// ---------------------------------------------------------------------------
// Repo lock

struct RepoLock {
    path: PathBuf,
}

impl RepoLock {
    fn acquire(repo_root: &Path) -> Result<RepoLock, SessionError> {
        let path = repo_root.join(LOCK_FILE);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RepoLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(SessionError::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RepoLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Driver

/// Anything that stops the loop without being a stop *condition*: gateway
/// failures, unreadable files, apply I/O errors. Mapped to handover.
struct ComponentFailure(String);

macro_rules! component_failure_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for ComponentFailure {
            fn from(e: $t) -> Self {
                ComponentFailure(e.to_string())
            }
        })*
    };
}

component_failure_from!(
    crate::summary_store::StoreError,
    crate::llm_gateway::GatewayError,
    crate::control::ControlError,
    crate::code_editor::EditError,
    crate::build_adapter::BuildError,
    crate::syntax_units::SyntaxError,
    std::io::Error,
);

enum LoopOutcome {
    Done,
    Continue(InstructionSet),
}

struct Driver<'a> {
    cfg: &'a ToolConfig,
    gateway: Gateway,
    pack: PromptPack,
    session: UpgradeSession,
    base: SummaryBase,
    configs: Vec<ConfigStructure>,
    pending_digest: Option<ErrorDigest>,
    usage_carry: UsageReport,
    started: Instant,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn next_session_id(repo_root: &Path) -> String {
    let dir = repo_root.join(SESSION_DIR);
    let mut max = 0u32;
    if let Ok(entries) = fs::read_dir(&dir) {
        for entry in entries.flatten() {
            if let Some(n) = entry
                .file_name()
                .to_str()
                .and_then(|s| s.strip_prefix('s'))
                .and_then(|s| s.parse::<u32>().ok())
            {
                max = max.max(n);
            }
        }
    }
    format!("s{:04}", max + 1)
}

pub fn session_dir(repo_root: &Path, session_id: &str) -> PathBuf {
    repo_root.join(SESSION_DIR).join(session_id)
}

impl<'a> Driver<'a> {
    fn new(cfg: &'a ToolConfig, session: UpgradeSession) -> Result<Driver<'a>, SessionError> {
        let gateway = cfg.build_gateway()?;
        let pack = match &cfg.prompt_pack {
            Some(dir) => PromptPack::load(dir)?,
            None => PromptPack::default(),
        };
        let usage_carry = session.usage;
        Ok(Driver {
            cfg,
            gateway,
            pack,
            session,
            base: SummaryBase::default(),
            configs: Vec::new(),
            pending_digest: None,
            usage_carry,
            started: Instant::now(),
        })
    }

    fn store_dir(&self) -> PathBuf {
        self.cfg.repo.join(summary_store::STORE_DIR)
    }

    fn push_step(&mut self, kind: StepKind, summary: String, tokens: (u64, u64), duration_ms: u64) {
        let index = self.session.transcript.len() as u64;
        self.session.transcript.push(Step {
            index,
            kind,
            summary,
            prompt_tokens: tokens.0,
            completion_tokens: tokens.1,
            duration_ms,
        });
    }

    fn push_decision(&mut self, summary: impl Into<String>) {
        self.push_step(StepKind::Decision, summary.into(), (0, 0), 0);
    }

    /// Turns every gateway exchange since the last drain into an LlmCall
    /// step; meter totals and step token sums stay equal by construction.
    fn drain_llm_steps(&mut self) {
        for ex in self.gateway.drain_exchanges() {
            self.push_step(
                StepKind::LlmCall,
                format!("llm {}", ex.tag),
                (ex.prompt_tokens, ex.completion_tokens),
                ex.wall_time_ms,
            );
        }
    }

    fn note_outcomes(&mut self, outcomes: &[FileOutcome]) {
        for o in outcomes {
            if o.fallback {
                self.push_decision(format!("fallback summaries installed for {}", o.path));
            } else if o.attempts > 1 {
                self.push_decision(format!(
                    "summary alignment for {} took {} attempts ({} retries)",
                    o.path,
                    o.attempts,
                    o.attempts - 1
                ));
            }
        }
    }

    fn prepare_summary_base(&mut self) -> Result<(), ComponentFailure> {
        self.session.state = SessionState::Summarizing;
        let store = self.store_dir();
        if store.join("index.tsv").exists() {
            self.base = summary_store::load(&store)?;
            let stale = summary_store::stale_paths(&self.base, &self.cfg.repo);
            if !stale.is_empty() {
                let (base, outcomes) =
                    summary_store::refresh(std::mem::take(&mut self.base), &stale, &self.cfg.repo, &self.gateway, &self.pack)?;
                self.base = base;
                self.drain_llm_steps();
                self.note_outcomes(&outcomes);
                self.push_step(StepKind::Refresh, format!("refresh: {} file(s)", stale.len()), (0, 0), 0);
            }
        } else {
            let (base, outcomes) = summary_store::summarize_repo(&self.cfg.repo, &self.gateway, &self.pack)?;
            self.base = base;
            self.drain_llm_steps();
            self.note_outcomes(&outcomes);
        }
        summary_store::persist(&self.base, &store)?;
        Ok(())
    }

    fn load_configs(&mut self) {
        self.configs.clear();
        for rel in repo::list_config_files(&self.cfg.repo) {
            match fs::read_to_string(self.cfg.repo.join(&rel)) {
                Ok(text) => match syntax_units::extract_config_structure(&text, &rel) {
                    Ok(cs) => self.configs.push(cs),
                    Err(e) => self.push_decision(format!("config structure skipped for {rel}: {e}")),
                },
                Err(e) => self.push_decision(format!("config file unreadable {rel}: {e}")),
            }
        }
    }

    fn handover(&mut self, reason: HandoverReason, note: &str) {
        if !note.is_empty() {
            self.push_decision(note.to_string());
        }
        self.session.state = SessionState::HandedOver;
        self.session.handover = Some(reason);
    }

    // -- edit phase -------------------------------------------------------

    /// Runs localization (for resolution rounds) and one code-agent edit.
    /// Returns false when the round needs no code change.
    fn edit_round(&mut self, instr: &InstructionSet) -> Result<bool, ComponentFailure> {
        if instr.round == 0 && instr.target_files.is_empty() {
            self.push_decision("no targets named; skipping edit");
            return Ok(false);
        }
        let mut replans = 0;
        loop {
            let (read_render, write_render, had_plan) = if instr.round >= 1 {
                self.session.state = SessionState::Localizing;
                let files = if self.base.files.is_empty() {
                    Vec::new()
                } else {
                    let r = control::select_files(&instr.task_text, &self.base, &self.gateway, &self.pack);
                    self.drain_llm_steps();
                    r?
                };
                let config_targets = self.config_targets(instr);
                if files.is_empty() && config_targets.is_empty() {
                    self.push_decision("empty selection: no code change needed this round");
                    return Ok(false);
                }
                if files.is_empty() {
                    (String::from("(none)"), String::from("(none)"), false)
                } else {
                    let mut sources: Vec<(String, String, UnitSpan)> = Vec::new();
                    for path in &files {
                        let text = fs::read_to_string(self.cfg.repo.join(path))?;
                        let tree = syntax_units::extract_units(&text, path)
                            .map_err(|e| ComponentFailure(format!("{path}: {e}")))?;
                        sources.push((path.clone(), text, tree));
                    }
                    let plan_result = {
                        let selected: Vec<SelectedFile<'_>> = sources
                            .iter()
                            .map(|(path, _, tree)| SelectedFile {
                                summary: &self.base.files[path],
                                units: tree,
                            })
                            .collect();
                        control::select_units(&instr.task_text, &selected, &self.gateway, &self.pack)
                    };
                    self.drain_llm_steps();
                    let plan = plan_result?;
                    let bundle = control::assemble_context(&plan, &self.cfg.repo, self.cfg.budget_tokens)?;
                    let mut read_render = String::new();
                    for (unit, text) in &bundle.read_snippets {
                        read_render.push_str(&format!("UNIT {}\n{text}\n", unit.render()));
                    }
                    if read_render.is_empty() {
                        read_render.push_str("(none)");
                    }
                    let mut write_render = String::new();
                    for (target, text) in &bundle.write_snippets {
                        match target {
                            control::WriteTarget::Existing(_) => {
                                write_render.push_str(&format!("UNIT {}\n{text}\n", target.render()));
                            }
                            control::WriteTarget::New { .. } => {
                                write_render.push_str(&format!("NEW UNIT {} (author this unit)\n", target.render()));
                            }
                        }
                    }
                    if write_render.is_empty() {
                        write_render.push_str("(none)");
                    }
                    (read_render, write_render, true)
                }
            } else {
                (String::from("(none)"), String::from("(none)"), false)
            };

            // config and round-0 targets are offered wholesale
            let mut config_render = String::new();
            for path in self.context_files(instr) {
                match fs::read_to_string(self.cfg.repo.join(&path)) {
                    Ok(text) => config_render.push_str(&format!("FILE {path}\n{text}\n")),
                    Err(_) => config_render.push_str(&format!("FILE {path}\n(new file, no current content)\n")),
                }
            }
            if config_render.is_empty() {
                config_render.push_str("(none)");
            }

            self.session.state = SessionState::Editing;
            let prompt = self.pack.render(
                "code_edit",
                &[
                    ("task", &instr.task_text),
                    ("read_snippets", &read_render),
                    ("write_snippets", &write_render),
                    ("config_files", &config_render),
                ],
            );
            let proposal = self.code_call(prompt)?;

            match code_editor::apply(&proposal, &self.cfg.repo) {
                Ok(change_set) => {
                    self.push_step(
                        StepKind::Apply,
                        format!(
                            "apply: files={} +{} -{}",
                            change_set.touched_paths().len(),
                            change_set.line_delta.added,
                            change_set.line_delta.removed
                        ),
                        (0, 0),
                        0,
                    );
                    self.after_apply(&change_set)?;
                    return Ok(true);
                }
                Err(code_editor::EditError::StaleUnitRef(r)) if had_plan && replans < MAX_STALE_REPLANS => {
                    replans += 1;
                    self.push_decision(format!("stale unit reference {r}; replanning ({replans}/{MAX_STALE_REPLANS})"));
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Code-agent call with one reformat retry on a malformed proposal.
    fn code_call(&mut self, prompt: String) -> Result<code_editor::EditProposal, ComponentFailure> {
        let exchange = self.gateway.complete("code:edit", &[ChatMessage::user(prompt)])?;
        self.drain_llm_steps();
        match code_editor::parse_proposal(&exchange.completion) {
            Ok(p) => Ok(p),
            Err(e) => {
                let retry_prompt = self.pack.render("reformat", &[("reason", &e.to_string())]);
                let retry = self.gateway.complete("code:edit", &[ChatMessage::user(retry_prompt)])?;
                self.drain_llm_steps();
                Ok(code_editor::parse_proposal(&retry.completion)?)
            }
        }
    }

    /// Summary refresh and config re-extraction for whatever the apply
    /// changed.
    fn after_apply(&mut self, change_set: &ChangeSet) -> Result<(), ComponentFailure> {
        let touched = change_set.touched_paths();
        let java: Vec<String> = touched.iter().filter(|p| repo::is_java_path(p)).cloned().collect();
        if !java.is_empty() {
            let (base, outcomes) =
                summary_store::refresh(std::mem::take(&mut self.base), &java, &self.cfg.repo, &self.gateway, &self.pack)?;
            self.base = base;
            self.drain_llm_steps();
            self.note_outcomes(&outcomes);
            self.push_step(StepKind::Refresh, format!("refresh: {} file(s)", java.len()), (0, 0), 0);
            summary_store::persist(&self.base, &self.store_dir())?;
        }
        if touched.iter().any(|p| repo::is_config_path(p)) {
            self.load_configs();
            self.push_decision("config structures regenerated");
        }
        Ok(())
    }

    fn config_targets(&self, instr: &InstructionSet) -> Vec<String> {
        instr
            .target_files
            .iter()
            .filter(|p| repo::is_config_path(p))
            .cloned()
            .collect()
    }

    /// Files offered wholesale to the code agent: config targets always;
    /// in round 0 also the java targets named by the initial instructions.
    fn context_files(&self, instr: &InstructionSet) -> Vec<String> {
        instr
            .target_files
            .iter()
            .filter(|p| repo::is_config_path(p) || (instr.round == 0 && repo::is_java_path(p)))
            .cloned()
            .collect()
    }

    // -- build / repair loop ----------------------------------------------

    fn push_build_step(&mut self, result: &BuildResult) {
        let kind = match result.phase {
            build_adapter::BuildPhase::Compile => StepKind::Compile,
            build_adapter::BuildPhase::Test => StepKind::Test,
        };
        let status = match result.status {
            BuildStatus::Pass => "Pass",
            BuildStatus::Fail => "Fail",
        };
        self.push_step(kind, format!("{}: {status}", result.phase.label()), (0, 0), result.duration_ms);
    }

    /// Counts the failure's fingerprint; returns the handover reason when
    /// the repeated-error stop fires (count exceeds max_same_error).
    fn note_failure(&mut self, result: &BuildResult) -> Result<Option<HandoverReason>, ComponentFailure> {
        let digest = build_adapter::digest_errors(result, &self.cfg.repo)?;
        let count = self
            .session
            .error_counts
            .entry(digest.fingerprint.clone())
            .and_modify(|c| *c += 1)
            .or_insert(1);
        let count = *count;
        self.session.last_error_excerpt = digest.excerpt.clone();
        let fingerprint = digest.fingerprint.clone();
        self.pending_digest = Some(digest);
        if count > self.cfg.max_same_error {
            Ok(Some(HandoverReason::RepeatedError { fingerprint, count }))
        } else {
            Ok(None)
        }
    }

    fn resolve_next(&mut self) -> Result<InstructionSet, ComponentFailure> {
        self.session.state = SessionState::Resolving;
        let digest = self
            .pending_digest
            .clone()
            .ok_or_else(|| ComponentFailure("resolution requested without a failure digest".into()))?;
        let round = self.session.last_round;
        let r = control::resolve_errors(&digest, &self.base, &self.configs, round, &self.gateway, &self.pack);
        self.drain_llm_steps();
        let instr = r?;
        self.session.last_round = instr.round;
        Ok(instr)
    }

    /// One compile(+test) pass. `Done` means the session reached a terminal
    /// state; `Continue` carries the next round's instructions.
    fn build_and_check(&mut self) -> Result<LoopOutcome, ComponentFailure> {
        self.session.state = SessionState::Compiling;
        let compiled = build_adapter::compile(&self.cfg.repo, &self.cfg.build_cmd, &self.cfg.extra_env)?;
        self.push_build_step(&compiled);
        if compiled.status == BuildStatus::Fail {
            if let Some(reason) = self.note_failure(&compiled)? {
                self.handover(reason, "");
                return Ok(LoopOutcome::Done);
            }
            let instr = self.resolve_next()?;
            return Ok(LoopOutcome::Continue(instr));
        }

        self.session.state = SessionState::Testing;
        let tested = build_adapter::run_tests(&self.cfg.repo, &self.cfg.test_cmd, &self.cfg.extra_env)?;
        self.push_build_step(&tested);
        if tested.status == BuildStatus::Fail {
            if let Some(reason) = self.note_failure(&tested)? {
                self.handover(reason, "");
                return Ok(LoopOutcome::Done);
            }
            let instr = self.resolve_next()?;
            return Ok(LoopOutcome::Continue(instr));
        }

        self.session.state = SessionState::Succeeded;
        Ok(LoopOutcome::Done)
    }

    /// The apply→compile→test→resolve cycle. `instr` is None when resuming
    /// (the loop re-enters at compilation).
    fn main_loop(&mut self, mut instr: Option<InstructionSet>) -> Result<(), ComponentFailure> {
        loop {
            if let Some(ins) = instr.take() {
                if ins.cannot_resolve {
                    self.handover(HandoverReason::AgentCannotResolve, "agent declared cannot_resolve");
                    return Ok(());
                }
                if ins.round > self.cfg.round_cap {
                    self.handover(
                        HandoverReason::ConfigOrIoFailure,
                        &format!("round cap {} exceeded", self.cfg.round_cap),
                    );
                    return Ok(());
                }
                self.edit_round(&ins)?;
            }
            match self.build_and_check()? {
                LoopOutcome::Done => return Ok(()),
                LoopOutcome::Continue(next) => instr = Some(next),
            }
        }
    }

    fn execute_run(&mut self) {
        let flow = (|| -> Result<(), ComponentFailure> {
            self.prepare_summary_base()?;
            self.load_configs();
            self.session.state = SessionState::InitialInstructions;
            let guide = match &self.cfg.migration_guide {
                Some(p) => Some(fs::read_to_string(p).map_err(|e| ComponentFailure(format!("migration guide: {e}")))?),
                None => None,
            };
            let r = control::initial_instructions(
                guide.as_deref(),
                &self.configs,
                &self.cfg.target_version,
                &self.gateway,
                &self.pack,
            );
            self.drain_llm_steps();
            let instr = r?;
            self.main_loop(Some(instr))
        })();
        if let Err(ComponentFailure(msg)) = flow {
            self.handover(HandoverReason::ConfigOrIoFailure, &format!("component failure: {msg}"));
        }
    }

    fn execute_resume(&mut self) {
        let flow = (|| -> Result<(), ComponentFailure> {
            self.prepare_summary_base()?;
            self.load_configs();
            self.main_loop(None)
        })();
        if let Err(ComponentFailure(msg)) = flow {
            self.handover(HandoverReason::ConfigOrIoFailure, &format!("component failure: {msg}"));
        }
    }

    fn finalize(mut self) -> Result<UpgradeSession, SessionError> {
        // stray exchanges from a failing call still belong in the transcript
        self.drain_llm_steps();
        self.session.wall_time_ms += self.started.elapsed().as_millis() as u64;
        self.session.usage = merge_usage(self.usage_carry, self.gateway.usage_report());
        persist_session(&self.session)?;
        append_exchanges(&self.session, &self.gateway)?;
        Ok(self.session)
    }
}

fn merge_usage(a: UsageReport, b: UsageReport) -> UsageReport {
    UsageReport {
        summarization_prompt_tokens: a.summarization_prompt_tokens + b.summarization_prompt_tokens,
        summarization_completion_tokens: a.summarization_completion_tokens + b.summarization_completion_tokens,
        loop_prompt_tokens: a.loop_prompt_tokens + b.loop_prompt_tokens,
        loop_completion_tokens: a.loop_completion_tokens + b.loop_completion_tokens,
        total_prompt_tokens: a.total_prompt_tokens + b.total_prompt_tokens,
        total_completion_tokens: a.total_completion_tokens + b.total_completion_tokens,
        total_tokens: a.total_tokens + b.total_tokens,
        total_calls: a.total_calls + b.total_calls,
        cost_usd: a.cost_usd + b.cost_usd,
    }
}

// ---------------------------------------------------------------------------
// Public operations

/// Runs a full upgrade session to a terminal state (Succeeded or HandedOver)
/// and persists it under `.ladu/session/<id>/`.
pub fn run(cfg: &ToolConfig) -> Result<UpgradeSession, SessionError> {
    cfg.validate()?;
    let store = cfg.repo.join(summary_store::STORE_DIR);
    if !store.join("index.tsv").exists() && !cfg.summarize_first {
        return Err(SessionError::MissingSummaryBase(store.display().to_string()));
    }
    let _lock = RepoLock::acquire(&cfg.repo)?;
    let session = UpgradeSession {
        session_id: next_session_id(&cfg.repo),
        repo_root: cfg.repo.display().to_string(),
        target_version: cfg.target_version.clone(),
        state: SessionState::Init,
        transcript: Vec::new(),
        error_counts: BTreeMap::new(),
        config: cfg.clone(),
        started_at_unix_ms: unix_ms(),
        wall_time_ms: 0,
        usage: UsageReport::default(),
        handover: None,
        last_error_excerpt: String::new(),
        last_round: 0,
    };
    let mut driver = Driver::new(cfg, session)?;
    driver.execute_run();
    driver.finalize()
}

/// Re-initiates a handed-over session: summaries of hand-edited files are
/// refreshed, error history is reset, and the loop re-enters at compilation.
pub fn resume(resume_token: &str, cfg: &ToolConfig) -> Result<UpgradeSession, SessionError> {
    cfg.validate()?;
    let dir = session_dir(&cfg.repo, resume_token);
    let session_path = dir.join("session.json");
    if !session_path.exists() {
        return Err(SessionError::UnknownToken(resume_token.to_string()));
    }
    let mut session = load_session(&dir)?;
    if session.state != SessionState::HandedOver {
        return Err(SessionError::UnknownToken(resume_token.to_string()));
    }
    let _lock = RepoLock::acquire(&cfg.repo)?;
    session.state = SessionState::Compiling;
    session.error_counts.clear();
    session.handover = None;
    // the resumed half follows the caller's (possibly updated) config
    session.config = cfg.clone();
    session.repo_root = cfg.repo.display().to_string();
    let mut driver = Driver::new(cfg, session)?;
    driver.execute_resume();
    driver.finalize()
}

/// Builds the handover report for a handed-over session.
pub fn handover_report(session: &UpgradeSession) -> Result<HandoverReport, SessionError> {
    let reason = match (&session.state, &session.handover) {
        (SessionState::HandedOver, Some(reason)) => reason.clone(),
        _ => return Err(SessionError::NotHandedOver),
    };
    Ok(HandoverReport {
        reason,
        steps_summary: session.steps_summary(),
        last_error_excerpt: session.last_error_excerpt.clone(),
        resume_token: session.session_id.clone(),
    })
}

// ---------------------------------------------------------------------------
// Session store

fn render_transcript(session: &UpgradeSession) -> String {
    let mut out = String::new();
    for s in &session.transcript {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.index,
            s.kind.label(),
            s.prompt_tokens,
            s.completion_tokens,
            s.summary
        ));
    }
    out
}

fn persist_session(session: &UpgradeSession) -> Result<(), SessionError> {
    let dir = session_dir(Path::new(&session.repo_root), &session.session_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("transcript.log"), render_transcript(session))?;
    let json = serde_json::to_string_pretty(session)
        .map_err(|e| SessionError::CorruptSession(e.to_string()))?;
    fs::write(dir.join("session.json"), json)?;
    if session.state == SessionState::HandedOver {
        let report = handover_report(session)?;
        let report_json = serde_json::to_string_pretty(&report)
            .map_err(|e| SessionError::CorruptSession(e.to_string()))?;
        fs::write(dir.join("report.json"), report_json)?;
        fs::write(dir.join("report.txt"), render_report_text(&report))?;
        fs::write(dir.join("resume.token"), &report.resume_token)?;
    }
    Ok(())
}

/// Full prompt/completion record per gateway call, appended across resumes.
/// Not part of the deterministic transcript; used for auditing which
/// summaries entered which prompts.
fn append_exchanges(session: &UpgradeSession, gateway: &Gateway) -> Result<(), SessionError> {
    let dir = session_dir(Path::new(&session.repo_root), &session.session_id);
    let mut out = String::new();
    for ex in gateway.journal() {
        out.push_str(&serde_json::to_string(&ex).map_err(|e| SessionError::CorruptSession(e.to_string()))?);
        out.push('\n');
    }
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(dir.join("exchanges.jsonl"))?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_session(dir: &Path) -> Result<UpgradeSession, SessionError> {
    let text = fs::read_to_string(dir.join("session.json"))
        .map_err(|e| SessionError::CorruptSession(format!("{}: {e}", dir.display())))?;
    serde_json::from_str(&text).map_err(|e| SessionError::CorruptSession(e.to_string()))
}

pub fn load_report(dir: &Path) -> Result<HandoverReport, SessionError> {
    let text = fs::read_to_string(dir.join("report.json"))
        .map_err(|e| SessionError::CorruptSession(format!("{}: {e}", dir.display())))?;
    serde_json::from_str(&text).map_err(|e| SessionError::CorruptSession(e.to_string()))
}

fn render_report_text(report: &HandoverReport) -> String {
    let mut out = String::new();
    out.push_str("HANDOVER REPORT\n");
    out.push_str(&format!("reason: {}\n", report.reason.label()));
    out.push_str(&format!("resume token: {}\n", report.resume_token));
    out.push_str("steps taken:\n");
    for line in &report.steps_summary {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("last error excerpt:\n");
    for line in report.last_error_excerpt.lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Parses the line-delimited transcript file back into steps (durations are
/// not part of the deterministic transcript and read back as 0).
pub fn parse_transcript(text: &str) -> Result<Vec<Step>, SessionError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(SessionError::CorruptSession(format!("transcript line {} malformed", i + 1)));
        }
        let parse_u64 = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| SessionError::CorruptSession(format!("transcript line {} malformed", i + 1)))
        };
        steps.push(Step {
            index: parse_u64(fields[0])?,
            kind: StepKind::from_label(fields[1])
                .ok_or_else(|| SessionError::CorruptSession(format!("unknown step kind on line {}", i + 1)))?,
            prompt_tokens: parse_u64(fields[2])?,
            completion_tokens: parse_u64(fields[3])?,
            summary: fields[4].to_string(),
            duration_ms: 0,
        });
    }
    Ok(steps)
}

/// Checks the transcript against the state machine's step ordering rules.
pub fn validate_transcript(session: &UpgradeSession) -> Result<(), String> {
    for (i, s) in session.transcript.iter().enumerate() {
        if s.index != i as u64 {
            return Err(format!("step {} has index {}", i, s.index));
        }
        if s.kind != StepKind::LlmCall && (s.prompt_tokens != 0 || s.completion_tokens != 0) {
            return Err(format!("step {} has tokens but is not an llm call", i));
        }
    }
    // a test step requires an immediately preceding passing compile
    for (i, s) in session.transcript.iter().enumerate() {
        if s.kind == StepKind::Test {
            let prev = session.transcript[..i].iter().rev().find(|p| p.kind == StepKind::Compile);
            match prev {
                Some(c) if c.summary.ends_with("Pass") => {}
                _ => return Err(format!("test step {} not preceded by a passing compile", i)),
            }
            let between_applies = session.transcript[..i]
                .iter()
                .rev()
                .take_while(|p| p.kind != StepKind::Compile)
                .any(|p| p.kind == StepKind::Apply);
            if between_applies {
                return Err(format!("apply between compile and test at step {}", i));
            }
        }
    }
    if session.state == SessionState::Succeeded {
        let n = session.transcript.len();
        if n < 2 {
            return Err("succeeded with fewer than two steps".into());
        }
        let compile = &session.transcript[n - 2];
        let test = &session.transcript[n - 1];
        if compile.kind != StepKind::Compile || !compile.summary.ends_with("Pass") {
            return Err("succeeded without a final passing compile".into());
        }
        if test.kind != StepKind::Test || !test.summary.ends_with("Pass") {
            return Err("succeeded without a final passing test".into());
        }
    }
    Ok(())
}
