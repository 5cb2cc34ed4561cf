//! Core library for summary-guided automated Java dependency upgrades.
//!
//! The pipeline: a summary agent condenses every Java file into one-line
//! unit summaries aligned to the file's syntactic structure; a control agent
//! localizes change sites by reading file-level summaries first, then the
//! full summaries of selected files; a code agent applies edits directly to
//! the working tree; and an orchestrator drives the apply→compile→test→
//! repair loop with bounded stop conditions and human handover. An eval
//! harness scores candidate patch diffs against gold diffs by exact line
//! matching.

pub mod build_adapter;
pub mod code_editor;
pub mod config;
pub mod control;
pub mod eval;
pub mod llm_gateway;
pub mod orchestrator;
pub mod prompts;
pub mod repo;
pub mod summary_store;
pub mod syntax_units;

pub use config::{BackendSpec, ToolConfig};
pub use orchestrator::{HandoverReason, HandoverReport, SessionState, UpgradeSession};
