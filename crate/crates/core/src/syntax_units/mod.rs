//! Deterministic extraction of nested code units (file / class / method) from
//! Java sources and key-path structures from pom/yml configuration files.
//!
//! The scanner is structural, not a grammar parse: it matches braces while
//! skipping comments and string/char literals, and recognizes type and method
//! declarations at the scopes where Java allows them. That is enough to give
//! every summarizable unit a name and an exact line span.

mod config;
mod java;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::extract_config_structure;
pub use java::extract_units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    File,
    Class,
    Interface,
    Enum,
    Method,
    Constructor,
}

impl UnitKind {
    pub fn token(&self) -> &'static str {
        match self {
            UnitKind::File => "file",
            UnitKind::Class => "class",
            UnitKind::Interface => "interface",
            UnitKind::Enum => "enum",
            UnitKind::Method => "method",
            UnitKind::Constructor => "ctor",
        }
    }

    pub fn from_token(tok: &str) -> Option<UnitKind> {
        Some(match tok {
            "file" => UnitKind::File,
            "class" => UnitKind::Class,
            "interface" => UnitKind::Interface,
            "enum" => UnitKind::Enum,
            "method" => UnitKind::Method,
            "ctor" => UnitKind::Constructor,
            _ => return None,
        })
    }
}

/// A nested syntactic unit with a 1-based, inclusive line span.
///
/// Invariants: children lie inside their parent's span, siblings are
/// disjoint and ordered by `start_line`, and the root is a `File` node
/// spanning the whole file (`end_line == 0` for an empty file).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpan {
    pub path: String,
    pub kind: UnitKind,
    pub name: String,
    pub start_line: usize,
    pub end_line: usize,
    pub children: Vec<UnitSpan>,
}

impl UnitSpan {
    /// Total number of nodes including the receiver.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(UnitSpan::node_count).sum::<usize>()
    }

    /// Resolves a name chain (`["Foo", "bar"]`) to a descendant unit.
    /// An empty chain resolves to the receiver. The first match in
    /// document order wins.
    pub fn resolve(&self, segments: &[String]) -> Option<&UnitSpan> {
        let Some((head, rest)) = segments.split_first() else {
            return Some(self);
        };
        self.children
            .iter()
            .filter(|c| &c.name == head)
            .find_map(|c| c.resolve(rest))
    }

    /// Bracketed child-count rendering used in shape mismatch messages,
    /// e.g. a class with two methods inside a file prints `[[[],[]]]`.
    pub fn shape_string(&self) -> String {
        fn walk(node: &UnitSpan, out: &mut String) {
            out.push('[');
            for c in &node.children {
                walk(c, out);
            }
            out.push(']');
        }
        let mut s = String::new();
        for c in &self.children {
            walk(c, &mut s);
        }
        format!("[{s}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigFormat {
    Pom,
    Yaml,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEntry {
    /// Slash-joined element/key chain, e.g. `project/dependencies/dependency/version`.
    pub key_path: String,
    /// First line of the value text.
    pub value_excerpt: String,
    /// 1-based line of the value in the file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigStructure {
    pub path: String,
    pub format: ConfigFormat,
    pub entries: Vec<ConfigEntry>,
}

impl ConfigStructure {
    /// Plain-text rendering used in control-agent prompts.
    pub fn render(&self) -> String {
        let mut out = format!("FILE {}\n", self.path);
        for e in &self.entries {
            out.push_str(&format!("  {} = {} (line {})\n", e.key_path, e.value_excerpt, e.line));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error("unbalanced braces at line {0}")]
    UnbalancedBraces(usize),
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("unsupported file type: {0}")]
    UnsupportedFile(String),
}
