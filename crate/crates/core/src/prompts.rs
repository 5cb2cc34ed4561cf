//! Prompt pack: named templates with `{{placeholder}}` variables.
//!
//! Templates are configuration, not code contract. Defaults are embedded;
//! a directory of `<name>.txt` files can override any of them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const DEFAULTS: &[(&str, &str)] = &[
    ("summarize", include_str!("../prompts/summarize.txt")),
    ("summarize_retry", include_str!("../prompts/summarize_retry.txt")),
    ("initial_instructions", include_str!("../prompts/initial_instructions.txt")),
    ("select_files", include_str!("../prompts/select_files.txt")),
    ("select_units", include_str!("../prompts/select_units.txt")),
    ("resolve", include_str!("../prompts/resolve.txt")),
    ("code_edit", include_str!("../prompts/code_edit.txt")),
    ("reformat", include_str!("../prompts/reformat.txt")),
];

#[derive(Debug, Clone)]
pub struct PromptPack {
    templates: BTreeMap<String, String>,
}

impl Default for PromptPack {
    fn default() -> Self {
        let templates = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        PromptPack { templates }
    }
}

impl PromptPack {
    /// Defaults overlaid with any `<name>.txt` files found in `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut pack = PromptPack::default();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                pack.templates.insert(stem.to_string(), fs::read_to_string(&path)?);
            }
        }
        Ok(pack)
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut text = self
            .templates
            .get(name)
            .unwrap_or_else(|| panic!("unknown prompt template '{name}'"))
            .clone();
        for (k, v) in vars {
            text = text.replace(&format!("{{{{{k}}}}}"), v);
        }
        text
    }
}
