//! Prompt templates and the parsers for the replies they ask for.
//!
//! The four stage templates and the summary template ship as text files
//! under `templates/` and can be overridden from a directory at runtime.
//! Substitution is a single pass over `{placeholder}` markers, so values
//! that themselves contain braces are never expanded.

mod parse;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::{CallChain, CodeBlockSet, DataflowPath};

pub use parse::{
    parse_analysis_choice, parse_chain_selection, parse_entry_response, parse_reasoner_response,
    AnalysisChoice, ChainSelection, EntryPoints, ReasonerOutput, Strategy, MAX_ENTRY_ITEMS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("bug report is empty")]
    EmptyReport,
    #[error("reply names no method or file")]
    NoEntryPoints,
    #[error("reply names neither data flow nor call graph analysis")]
    UnparseableChoice,
    #[error("reply has neither a Hypothesis nor a METHOD MISSING field")]
    UnparseableReasoning,
    #[error("template {file}: {message}")]
    Template { file: String, message: String },
}

impl PromptError {
    pub fn kind(&self) -> &'static str {
        match self {
            PromptError::EmptyReport => "InvalidReport",
            PromptError::NoEntryPoints => "NoEntryPoints",
            PromptError::UnparseableChoice => "UnparseableChoice",
            PromptError::UnparseableReasoning => "UnparseableReasoning",
            PromptError::Template { .. } => "TemplateInvalid",
        }
    }
}

/// Verbatim bug report text: a stack trace, sanitizer output or prose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BugReport(String);

impl BugReport {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyReport);
        }
        Ok(BugReport(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    EntryPoints,
    AnalysisChoice,
    ChainSelection,
    Reasoner,
    Summary,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::EntryPoints,
        TemplateKind::AnalysisChoice,
        TemplateKind::ChainSelection,
        TemplateKind::Reasoner,
        TemplateKind::Summary,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::EntryPoints => "entry_points.txt",
            TemplateKind::AnalysisChoice => "analysis_choice.txt",
            TemplateKind::ChainSelection => "chain_selection.txt",
            TemplateKind::Reasoner => "reasoner.txt",
            TemplateKind::Summary => "summary.txt",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::EntryPoints => &["bug_report", "filename"],
            TemplateKind::AnalysisChoice => &["bug_report", "codeblocks", "function_name"],
            TemplateKind::ChainSelection => &["callpaths", "bug_report", "codeblocks"],
            TemplateKind::Reasoner => &["codeblocks", "callmethods", "path_to_explore", "bug_report"],
            TemplateKind::Summary => &["bug_report", "strategy", "reasoning_steps", "hypothesis"],
        }
    }

    pub fn builtin(self) -> &'static str {
        match self {
            TemplateKind::EntryPoints => include_str!("../../templates/entry_points.txt"),
            TemplateKind::AnalysisChoice => include_str!("../../templates/analysis_choice.txt"),
            TemplateKind::ChainSelection => include_str!("../../templates/chain_selection.txt"),
            TemplateKind::Reasoner => include_str!("../../templates/reasoner.txt"),
            TemplateKind::Summary => include_str!("../../templates/summary.txt"),
        }
    }

    /// Line appended when a reply has to be requested again.
    pub fn correction_note(self) -> &'static str {
        match self {
            TemplateKind::EntryPoints => {
                "Your previous reply could not be read. Answer only in the form METHOD:1.[method] FILE:1.[FILE]."
            }
            TemplateKind::AnalysisChoice => {
                "Your previous reply could not be read. Answer only with data flow analysis: source:[SOURCE] sink:[SINK] or call graph analysis."
            }
            TemplateKind::ChainSelection => {
                "Your previous reply could not be read. Answer only with lines of the form path: 1.[CALL PATH]."
            }
            TemplateKind::Reasoner | TemplateKind::Summary => {
                "Your previous reply could not be read. Use the labels REASONING METHODS:, REASONING STEPS:, Hypothesis: and, if needed, METHOD MISSING:."
            }
        }
    }
}

pub fn checksum(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Replaces each `{name}` whose name is listed in `values`, in one pass.
/// Unknown brace groups are copied through unchanged.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i + 1..];
        let hit = values
            .iter()
            .find(|(k, _)| tail.starts_with(k) && tail[k.len()..].starts_with('}'));
        match hit {
            Some((k, v)) => {
                out.push_str(v);
                rest = &tail[k.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Appends extra instruction lines (missing-name notices, corrections).
pub fn with_notes(prompt: &str, notes: &[String]) -> String {
    if notes.is_empty() {
        return prompt.to_string();
    }
    let mut out = prompt.to_string();
    for n in notes {
        out.push('\n');
        out.push_str(n);
    }
    out
}

pub fn render_chain_list(chains: &[CallChain]) -> String {
    chains
        .iter()
        .enumerate()
        .map(|(i, c)| format!("\n{}. {}", i + 1, c))
        .collect()
}

pub fn render_dataflow_paths(paths: &[DataflowPath]) -> String {
    if paths.is_empty() {
        return "(none)".to_string();
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| format!("\npath {}:\n{}", i + 1, p.render()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptKit {
    texts: Vec<String>,
}

impl Default for PromptKit {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptKit {
    pub fn builtin() -> Self {
        PromptKit {
            texts: TemplateKind::ALL.iter().map(|k| k.builtin().to_string()).collect(),
        }
    }

    /// Built-in templates, with any file of the same name in `dir` taking
    /// precedence. Overrides must keep every placeholder.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut kit = Self::builtin();
        for (slot, kind) in TemplateKind::ALL.into_iter().enumerate() {
            let path = dir.join(kind.file_name());
            if !path.is_file() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
            for p in kind.placeholders() {
                if !text.contains(&format!("{{{p}}}")) {
                    return Err(PromptError::Template {
                        file: path.display().to_string(),
                        message: format!("missing placeholder {{{p}}}"),
                    });
                }
            }
            kit.texts[slot] = text;
        }
        Ok(kit)
    }

    pub fn template(&self, kind: TemplateKind) -> &str {
        let slot = TemplateKind::ALL.iter().position(|k| *k == kind).expect("listed");
        &self.texts[slot]
    }

    pub fn checksums(&self) -> Vec<(&'static str, String)> {
        TemplateKind::ALL
            .iter()
            .map(|k| (k.file_name(), checksum(self.template(*k))))
            .collect()
    }

    pub fn render_entry_prompt(&self, report: &BugReport, filenames: &[String]) -> String {
        fill_template(
            self.template(TemplateKind::EntryPoints),
            &[("bug_report", report.text()), ("filename", &filenames.join(", "))],
        )
    }

    pub fn render_analysis_choice_prompt(
        &self,
        report: &BugReport,
        codeblocks: &CodeBlockSet,
        function_names: &[String],
    ) -> String {
        fill_template(
            self.template(TemplateKind::AnalysisChoice),
            &[
                ("bug_report", report.text()),
                ("codeblocks", &codeblocks.render()),
                ("function_name", &function_names.join(", ")),
            ],
        )
    }

    pub fn render_chain_selection_prompt(
        &self,
        chains: &[CallChain],
        report: &BugReport,
        codeblocks: &CodeBlockSet,
    ) -> String {
        fill_template(
            self.template(TemplateKind::ChainSelection),
            &[
                ("callpaths", &render_chain_list(chains)),
                ("bug_report", report.text()),
                ("codeblocks", &codeblocks.render()),
            ],
        )
    }

    /// `callmethods` and `path_to_explore` arrive pre-rendered: code of the
    /// functions on the selected chains and the chain list in call-graph
    /// mode, hop lists and the source/sink pair in data-flow mode.
    pub fn render_reasoner_prompt(
        &self,
        codeblocks: &CodeBlockSet,
        callmethods: &str,
        path_to_explore: &str,
        report: &BugReport,
    ) -> String {
        fill_template(
            self.template(TemplateKind::Reasoner),
            &[
                ("codeblocks", &codeblocks.render()),
                ("callmethods", callmethods),
                ("path_to_explore", path_to_explore),
                ("bug_report", report.text()),
            ],
        )
    }

    pub fn render_summary_prompt(&self, report: &BugReport, output: &ReasonerOutput) -> String {
        let strategy = output.strategy.map_or("unspecified", Strategy::label);
        fill_template(
            self.template(TemplateKind::Summary),
            &[
                ("bug_report", report.text()),
                ("strategy", strategy),
                ("reasoning_steps", &output.steps),
                ("hypothesis", &output.hypothesis),
            ],
        )
    }
}
