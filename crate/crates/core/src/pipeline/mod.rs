//! End-to-end localization run: entry points, static analysis, the
//! reasoning loop with on-demand code, then a summary.

mod run;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::Stage;
use crate::prompts::{EntryPoints, Strategy};

pub use run::{run, run_with_kit};

pub const MAX_ENTRY_POINTS: usize = crate::prompts::MAX_ENTRY_ITEMS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Upper bound on reasoner calls, re-asks excluded.
    pub max_iterations: usize,
    pub max_chain_depth: usize,
    pub max_chains: usize,
    /// Characters of code per prompt.
    pub code_budget: usize,
    /// Extra attempts after a reply that cannot be parsed.
    pub max_reasks: usize,
    pub max_dataflow_paths: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_iterations: 5,
            max_chain_depth: crate::analyzer::DEFAULT_MAX_DEPTH,
            max_chains: crate::analyzer::DEFAULT_MAX_CHAINS,
            code_budget: crate::analyzer::DEFAULT_CODE_BUDGET,
            max_reasks: 2,
            max_dataflow_paths: 20,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.max_chain_depth == 0 {
            return Err("max_chain_depth must be at least 1".into());
        }
        if self.max_chains == 0 || self.code_budget == 0 || self.max_dataflow_paths == 0 {
            return Err("max_chains, code_budget and max_dataflow_paths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Inconclusive,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Inconclusive => "inconclusive",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Callgraph,
    Dataflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceExchange {
    pub stage: Stage,
    pub prompt: String,
    pub response: String,
    /// What the reply was parsed into, or the parse error.
    pub parsed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEvent {
    pub tool: String,
    pub inputs_digest: String,
    pub outputs_digest: String,
    pub detail: String,
}

impl ToolEvent {
    pub(crate) fn new(tool: &str, inputs: &str, outputs: &str, detail: String) -> Self {
        ToolEvent {
            tool: tool.to_string(),
            inputs_digest: digest(inputs),
            outputs_digest: digest(outputs),
            detail,
        }
    }
}

fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub status: RunStatus,
    pub hypothesis: String,
    pub strategy: Option<Strategy>,
    pub reasoning_steps: String,
    pub summary: String,
    pub entry_points: EntryPoints,
    pub analysis_kind: Option<AnalysisKind>,
    pub selected_chains: Vec<String>,
    pub iterations: usize,
    pub warnings: Vec<String>,
    pub failure_reason: Option<String>,
    pub trace: Vec<TraceExchange>,
    pub tool_events: Vec<ToolEvent>,
}

impl LocalizationResult {
    /// A failed result carrying no run at all, e.g. when inputs could not
    /// be loaded.
    pub fn failed(reason: impl Into<String>) -> Self {
        LocalizationResult {
            id: None,
            status: RunStatus::Failed,
            hypothesis: String::new(),
            strategy: None,
            reasoning_steps: String::new(),
            summary: String::new(),
            entry_points: EntryPoints::default(),
            analysis_kind: None,
            selected_chains: Vec::new(),
            iterations: 0,
            warnings: Vec::new(),
            failure_reason: Some(reason.into()),
            trace: Vec::new(),
            tool_events: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}
