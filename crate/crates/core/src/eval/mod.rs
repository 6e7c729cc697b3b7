//! Corpus evaluation: run the pipeline over a manifest of cases and count
//! how many hypotheses name a ground-truth location.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::load_source_tree;
use crate::llm::{LlmConfig, LlmGateway};
use crate::pipeline::{run, LocalizationResult, PipelineConfig, RunStatus};
use crate::prompts::BugReport;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "eval_report.json";
pub const TABLE_FILE: &str = "eval_table.txt";
pub const REVIEW_FILE: &str = "eval_review.txt";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    ManifestInvalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::ManifestInvalid(_) => "ManifestInvalid",
            EvalError::Io { .. } => "Io",
        }
    }
}

/// One manifest row. Paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub report: PathBuf,
    pub source: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    pub ground_truth: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub verdict: Verdict,
    pub matched_name: Option<String>,
    pub status: RunStatus,
    pub hypothesis: String,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_label: String,
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub per_case: Vec<CaseOutcome>,
}

impl EvalReport {
    pub fn from_outcomes(model_label: &str, per_case: Vec<CaseOutcome>) -> Self {
        let correct = per_case.iter().filter(|c| c.verdict == Verdict::Correct).count();
        EvalReport {
            model_label: model_label.to_string(),
            total: per_case.len(),
            correct,
            incorrect: per_case.len() - correct,
            per_case,
        }
    }

    pub fn render_table(&self) -> String {
        format!(
            "| Models | Number of reports | Correct | Incorrect |\n\
             |--------|-------------------|---------|-----------|\n\
             | {} | {} | {} | {} |\n",
            self.model_label, self.total, self.correct, self.incorrect
        )
    }

    /// Per-case hypotheses for manual adjudication.
    pub fn render_review(&self) -> String {
        let mut out = String::new();
        for c in &self.per_case {
            let _ = writeln!(
                out,
                "== {} [{:?}, {}] matched: {}",
                c.case_id,
                c.verdict,
                c.status.as_str(),
                c.matched_name.as_deref().unwrap_or("-")
            );
            if let Some(r) = &c.failure_reason {
                let _ = writeln!(out, "failure: {r}");
            }
            let _ = writeln!(out, "{}\n", c.hypothesis);
        }
        out
    }

    pub fn write_to(&self, dir: &Path, review: bool) -> Result<(), EvalError> {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        write(REPORT_FILE, serde_json::to_string_pretty(self).expect("serializable"))?;
        write(TABLE_FILE, self.render_table())?;
        if review {
            write(REVIEW_FILE, self.render_review())?;
        }
        Ok(())
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn contains_whole(text: &str, name: &str) -> bool {
    if name.is_empty() {
        return false;
    }
    let bytes = text.as_bytes();
    text.match_indices(name).any(|(at, _)| {
        let before = at.checked_sub(1).map(|i| bytes[i]);
        let after = bytes.get(at + name.len()).copied();
        !before.is_some_and(is_word_byte) && !after.is_some_and(is_word_byte)
    })
}

/// Correct iff the run completed and some ground-truth name occurs as a
/// whole token, case-sensitively, in the hypothesis or the summary.
pub fn judge(result: &LocalizationResult, truth: &[String]) -> (Verdict, Option<String>) {
    if result.status != RunStatus::Completed {
        return (Verdict::Incorrect, None);
    }
    truth
        .iter()
        .find(|t| contains_whole(&result.hypothesis, t) || contains_whole(&result.summary, t))
        .map_or((Verdict::Incorrect, None), |t| (Verdict::Correct, Some(t.clone())))
}

pub fn load_manifest(corpus_dir: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let path = corpus_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cases: Vec<EvalCase> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: EvalCase = serde_json::from_str(line)
            .map_err(|e| EvalError::ManifestInvalid(format!("line {}: {e}", i + 1)))?;
        if case.ground_truth.iter().all(|t| t.trim().is_empty()) {
            return Err(EvalError::ManifestInvalid(format!(
                "line {}: case {} has no ground truth",
                i + 1,
                case.case_id
            )));
        }
        if cases.iter().any(|c| c.case_id == case.case_id) {
            return Err(EvalError::ManifestInvalid(format!(
                "line {}: duplicate case_id {}",
                i + 1,
                case.case_id
            )));
        }
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(EvalError::ManifestInvalid("manifest lists no cases".into()));
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub model_label: String,
    pub pipeline: PipelineConfig,
    /// Used for cases without a transcript.
    pub llm: LlmConfig,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let llm = LlmConfig::default();
        EvalOptions {
            model_label: llm.model_name.clone(),
            pipeline: PipelineConfig::default(),
            llm,
            workers: 2,
        }
    }
}

/// Runs one case. Input problems become a failed result, so one broken
/// case never stops the corpus.
pub fn run_case(corpus_dir: &Path, case: &EvalCase, opts: &EvalOptions) -> LocalizationResult {
    let attempt = || -> Result<LocalizationResult, String> {
        let report_path = corpus_dir.join(&case.report);
        let text = std::fs::read_to_string(&report_path)
            .map_err(|e| format!("Io: {}: {e}", report_path.display()))?;
        let report = BugReport::new(text).map_err(|e| format!("{}: {e}", e.kind()))?;
        let tree = load_source_tree(&corpus_dir.join(&case.source))
            .map_err(|e| format!("{}: {e}", e.kind()))?;
        let llm = match &case.transcript {
            Some(t) => LlmConfig::scripted(corpus_dir.join(t)),
            None => opts.llm.clone(),
        };
        let gateway = LlmGateway::from_config(&llm).map_err(|e| format!("{}: {e}", e.kind()))?;
        Ok(run(&report, &tree, &opts.pipeline, &gateway))
    };
    let mut result = attempt().unwrap_or_else(LocalizationResult::failed);
    result.id = Some(case.case_id.clone());
    result
}

pub fn run_corpus(corpus_dir: &Path, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let cases = load_manifest(corpus_dir)?;
    let slots: Vec<Mutex<Option<CaseOutcome>>> = cases.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.workers.clamp(1, cases.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = cases.get(i) else { break };
                let result = run_case(corpus_dir, case, opts);
                let (verdict, matched_name) = judge(&result, &case.ground_truth);
                log::info!("{}: {:?}", case.case_id, verdict);
                *slots[i].lock().expect("poisoned") = Some(CaseOutcome {
                    case_id: case.case_id.clone(),
                    verdict,
                    matched_name,
                    status: result.status,
                    hypothesis: result.hypothesis,
                    failure_reason: result.failure_reason,
                });
            });
        }
    });
    let per_case = slots
        .into_iter()
        .map(|m| m.into_inner().expect("poisoned").expect("every case ran"))
        .collect();
    Ok(EvalReport::from_outcomes(&opts.model_label, per_case))
}
