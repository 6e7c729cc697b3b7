use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, LlmBackend, LlmError, Stage};

/// Stable hash of a prompt with all whitespace runs collapsed to one space.
pub fn fingerprint(prompt: &str) -> String {
    let normalized = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub temperature: Option<f32>,
    #[serde(default)]
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: String,
}

impl TranscriptEntry {
    pub fn new(stage: Stage, prompt: &str, response: impl Into<String>) -> Self {
        TranscriptEntry {
            stage,
            fingerprint: Some(fingerprint(prompt)),
            prompt: Some(prompt.to_string()),
            response: response.into(),
        }
    }

    /// An entry that matches any prompt for its stage.
    pub fn unpinned(stage: Stage, response: impl Into<String>) -> Self {
        TranscriptEntry {
            stage,
            fingerprint: None,
            prompt: None,
            response: response.into(),
        }
    }

    fn effective_fingerprint(&self) -> Option<String> {
        self.fingerprint
            .clone()
            .or_else(|| self.prompt.as_deref().map(fingerprint))
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TranscriptHeader,
}

/// JSONL transcript: an optional header line, then one entry per line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: Option<TranscriptHeader>,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn parse(text: &str, label: &str) -> Result<Self, LlmError> {
        let mut t = Transcript::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let invalid = |message: String| LlmError::TranscriptInvalid {
                path: label.to_string(),
                line: i + 1,
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
            if value.get("header").is_some() {
                let h: HeaderLine = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
                t.header = Some(h.header);
            } else {
                t.entries
                    .push(serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?);
            }
        }
        Ok(t)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::to_string(&HeaderLine { header: h.clone() }).expect("serializable"));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

pub fn load_transcript(path: &Path) -> Result<Transcript, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Transcript::parse(&text, &path.display().to_string())
}

/// Replays a transcript. Each call consumes the first unused entry for the
/// stage whose fingerprint matches the prompt, or failing that the first
/// unused entry for the stage.
pub struct ScriptedBackend {
    state: Mutex<Vec<(TranscriptEntry, bool)>>,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        ScriptedBackend {
            state: Mutex::new(transcript.entries.into_iter().map(|e| (e, false)).collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("poisoned").iter().filter(|(_, used)| !used).count()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<Completion, LlmError> {
        let fp = fingerprint(prompt);
        let mut entries = self.state.lock().expect("poisoned");
        let open = |e: &(TranscriptEntry, bool)| !e.1 && e.0.stage == stage;
        let exact = entries
            .iter()
            .position(|e| open(e) && e.0.effective_fingerprint().as_deref() == Some(fp.as_str()));
        let idx = match exact.or_else(|| entries.iter().position(open)) {
            Some(i) => i,
            None => {
                return Err(match entries.iter().find(|e| !e.1) {
                    Some((next, _)) => LlmError::TranscriptStageMismatch {
                        requested: stage,
                        next: next.stage,
                    },
                    None => LlmError::TranscriptExhausted(stage),
                })
            }
        };
        let entry = &mut entries[idx];
        if exact.is_none() && entry.0.effective_fingerprint().is_some() {
            log::warn!("{stage}: transcript fingerprint mismatch, replaying next entry for the stage");
        }
        entry.1 = true;
        Ok(Completion::text(entry.0.response.clone()))
    }
}

/// Delegates to another backend and appends every exchange to a transcript
/// file, writing a header first when the file is new.
pub struct RecordingBackend {
    inner: Box<dyn LlmBackend>,
    file: Mutex<File>,
}

impl RecordingBackend {
    pub fn create(
        inner: Box<dyn LlmBackend>,
        path: &Path,
        header: TranscriptHeader,
    ) -> Result<Self, LlmError> {
        let io = |source| LlmError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() == 0 {
            let line = serde_json::to_string(&HeaderLine { header }).expect("serializable");
            writeln!(file, "{line}").map_err(io)?;
        }
        Ok(RecordingBackend {
            inner,
            file: Mutex::new(file),
        })
    }
}

impl LlmBackend for RecordingBackend {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<Completion, LlmError> {
        let c = self.inner.complete(stage, prompt)?;
        let line = serde_json::to_string(&TranscriptEntry::new(stage, prompt, c.text.clone()))
            .expect("serializable");
        let mut f = self.file.lock().expect("poisoned");
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .map_err(|source| LlmError::Io {
                path: "transcript".into(),
                source,
            })?;
        Ok(c)
    }
}
