//! Parsers for the reply formats requested by the stage templates.
//!
//! Leniency is limited to what real replies tend to vary: case of labels,
//! whitespace, optional square brackets, markdown emphasis and backticks
//! around values. Anything else is an error rather than a guess.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::analyzer::{parse_call_chain, CallChain};

pub const MAX_ENTRY_ITEMS: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryPoints {
    pub methods: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisChoice {
    Callgraph,
    Dataflow { source: String, sink: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(rename = "forward_reasoning")]
    Forward,
    #[serde(rename = "backward_reasoning")]
    Backward,
    CodeComprehension,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Forward => "forward reasoning",
            Strategy::Backward => "backward reasoning",
            Strategy::CodeComprehension => "code comprehension",
        }
    }

    /// The strategy whose keyword occurs first in `text`.
    fn detect(text: &str) -> Option<Strategy> {
        let lower = text.to_ascii_lowercase();
        [
            ("forward", Strategy::Forward),
            ("backward", Strategy::Backward),
            ("comprehension", Strategy::CodeComprehension),
        ]
        .into_iter()
        .filter_map(|(kw, s)| lower.find(kw).map(|at| (at, s)))
        .min_by_key(|(at, _)| *at)
        .map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerOutput {
    /// Absent when the reply only requests more methods.
    pub strategy: Option<Strategy>,
    pub steps: String,
    pub hypothesis: String,
    pub missing_methods: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSelection {
    pub chains: Vec<CallChain>,
    pub warnings: Vec<String>,
    /// No usable selection; `chains` holds the first offered chain.
    pub fell_back: bool,
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static regex")
}

/// Strips wrapping that carries no meaning: brackets, backticks, quotes,
/// emphasis and trailing punctuation.
fn clean_value(raw: &str) -> String {
    let mut v = raw.trim();
    loop {
        let before = v;
        v = v.trim_matches(|c: char| matches!(c, '`' | '*' | '"' | '\'' | '[' | ']'));
        v = v.trim_end_matches(['.', ',', ';']);
        v = v.trim();
        if v == before {
            return v.to_string();
        }
    }
}

fn strip_call_parens(name: &str) -> String {
    match name.find('(') {
        Some(i) if name.ends_with(')') => name[..i].trim_end().to_string(),
        _ => name.to_string(),
    }
}

fn is_none_marker(v: &str) -> bool {
    v.eq_ignore_ascii_case("none")
}

static ENTRY_KEY: LazyLock<Regex> = LazyLock::new(|| re(r"(?i)\b(method|file)s?[\s*]*:[\s*]*"));
static ENTRY_ITEM: LazyLock<Regex> =
    LazyLock::new(|| re(r"^[\s,]*(\d+)\s*\.\s*(\[[^\]\n]*\]|`[^`\n]*`|[^\s,;\[\]()]+(?:\([^)\n]*\))?)"));

/// Reads `METHOD:n.value` and `FILE:n.value` items. A key may be followed
/// by several numbered items (`METHOD: 1.a 2.b`). Items are ordered by their
/// number, `NONE` is dropped and at most three of each are kept.
pub fn parse_entry_response(text: &str) -> Result<EntryPoints, PromptError> {
    let mut methods: Vec<(u32, usize, String)> = Vec::new();
    let mut files: Vec<(u32, usize, String)> = Vec::new();
    let mut seq = 0usize;
    for key in ENTRY_KEY.captures_iter(text) {
        let is_method = key[1].eq_ignore_ascii_case("method");
        let mut at = key.get(0).expect("whole match").end();
        while let Some(item) = ENTRY_ITEM.captures(&text[at..]) {
            at += item.get(0).expect("whole match").end();
            let n: u32 = item[1].parse().unwrap_or(u32::MAX);
            let mut value = clean_value(&item[2]);
            if is_method {
                value = strip_call_parens(&value);
            }
            if value.is_empty() || is_none_marker(&value) {
                continue;
            }
            seq += 1;
            let list = if is_method { &mut methods } else { &mut files };
            list.push((n, seq, value));
        }
    }
    let finish = |mut items: Vec<(u32, usize, String)>| {
        items.sort();
        let mut seen = BTreeSet::new();
        items
            .into_iter()
            .map(|(_, _, v)| v)
            .filter(|v| seen.insert(v.clone()))
            .take(MAX_ENTRY_ITEMS)
            .collect::<Vec<_>>()
    };
    let ep = EntryPoints {
        methods: finish(methods),
        files: finish(files),
    };
    if ep.methods.is_empty() && ep.files.is_empty() {
        return Err(PromptError::NoEntryPoints);
    }
    Ok(ep)
}

static DATAFLOW: LazyLock<Regex> = LazyLock::new(|| {
    re(r"(?i)data\s*flow\s+analysis[\s*]*:?[\s*]*source\s*:\s*(\[[^\]\n]*\]|[^\s\[\],]+)[\s,]*sink\s*:\s*(\[[^\]\n]*\]|[^\s\[\],]+)")
});
static CALLGRAPH: LazyLock<Regex> = LazyLock::new(|| re(r"(?i)call\s*graph"));

fn is_placeholder(v: &str) -> bool {
    v.eq_ignore_ascii_case("source") || v.eq_ignore_ascii_case("sink")
}

pub fn parse_analysis_choice(text: &str) -> Result<AnalysisChoice, PromptError> {
    for caps in DATAFLOW.captures_iter(text) {
        let source = strip_call_parens(&clean_value(&caps[1]));
        let sink = strip_call_parens(&clean_value(&caps[2]));
        if !source.is_empty() && !sink.is_empty() && !is_placeholder(&source) && !is_placeholder(&sink) {
            return Ok(AnalysisChoice::Dataflow { source, sink });
        }
    }
    if CALLGRAPH.is_match(text) {
        return Ok(AnalysisChoice::Callgraph);
    }
    Err(PromptError::UnparseableChoice)
}

static PATH_KEY: LazyLock<Regex> = LazyLock::new(|| re(r"(?i)\bpaths?[\s*]*:"));
static ITEM_NUMBER: LazyLock<Regex> = LazyLock::new(|| re(r"(?:^|\s)\d+\s*[.)]\s*"));
static NUMBERED_LINE: LazyLock<Regex> = LazyLock::new(|| re(r"^\s*\d+\s*[.)]\s*(.*)$"));

fn candidate_texts(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let marks: Vec<_> = PATH_KEY.find_iter(line).collect();
        for (i, m) in marks.iter().enumerate() {
            let end = marks.get(i + 1).map_or(line.len(), |n| n.start());
            let segment = &line[m.end()..end];
            out.extend(ITEM_NUMBER.split(segment).map(clean_value).filter(|s| !s.is_empty()));
        }
    }
    if out.is_empty() {
        for line in text.lines() {
            let body = NUMBERED_LINE
                .captures(line)
                .map_or(line, |c| c.get(1).expect("group").as_str());
            if body.contains("->") || body.contains("<-") {
                out.push(clean_value(body));
            }
        }
    }
    out
}

/// Reads `path: n.<chain>` items and keeps only chains that are offered,
/// or a contiguous run of an offered chain. A chain written in the
/// opposite arrow notation is accepted in the offered orientation.
pub fn parse_chain_selection(text: &str, offered: &[CallChain]) -> ChainSelection {
    let mut sel = ChainSelection::default();
    for cand in candidate_texts(text) {
        let chain = match parse_call_chain(&cand) {
            Ok(c) => c,
            Err(e) => {
                sel.warnings.push(format!("ignored selection {cand:?}: {e}"));
                continue;
            }
        };
        let flipped = chain.flipped();
        let accepted = if offered.iter().any(|o| o.contains_contiguous(&chain)) {
            Some(chain)
        } else if offered.iter().any(|o| o.contains_contiguous(&flipped)) {
            sel.warnings
                .push(format!("selection {cand:?} used the opposite arrow notation"));
            Some(flipped)
        } else {
            sel.warnings.push(format!("dropped chain not offered: {cand}"));
            None
        };
        if let Some(c) = accepted {
            if !sel.chains.contains(&c) {
                sel.chains.push(c);
            }
        }
    }
    if sel.chains.is_empty() {
        if let Some(first) = offered.first() {
            sel.warnings
                .push(format!("no usable selection, falling back to {first}"));
            sel.chains.push(first.clone());
            sel.fell_back = true;
        }
    }
    sel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Method,
    Steps,
    Hypothesis,
    Missing,
}

static REASONER_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    re(r"(?i)\b(reasoning\s+methods?|reasoning\s+steps?|hypothesis|methods?\s+missing|missing\s+methods?)[\s*]*:[\s*]*")
});
static PAREN_GROUP: LazyLock<Regex> = LazyLock::new(|| re(r"\([^()]*\)"));

const NOT_A_NAME: &[&str] = &["none", "n/a", "na", "nil", "nothing", "no", "needed", "required", "and"];

fn field_of(label: &str) -> Field {
    let l = label.to_ascii_lowercase();
    if l.starts_with("reasoning") && l.contains("method") {
        Field::Method
    } else if l.starts_with("reasoning") {
        Field::Steps
    } else if l == "hypothesis" {
        Field::Hypothesis
    } else {
        Field::Missing
    }
}

/// Strips one pair of brackets wrapping the whole value.
fn unwrap_field(raw: &str) -> String {
    let v = raw.trim().trim_matches('*').trim();
    let v = v
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .unwrap_or(v);
    v.trim().to_string()
}

fn missing_names(value: &str) -> Vec<String> {
    let without_args = PAREN_GROUP.replace_all(value, "");
    let mut seen = BTreeSet::new();
    without_args
        .split(|c: char| c == ',' || c.is_whitespace())
        .map(clean_value)
        .filter(|n| !n.is_empty() && !NOT_A_NAME.iter().any(|s| n.eq_ignore_ascii_case(s)))
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

/// Splits the reply at the four labels. The first occurrence of each
/// label wins.
pub fn parse_reasoner_response(text: &str) -> Result<ReasonerOutput, PromptError> {
    let labels: Vec<_> = REASONER_LABEL.captures_iter(text).collect();
    let mut method = None;
    let mut steps = None;
    let mut hypothesis = None;
    let mut missing = None;
    for (i, caps) in labels.iter().enumerate() {
        let whole = caps.get(0).expect("whole match");
        let end = labels
            .get(i + 1)
            .map_or(text.len(), |n| n.get(0).expect("whole match").start());
        let value = unwrap_field(&text[whole.end()..end]);
        let slot = match field_of(&caps[1]) {
            Field::Method => &mut method,
            Field::Steps => &mut steps,
            Field::Hypothesis => &mut hypothesis,
            Field::Missing => &mut missing,
        };
        slot.get_or_insert(value);
    }
    if hypothesis.is_none() && missing.is_none() {
        return Err(PromptError::UnparseableReasoning);
    }
    let missing_methods = missing.as_deref().map(missing_names).unwrap_or_default();
    let hypothesis = hypothesis.unwrap_or_default();
    if hypothesis.is_empty() && missing_methods.is_empty() {
        return Err(PromptError::UnparseableReasoning);
    }
    Ok(ReasonerOutput {
        strategy: method.as_deref().and_then(Strategy::detect),
        steps: steps.unwrap_or_default(),
        hypothesis,
        missing_methods,
    })
}
