//! Intraprocedural def-use tracing from a source function to calls of a
//! sink function.
//!
//! Seeds are the parameters of the source function and every local
//! definition, whether from a call or a plain value. Taint propagates through assignments whose
//! right-hand side mentions a tainted variable. A path is reported when a
//! tainted variable appears in the argument list of a call to the sink, or,
//! when source and sink are the same function, when a tainted variable is
//! dereferenced or indexed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::callgraph::{call_sites, NON_CALL_KEYWORDS};
use super::{AnalysisError, CallGraph};
use crate::corpus::lexer::{is_ident_byte, is_ident_start, line_of, line_starts, mask_code};
use crate::corpus::{lookup_function, FunctionDef, FunctionIndex};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataflowStep {
    pub file_path: String,
    pub line: usize,
    /// The verbatim source line, trimmed.
    pub code: String,
    pub note: String,
}

impl fmt::Display for DataflowStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file_path, self.line, self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowPath {
    pub source_fn: String,
    pub sink_fn: String,
    pub steps: Vec<DataflowStep>,
}

impl DataflowPath {
    /// One `file:line: code` line per hop, each followed by its note.
    pub fn render(&self) -> String {
        let mut out = format!("source: {} sink: {}\n", self.source_fn, self.sink_fn);
        for s in &self.steps {
            out.push_str(&format!("{s}    // {}\n", s.note));
        }
        out
    }
}

fn last_segment(name: &str) -> &str {
    name.rsplit("::").next().unwrap_or(name)
}

fn names_match(callee: &str, wanted: &str) -> bool {
    callee == wanted || last_segment(callee) == last_segment(wanted)
}

/// Runs the def-use trace for every definition matching `source_fn`.
pub fn dataflow_paths(
    index: &FunctionIndex,
    graph: &CallGraph,
    source_fn: &str,
    sink_fn: &str,
    max_paths: usize,
) -> Result<Vec<DataflowPath>, AnalysisError> {
    let sources = lookup_function(index, source_fn);
    if sources.is_empty() {
        return Err(AnalysisError::SourceNotFound(source_fn.to_string()));
    }
    let sink = sink_fn.trim().trim_end_matches("()");
    let mut paths: Vec<DataflowPath> = Vec::new();
    let mut seen = BTreeSet::new();
    for def in sources {
        let self_sink = names_match(&def.qualified_name, sink);
        if !self_sink && !calls_sink(graph, &def.qualified_name, sink) {
            continue;
        }
        for steps in trace_function(def, sink, self_sink) {
            if paths.len() == max_paths {
                return Ok(paths);
            }
            if seen.insert(steps.clone()) {
                paths.push(DataflowPath {
                    source_fn: def.qualified_name.clone(),
                    sink_fn: sink.to_string(),
                    steps,
                });
            }
        }
    }
    Ok(paths)
}

fn calls_sink(graph: &CallGraph, caller: &str, sink: &str) -> bool {
    graph
        .edges
        .iter()
        .chain(graph.unresolved_calls.iter())
        .any(|(a, b)| a == caller && names_match(b, sink))
}

struct Statement<'a> {
    text: &'a str,
    offset: usize,
}

fn trace_function(def: &FunctionDef, sink: &str, self_sink: bool) -> Vec<Vec<DataflowStep>> {
    let masked_def = mask_code(def.definition());
    let body_starts = line_starts(&def.body);
    let head_offset = def.head_offset();
    let brace_rel = def.brace_offset() - head_offset;
    let line_at = |rel: usize| def.start_line - 1 + line_of(&body_starts, head_offset + rel);
    let step = |rel: usize, note: String| {
        let line = line_at(rel);
        let code = def
            .body
            .lines()
            .nth(line - def.start_line)
            .unwrap_or_default()
            .trim()
            .to_string();
        DataflowStep {
            file_path: def.file_path.clone(),
            line,
            code,
            note,
        }
    };

    let mut tainted: BTreeMap<String, Vec<DataflowStep>> = BTreeMap::new();
    for (name, rel) in parameters(&masked_def[..brace_rel]) {
        tainted
            .entry(name.clone())
            .or_insert_with(|| vec![step(rel, format!("parameter `{name}`"))]);
    }

    let mut found = Vec::new();
    for stmt in statements(&masked_def[brace_rel..], brace_rel) {
        // Sink uses are checked against the state before this statement's
        // own assignment takes effect.
        if self_sink {
            for var in dereferenced(stmt.text, &tainted) {
                let mut chain = tainted[&var].clone();
                chain.push(step(stmt.offset, format!("`{var}` dereferenced")));
                found.push(chain);
            }
        } else {
            for site in call_sites(stmt.text) {
                if !names_match(&site.callee, sink) {
                    continue;
                }
                let args = argument_text(stmt.text, site.paren);
                for var in identifiers(args) {
                    if let Some(chain) = tainted.get(&var) {
                        let mut chain = chain.clone();
                        chain.push(step(
                            stmt.offset + site.offset,
                            format!("`{var}` passed to {}", site.callee),
                        ));
                        found.push(chain);
                    }
                }
            }
        }

        if let Some((lhs, rhs)) = split_assignment(stmt.text) {
            let Some(target) = assigned_variable(lhs) else {
                continue;
            };
            let rhs_vars: Vec<String> = identifiers(rhs).filter(|v| tainted.contains_key(v)).collect();
            let rhs_calls = call_sites(rhs);
            if let Some(src) = rhs_vars.iter().find(|v| **v != target) {
                let mut chain = tainted[src].clone();
                chain.push(step(stmt.offset, format!("`{target}` derived from `{src}`")));
                tainted.insert(target, chain);
            } else if rhs_vars.contains(&target) {
                // Self-update such as `x = x + 1` keeps its chain.
            } else if let Some(call) = rhs_calls.first() {
                let chain = vec![step(
                    stmt.offset,
                    format!("`{target}` assigned from call to {}", call.callee),
                )];
                tainted.insert(target, chain);
            } else {
                tainted.insert(target.clone(), vec![step(stmt.offset, format!("`{target}` defined"))]);
            }
        }
    }
    found
}

/// Splits a masked function block into statements at `;`, `{` and `}`.
/// Offsets are relative to the start of the definition.
fn statements(block: &str, base: usize) -> Vec<Statement<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut depth = 0i32;
    for (i, c) in block.bytes().enumerate() {
        match c {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b';' if depth > 0 => {}
            b';' | b'{' | b'}' => {
                push_statement(&mut out, block, start, i, base);
                start = i + 1;
            }
            _ => {}
        }
    }
    push_statement(&mut out, block, start, block.len(), base);
    out
}

fn push_statement<'a>(out: &mut Vec<Statement<'a>>, block: &'a str, start: usize, end: usize, base: usize) {
    let raw = &block[start..end];
    let lead = raw.len() - raw.trim_start().len();
    let text = raw.trim();
    if !text.is_empty() {
        out.push(Statement {
            text,
            offset: base + start + lead,
        });
    }
}

/// Parameter names with their offsets in the masked head.
fn parameters(head: &str) -> Vec<(String, usize)> {
    let b = head.as_bytes();
    let Some(close) = head.rfind(')') else {
        return Vec::new();
    };
    let mut depth = 0i32;
    let mut open = None;
    for i in (0..=close).rev() {
        match b[i] {
            b')' => depth += 1,
            b'(' => {
                depth -= 1;
                if depth == 0 {
                    open = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let Some(open) = open else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut seg_start = open + 1;
    let mut depth = 0i32;
    for i in open + 1..=close {
        let c = b[i];
        match c {
            b'(' | b'[' => depth += 1,
            b')' | b']' if depth > 0 => depth -= 1,
            b',' | b')' if depth == 0 => {
                let seg = &head[seg_start..i];
                if let Some((name, at)) = identifier_positions(seg)
                    .into_iter()
                    .filter(|(n, _)| !NON_CALL_KEYWORDS.contains(&n.as_str()))
                    .next_back()
                {
                    let is_type_only = identifier_positions(seg).len() == 1 && seg.contains('*');
                    if !is_type_only {
                        out.push((name, seg_start + at));
                    }
                }
                seg_start = i + 1;
            }
            _ => {}
        }
    }
    out
}

fn identifier_positions(text: &str) -> Vec<(String, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if is_ident_start(b[i]) && (i == 0 || !is_ident_byte(b[i - 1])) {
            let s = i;
            while i < b.len() && is_ident_byte(b[i]) {
                i += 1;
            }
            out.push((text[s..i].to_string(), s));
        } else {
            i += 1;
        }
    }
    out
}

/// Identifier tokens that are not member names (`x.y`, `x->y`).
fn identifiers(text: &str) -> impl Iterator<Item = String> + '_ {
    identifier_positions(text).into_iter().filter_map(move |(name, at)| {
        let before = text[..at].trim_end();
        if before.ends_with('.') || before.ends_with("->") {
            None
        } else {
            Some(name)
        }
    })
}

fn argument_text(stmt: &str, paren: usize) -> &str {
    let b = stmt.as_bytes();
    let mut depth = 0i32;
    for i in paren..b.len() {
        match b[i] {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return &stmt[paren + 1..i];
                }
            }
            _ => {}
        }
    }
    &stmt[paren + 1..]
}

/// Splits at the first top-level assignment operator (plain or compound).
fn split_assignment(stmt: &str) -> Option<(&str, &str)> {
    let b = stmt.as_bytes();
    let mut depth = 0i32;
    for i in 0..b.len() {
        match b[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b'=' if depth == 0 => {
                let next = b.get(i + 1).copied();
                let prev = if i > 0 { Some(b[i - 1]) } else { None };
                if next == Some(b'=') || matches!(prev, Some(b'=' | b'!')) {
                    return None;
                }
                if matches!(prev, Some(b'<' | b'>')) {
                    // `<=`/`>=` compare, `<<=`/`>>=` assign.
                    let shift = i >= 2 && b[i - 2] == prev.unwrap();
                    if !shift {
                        return None;
                    }
                }
                let lhs_end = if matches!(prev, Some(b'+' | b'-' | b'*' | b'/' | b'%' | b'&' | b'|' | b'^')) {
                    i - 1
                } else if matches!(prev, Some(b'<' | b'>')) {
                    i - 2
                } else {
                    i
                };
                return Some((&stmt[..lhs_end], &stmt[i + 1..]));
            }
            _ => {}
        }
    }
    None
}

/// The variable written by an assignment's left-hand side: `int x`, `*p`,
/// `buf[i]` and `s->f` yield `x`, `p`, `buf` and `s`.
fn assigned_variable(lhs: &str) -> Option<String> {
    let mut flat = String::with_capacity(lhs.len());
    let mut depth = 0;
    for c in lhs.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ if depth == 0 => flat.push(c),
            _ => {}
        }
    }
    let last = flat.split_whitespace().last()?;
    let last = last.trim_start_matches(['*', '&', '(']).trim_end_matches(')');
    let base = last.split("->").next()?.split('.').next()?;
    let ok = base.bytes().next().is_some_and(is_ident_start) && base.bytes().all(is_ident_byte);
    (ok && !NON_CALL_KEYWORDS.contains(&base)).then(|| base.to_string())
}

fn dereferenced(stmt: &str, tainted: &BTreeMap<String, Vec<DataflowStep>>) -> Vec<String> {
    let mut out = Vec::new();
    for (name, at) in identifier_positions(stmt) {
        if !tainted.contains_key(&name) || out.contains(&name) {
            continue;
        }
        let after = stmt[at + name.len()..].trim_start();
        let before = stmt[..at].trim_end();
        let unary_star = before.ends_with('*')
            && !before[..before.len() - 1]
                .trim_end()
                .ends_with(|c: char| c.is_ascii_alphanumeric() || c == '_' || c == ')');
        if after.starts_with("->") || after.starts_with('[') || unary_star {
            out.push(name);
        }
    }
    out
}
