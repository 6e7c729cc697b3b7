use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::lexer::{is_ident_byte, is_ident_start, mask_code};
use crate::corpus::FunctionIndex;

/// Identifiers that may precede `(` without being a call.
pub const NON_CALL_KEYWORDS: &[&str] = &[
    "if", "while", "for", "switch", "sizeof", "return", "do", "else", "case", "defined", "alignof",
    "_Alignof", "typeof", "__typeof__", "decltype", "static_assert", "_Static_assert",
    "__attribute__", "__declspec", "__asm__", "asm", "void", "char", "short", "int", "long",
    "float", "double", "signed", "unsigned", "const", "volatile", "static", "extern", "struct",
    "union", "enum",
];

/// Name-based call graph over the functions of an index. Nodes are
/// qualified names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    /// `(caller, callee identifier)` for calls to functions outside the index.
    pub unresolved_calls: BTreeSet<(String, String)>,
}

impl CallGraph {
    pub fn callees(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            adj.entry(a.as_str()).or_default().push(b.as_str());
        }
        adj
    }

    pub fn callers(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            adj.entry(b.as_str()).or_default().push(a.as_str());
        }
        for v in adj.values_mut() {
            v.sort_unstable();
        }
        adj
    }

    pub fn has_edge(&self, caller: &str, callee: &str) -> bool {
        self.edges.contains(&(caller.to_string(), callee.to_string()))
    }

    /// `caller -> callee` per line, sorted.
    pub fn render_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.edges {
            out.push_str(a);
            out.push_str(" -> ");
            out.push_str(b);
            out.push('\n');
        }
        out
    }
}

/// A call-shaped occurrence `name(` in masked code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CallSite {
    /// Byte offset of the callee identifier.
    pub offset: usize,
    /// Byte offset of the opening parenthesis.
    pub paren: usize,
    pub callee: String,
}

/// Finds call-shaped occurrences in already-masked text. Qualified callees
/// (`a::b(`) are reported whole; member calls report the member name.
pub(crate) fn call_sites(masked: &str) -> Vec<CallSite> {
    let b = masked.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !is_ident_start(b[i]) || (i > 0 && (is_ident_byte(b[i - 1]) || b[i - 1] == b'~')) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        loop {
            while end < b.len() && is_ident_byte(b[end]) {
                end += 1;
            }
            if end + 2 < b.len() && &b[end..end + 2] == b"::" && is_ident_start(b[end + 2]) {
                end += 2;
                continue;
            }
            break;
        }
        let mut j = end;
        while j < b.len() && b[j].is_ascii_whitespace() {
            j += 1;
        }
        if j < b.len() && b[j] == b'(' {
            let callee = &masked[start..end];
            let last = callee.rsplit("::").next().unwrap_or(callee);
            if !NON_CALL_KEYWORDS.contains(&last) {
                out.push(CallSite {
                    offset: start,
                    paren: j,
                    callee: callee.to_string(),
                });
            }
        }
        i = end;
    }
    out
}

/// Builds the call graph: an edge `(a, b)` exists when `a`'s body contains
/// a call-shaped `b(` outside comments and literals and `b` is indexed.
pub fn build_callgraph(index: &FunctionIndex) -> CallGraph {
    let mut graph = CallGraph::default();
    for f in index.functions() {
        graph.nodes.insert(f.qualified_name.clone());
    }
    for f in index.functions() {
        let masked = mask_code(f.block());
        for site in call_sites(&masked) {
            let targets = index.named(&site.callee);
            if targets.is_empty() {
                graph
                    .unresolved_calls
                    .insert((f.qualified_name.clone(), site.callee));
            } else {
                for t in targets {
                    graph
                        .edges
                        .insert((f.qualified_name.clone(), t.qualified_name.clone()));
                }
            }
        }
    }
    graph
}
