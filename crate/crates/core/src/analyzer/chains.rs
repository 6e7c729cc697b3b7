use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, CallGraph};

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_MAX_CHAINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Caller to callee, rendered with `->`.
    Forward,
    /// Callee to caller, rendered with `<-`.
    Backward,
}

impl Direction {
    fn arrow(self) -> &'static str {
        match self {
            Direction::Forward => " -> ",
            Direction::Backward => " <- ",
        }
    }
}

/// A simple path through the call graph.
///
/// Single-node chains carry no direction and are always stored as
/// `Forward`, so that rendering and parsing round-trip.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallChain {
    functions: Vec<String>,
    direction: Direction,
}

impl CallChain {
    /// # Panics
    /// If `functions` is empty.
    pub fn new(functions: Vec<String>, direction: Direction) -> Self {
        assert!(!functions.is_empty(), "a call chain has at least one function");
        let direction = if functions.len() == 1 {
            Direction::Forward
        } else {
            direction
        };
        CallChain {
            functions,
            direction,
        }
    }

    pub fn functions(&self) -> &[String] {
        &self.functions
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Caller-to-callee edges traversed by this chain.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.functions
            .windows(2)
            .map(|w| match self.direction {
                Direction::Forward => (w[0].as_str(), w[1].as_str()),
                Direction::Backward => (w[1].as_str(), w[0].as_str()),
            })
            .collect()
    }

    /// The same path written in the opposite notation.
    pub fn flipped(&self) -> CallChain {
        let mut functions = self.functions.clone();
        functions.reverse();
        let direction = match self.direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        CallChain::new(functions, direction)
    }

    /// Whether `other` is a contiguous run of this chain in the same
    /// direction.
    pub fn contains_contiguous(&self, other: &CallChain) -> bool {
        if other.len() > self.len() {
            return false;
        }
        if other.len() > 1 && other.direction != self.direction {
            return false;
        }
        self.functions
            .windows(other.len())
            .any(|w| w == other.functions.as_slice())
    }
}

impl fmt::Display for CallChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.functions.join(self.direction.arrow()))
    }
}

pub fn render_call_chain(chain: &CallChain) -> String {
    chain.to_string()
}

/// Parses `a -> b -> c` or `c <- b <- a`. Spaces around arrows are
/// optional and a trailing `()` on a name is dropped.
pub fn parse_call_chain(text: &str) -> Result<CallChain, AnalysisError> {
    let malformed = |why: &str| AnalysisError::MalformedChain(format!("{why}: {text:?}"));
    let t = text.trim();
    let has_fwd = t.contains("->");
    let has_bwd = t.contains("<-");
    let direction = match (has_fwd, has_bwd) {
        (true, true) => return Err(malformed("mixed arrows")),
        (_, true) => Direction::Backward,
        _ => Direction::Forward,
    };
    let sep = if direction == Direction::Backward { "<-" } else { "->" };
    let mut functions = Vec::new();
    for seg in t.split(sep) {
        let mut name = seg.trim();
        while let Some(stripped) = name.strip_suffix("()") {
            name = stripped.trim_end();
        }
        if name.is_empty() {
            return Err(malformed("empty segment"));
        }
        let valid = name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b':' | b'~'));
        if !valid {
            return Err(malformed("segment is not a function name"));
        }
        functions.push(name.to_string());
    }
    Ok(CallChain::new(functions, direction))
}

/// Enumerates every simple path of at most `max_depth` functions starting
/// at each root. Output is in lexicographic order over name sequences and
/// is capped at `max_chains`, with `truncated` set when the cap was hit.
pub fn enumerate_call_chains(
    graph: &CallGraph,
    roots: &[String],
    direction: Direction,
    max_depth: usize,
    max_chains: usize,
) -> Result<ChainEnumeration, AnalysisError> {
    if max_depth == 0 {
        return Err(AnalysisError::InvalidDepth);
    }
    let callers: BTreeSet<&str> = graph.unresolved_calls.iter().map(|(c, _)| c.as_str()).collect();
    let roots: BTreeSet<&str> = roots.iter().map(String::as_str).collect();
    for r in &roots {
        if !graph.nodes.contains(*r) && !callers.contains(r) {
            return Err(AnalysisError::UnknownRoot(r.to_string()));
        }
    }
    let adj = match direction {
        Direction::Forward => graph.callees(),
        Direction::Backward => graph.callers(),
    };

    let mut walk = Walk {
        adj: &adj,
        max_depth,
        max_chains,
        direction,
        out: Vec::new(),
        truncated: false,
    };
    for root in roots {
        let mut path = vec![root];
        if !walk.visit(&mut path) {
            break;
        }
    }
    Ok(ChainEnumeration {
        chains: walk.out,
        truncated: walk.truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEnumeration {
    pub chains: Vec<CallChain>,
    pub truncated: bool,
}

struct Walk<'g> {
    adj: &'g BTreeMap<&'g str, Vec<&'g str>>,
    max_depth: usize,
    max_chains: usize,
    direction: Direction,
    out: Vec<CallChain>,
    truncated: bool,
}

impl<'g> Walk<'g> {
    /// Pre-order DFS with sorted neighbours, which emits chains in
    /// lexicographic order. Returns false once the cap is reached.
    fn visit(&mut self, path: &mut Vec<&'g str>) -> bool {
        if self.out.len() == self.max_chains {
            self.truncated = true;
            return false;
        }
        self.out.push(CallChain::new(
            path.iter().map(|s| s.to_string()).collect(),
            self.direction,
        ));
        if path.len() == self.max_depth {
            return true;
        }
        let last = *path.last().expect("path is never empty");
        let next: &[&str] = self.adj.get(last).map(Vec::as_slice).unwrap_or(&[]);
        for &n in next {
            if path.contains(&n) {
                continue;
            }
            path.push(n);
            let keep_going = self.visit(path);
            path.pop();
            if !keep_going {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(names: &[&str], d: Direction) -> CallChain {
        CallChain::new(names.iter().map(|s| s.to_string()).collect(), d)
    }

    fn graph(edges: &[(&str, &str)]) -> CallGraph {
        let mut g = CallGraph::default();
        for (a, b) in edges {
            g.nodes.insert(a.to_string());
            g.nodes.insert(b.to_string());
            g.edges.insert((a.to_string(), b.to_string()));
        }
        g
    }

    #[test]
    fn render_forms() {
        assert_eq!(render_call_chain(&chain(&["a", "b", "c"], Direction::Forward)), "a -> b -> c");
        assert_eq!(render_call_chain(&chain(&["d", "c", "a"], Direction::Backward)), "d <- c <- a");
        assert_eq!(render_call_chain(&chain(&["main"], Direction::Backward)), "main");
    }

    #[test]
    fn parse_forms() {
        assert_eq!(parse_call_chain("a->b -> c").unwrap(), chain(&["a", "b", "c"], Direction::Forward));
        let back = parse_call_chain("b() <- a").unwrap();
        assert_eq!(back, chain(&["b", "a"], Direction::Backward));
        assert_eq!(render_call_chain(&back), "b <- a");
        assert_eq!(parse_call_chain("X::Init -> f").unwrap().functions()[0], "X::Init");
        assert!(matches!(parse_call_chain("a -> b <- c"), Err(AnalysisError::MalformedChain(_))));
        assert!(matches!(parse_call_chain("a -> -> c"), Err(AnalysisError::MalformedChain(_))));
        assert!(matches!(parse_call_chain(""), Err(AnalysisError::MalformedChain(_))));
        assert!(matches!(parse_call_chain("a b -> c"), Err(AnalysisError::MalformedChain(_))));
    }

    #[test]
    fn single_node_without_edges() {
        let mut g = CallGraph::default();
        g.nodes.insert("a".into());
        let e = enumerate_call_chains(&g, &["a".into()], Direction::Forward, 3, 100).unwrap();
        assert_eq!(e.chains, vec![chain(&["a"], Direction::Forward)]);
        assert!(!e.truncated);
    }

    #[test]
    fn linear_chain() {
        let g = graph(&[("a", "b"), ("b", "c")]);
        let e = enumerate_call_chains(&g, &["a".into()], Direction::Forward, 3, 100).unwrap();
        let rendered: Vec<String> = e.chains.iter().map(render_call_chain).collect();
        assert_eq!(rendered, vec!["a", "a -> b", "a -> b -> c"]);
    }

    #[test]
    fn backward_walks_callers() {
        let g = graph(&[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        let e = enumerate_call_chains(&g, &["d".into()], Direction::Backward, 3, 100).unwrap();
        let rendered: Vec<String> = e.chains.iter().map(render_call_chain).collect();
        assert_eq!(rendered, vec!["d", "d <- b", "d <- b <- a", "d <- c", "d <- c <- a"]);
    }

    #[test]
    fn cycles_are_not_repeated() {
        let g = graph(&[("a", "b"), ("b", "a"), ("a", "a")]);
        let e = enumerate_call_chains(&g, &["a".into()], Direction::Forward, 8, 100).unwrap();
        assert_eq!(e.chains.len(), 2);
    }

    #[test]
    fn cap_sets_truncated() {
        let g = graph(&[("a", "b"), ("a", "c"), ("a", "d")]);
        let e = enumerate_call_chains(&g, &["a".into()], Direction::Forward, 2, 2).unwrap();
        assert_eq!(e.chains.len(), 2);
        assert!(e.truncated);
        let e = enumerate_call_chains(&g, &["a".into()], Direction::Forward, 2, 4).unwrap();
        assert_eq!(e.chains.len(), 4);
        assert!(!e.truncated);
    }

    #[test]
    fn errors() {
        let g = graph(&[("a", "b")]);
        assert!(matches!(
            enumerate_call_chains(&g, &["zz".into()], Direction::Forward, 3, 10),
            Err(AnalysisError::UnknownRoot(_))
        ));
        assert!(matches!(
            enumerate_call_chains(&g, &["a".into()], Direction::Forward, 0, 10),
            Err(AnalysisError::InvalidDepth)
        ));
    }

    #[test]
    fn contiguity_and_flip() {
        let c = chain(&["a", "b", "c"], Direction::Forward);
        assert!(c.contains_contiguous(&chain(&["b", "c"], Direction::Forward)));
        assert!(!c.contains_contiguous(&chain(&["a", "c"], Direction::Forward)));
        assert!(!c.contains_contiguous(&chain(&["b", "c"], Direction::Backward)));
        assert_eq!(c.flipped(), chain(&["c", "b", "a"], Direction::Backward));
        let mut fwd = c.edges();
        let flipped = c.flipped();
        let mut back = flipped.edges();
        fwd.sort();
        back.sort();
        assert_eq!(fwd, back);
    }
}
