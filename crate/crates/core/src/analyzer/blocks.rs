use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{lookup_file, lookup_function, FunctionIndex, SourceTree};

/// Default character budget for code placed in one prompt.
pub const DEFAULT_CODE_BUDGET: usize = 24_000;

pub const TRUNCATION_MARKER: &str = "[truncated]";

/// A verbatim span of a source file placed into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    /// Function qualified name or file path.
    pub label: String,
    pub file_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
    pub truncated: bool,
}

impl CodeBlock {
    fn key(&self) -> (String, String, usize, usize) {
        (
            self.label.clone(),
            self.file_path.clone(),
            self.start_line,
            self.end_line,
        )
    }

    /// Whether the text occurs verbatim in the file it claims to come from.
    pub fn is_verbatim_in(&self, tree: &SourceTree) -> bool {
        tree.get(&self.file_path)
            .is_some_and(|f| f.content.contains(&self.text))
    }

    fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockRequest {
    Function(String),
    File(String),
}

impl BlockRequest {
    pub fn label(&self) -> &str {
        match self {
            BlockRequest::Function(n) | BlockRequest::File(n) => n,
        }
    }
}

/// Code blocks fitted into a character budget.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlockSet {
    pub blocks: Vec<CodeBlock>,
    /// Set when any block was cut or dropped to respect the budget.
    pub truncated: bool,
    /// Labels of blocks left out entirely because the budget ran out.
    pub dropped: Vec<String>,
}

impl CodeBlockSet {
    /// Keeps blocks in order while they fit. The first block that does not
    /// fit is cut at a line boundary; everything after it is dropped.
    pub fn fit(blocks: &[CodeBlock], budget: usize) -> Self {
        let mut set = CodeBlockSet::default();
        let mut used = 0usize;
        for (i, block) in blocks.iter().enumerate() {
            let len = block.char_len();
            if used + len <= budget {
                used += len;
                set.blocks.push(block.clone());
                continue;
            }
            set.truncated = true;
            if let Some(prefix) = line_prefix(block, budget - used) {
                set.blocks.push(prefix);
            } else {
                set.dropped.push(block.label.clone());
            }
            set.dropped
                .extend(blocks[i + 1..].iter().map(|b| b.label.clone()));
            break;
        }
        set
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_chars(&self) -> usize {
        self.blocks.iter().map(CodeBlock::char_len).sum()
    }

    /// Labeled fenced sections, one per block.
    pub fn render(&self) -> String {
        if self.blocks.is_empty() {
            return "(none)".to_string();
        }
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&format!(
                "\n{} ({}:{}-{}):\n```c\n{}\n```\n",
                b.label, b.file_path, b.start_line, b.end_line, b.text
            ));
            if b.truncated {
                out.push_str(TRUNCATION_MARKER);
                out.push('\n');
            }
        }
        if !self.dropped.is_empty() {
            out.push_str(&format!("{TRUNCATION_MARKER} omitted: {}\n", self.dropped.join(", ")));
        }
        out
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.label.as_str())
    }
}

fn line_prefix(block: &CodeBlock, room: usize) -> Option<CodeBlock> {
    let mut kept = 0usize;
    let mut lines = 0usize;
    let mut end = 0usize;
    for (i, line) in block.text.split('\n').enumerate() {
        let cost = line.chars().count() + usize::from(i > 0);
        if kept + cost > room {
            break;
        }
        kept += cost;
        lines += 1;
        end = if i == 0 { line.len() } else { end + 1 + line.len() };
    }
    (lines > 0 && end > 0).then(|| CodeBlock {
        label: block.label.clone(),
        file_path: block.file_path.clone(),
        start_line: block.start_line,
        end_line: block.start_line + lines - 1,
        text: block.text[..end].to_string(),
        truncated: true,
    })
}

/// Blocks for every request, deduplicated, plus the labels that resolved
/// to nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolvedBlocks {
    pub blocks: Vec<CodeBlock>,
    pub absent: Vec<String>,
}

/// Resolves requests to verbatim code without applying a budget. Function
/// names yield every matching definition; paths yield the whole file.
pub fn resolve_blocks(tree: &SourceTree, index: &FunctionIndex, requests: &[BlockRequest]) -> ResolvedBlocks {
    let mut out = ResolvedBlocks::default();
    let mut seen = BTreeSet::new();
    for req in requests {
        let found: Vec<CodeBlock> = match req {
            BlockRequest::Function(name) => lookup_function(index, name)
                .into_iter()
                .map(|f| CodeBlock {
                    label: f.qualified_name.clone(),
                    file_path: f.file_path.clone(),
                    start_line: f.start_line,
                    end_line: f.end_line,
                    text: f.body.clone(),
                    truncated: false,
                })
                .collect(),
            BlockRequest::File(path) => match lookup_file(tree, path) {
                Ok(Some(f)) => vec![CodeBlock {
                    label: f.path.clone(),
                    file_path: f.path.clone(),
                    start_line: 1,
                    end_line: f.content.lines().count().max(1),
                    text: f.content.clone(),
                    truncated: false,
                }],
                _ => Vec::new(),
            },
        };
        if found.is_empty() {
            out.absent.push(req.label().to_string());
        }
        for b in found {
            if seen.insert(b.key()) {
                out.blocks.push(b);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeBlockCollection {
    pub set: CodeBlockSet,
    pub absent: Vec<String>,
}

/// Resolves requests and fits the result into `budget` characters.
pub fn collect_code_blocks(
    tree: &SourceTree,
    index: &FunctionIndex,
    requests: &[BlockRequest],
    budget: usize,
) -> CodeBlockCollection {
    let resolved = resolve_blocks(tree, index, requests);
    CodeBlockCollection {
        set: CodeBlockSet::fit(&resolved.blocks, budget),
        absent: resolved.absent,
    }
}
