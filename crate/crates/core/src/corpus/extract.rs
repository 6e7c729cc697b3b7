//! Lexical-structural extraction of top-level function definitions.
//!
//! This is deliberately not a C parser. The masked source (see
//! [`super::lexer`]) is scanned for `{` at top-level scope; the text since
//! the previous top-level `;`, `{` or `}` is the candidate head, which is
//! accepted as a function head when it ends in `name(params)` optionally
//! followed by C++ qualifiers or a constructor initializer list.
//! `extern "C" { ... }` and `namespace x { ... }` blocks are transparent.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::lexer::{is_ident_byte, is_ident_start, line_of, line_span, line_starts, mask_code};
use super::{SourceFile, SourceTree};

/// A function definition extracted from a source file.
///
/// `body` is the verbatim text of lines `start_line..=end_line`. The exact
/// definition (head through closing brace) is a sub-slice of it, available
/// via [`FunctionDef::definition`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub qualified_name: String,
    pub file_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub body: String,
    head_offset: usize,
    brace_offset: usize,
    def_len: usize,
}

impl FunctionDef {
    /// The definition text from the start of the declaration through the
    /// closing brace.
    pub fn definition(&self) -> &str {
        &self.body[self.head_offset..self.head_offset + self.def_len]
    }

    /// The part of the definition from the opening brace of the body on.
    pub fn block(&self) -> &str {
        &self.body[self.brace_offset..self.head_offset + self.def_len]
    }

    /// The head of the definition (return type, name and parameter list).
    pub fn head(&self) -> &str {
        &self.body[self.head_offset..self.brace_offset]
    }

    /// 1-based line number of the opening brace.
    pub fn brace_line(&self) -> usize {
        self.start_line + self.body[..self.brace_offset].matches('\n').count()
    }

    /// Byte offset of the start of the definition within `body`.
    pub fn head_offset(&self) -> usize {
        self.head_offset
    }

    /// Byte offset of the opening brace within `body`.
    pub fn brace_offset(&self) -> usize {
        self.brace_offset
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub file_path: String,
    pub line: Option<usize>,
    pub message: String,
}

/// Function definitions of a tree, searchable by name and by file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionIndex {
    functions: Vec<FunctionDef>,
    by_name: BTreeMap<String, Vec<usize>>,
    by_file: BTreeMap<String, Vec<usize>>,
    warnings: Vec<ExtractionWarning>,
}

impl FunctionIndex {
    fn from_parts(mut functions: Vec<FunctionDef>, warnings: Vec<ExtractionWarning>) -> Self {
        functions.sort_by(|a, b| {
            (a.file_path.as_str(), a.start_line, &a.qualified_name)
                .cmp(&(b.file_path.as_str(), b.start_line, &b.qualified_name))
        });
        let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_file: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, f) in functions.iter().enumerate() {
            by_name.entry(f.name.clone()).or_default().push(i);
            if f.qualified_name != f.name {
                by_name.entry(f.qualified_name.clone()).or_default().push(i);
            }
            by_file.entry(f.file_path.clone()).or_default().push(i);
        }
        FunctionIndex {
            functions,
            by_name,
            by_file,
            warnings,
        }
    }

    /// All definitions, ordered by file path then start line.
    pub fn functions(&self) -> &[FunctionDef] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn warnings(&self) -> &[ExtractionWarning] {
        &self.warnings
    }

    /// Exact lookup under a simple or qualified name.
    pub fn named(&self, name: &str) -> Vec<&FunctionDef> {
        self.by_name
            .get(name)
            .map(|ids| ids.iter().map(|&i| &self.functions[i]).collect())
            .unwrap_or_default()
    }

    pub fn in_file(&self, path: &str) -> Vec<&FunctionDef> {
        self.by_file
            .get(path)
            .map(|ids| ids.iter().map(|&i| &self.functions[i]).collect())
            .unwrap_or_default()
    }

    /// Every key of the name map (simple and qualified names).
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }
}

/// Indexes every top-level function definition in the tree's code files.
pub fn extract_functions(tree: &SourceTree) -> FunctionIndex {
    let mut functions = Vec::new();
    let mut warnings = Vec::new();
    for file in tree.files().iter().filter(|f| f.is_code()) {
        let (defs, warns) = extract_file(file);
        functions.extend(defs);
        warnings.extend(warns);
    }
    FunctionIndex::from_parts(functions, warnings)
}

/// Looks a function up by name: exact match on simple or qualified name,
/// falling back to a `::`-suffix match on qualified names. Results are
/// ordered by file path and start line.
pub fn lookup_function<'i>(index: &'i FunctionIndex, name: &str) -> Vec<&'i FunctionDef> {
    let wanted = name.trim().trim_end_matches("()").trim();
    if wanted.is_empty() {
        return Vec::new();
    }
    let exact = index.named(wanted);
    if !exact.is_empty() {
        return exact;
    }
    let suffix = format!("::{wanted}");
    index
        .functions()
        .iter()
        .filter(|f| f.qualified_name.ends_with(&suffix))
        .collect()
}

enum Scope {
    Transparent,
    Block,
    Function {
        head_start: usize,
        brace: usize,
        name: String,
        qualified_name: String,
    },
}

enum HeadKind {
    Function {
        start: usize,
        qualified_name: String,
    },
    Transparent,
    Aggregate,
    Initializer,
    Unknown,
}

const NON_FUNCTION_NAMES: &[&str] = &[
    "if",
    "while",
    "for",
    "switch",
    "return",
    "sizeof",
    "do",
    "else",
    "case",
    "defined",
    "alignof",
    "_Alignof",
    "typeof",
    "__typeof__",
    "decltype",
    "static_assert",
    "_Static_assert",
    "__attribute__",
    "__declspec",
];

const TRAILING_QUALIFIERS: &[&str] = &["const", "volatile", "noexcept", "override", "final"];

fn macro_def_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*#[ \t]*define[ \t]+([A-Za-z_]\w*)\(").unwrap())
}

fn extract_file(file: &SourceFile) -> (Vec<FunctionDef>, Vec<ExtractionWarning>) {
    let content = file.content.as_str();
    let masked = mask_code(content);
    let mb = masked.as_bytes();
    let starts = line_starts(content);
    let mut defs = Vec::new();
    let mut warnings = Vec::new();
    let warn = |warnings: &mut Vec<ExtractionWarning>, line: Option<usize>, message: String| {
        warnings.push(ExtractionWarning {
            file_path: file.path.clone(),
            line,
            message,
        })
    };

    for cap in macro_def_regex().captures_iter(content) {
        let m = cap.get(1).unwrap();
        warn(
            &mut warnings,
            Some(line_of(&starts, m.start())),
            format!("function-like macro {} not indexed", m.as_str()),
        );
    }

    let mut scopes: Vec<Scope> = Vec::new();
    let mut stmt_start = 0usize;
    let at_top = |scopes: &Vec<Scope>| scopes.iter().all(|s| matches!(s, Scope::Transparent));

    for (i, &b) in mb.iter().enumerate() {
        match b {
            b'{' => {
                if !at_top(&scopes) {
                    scopes.push(Scope::Block);
                    continue;
                }
                match classify_head(&masked[stmt_start..i]) {
                    HeadKind::Function {
                        start,
                        qualified_name,
                    } => {
                        let name = qualified_name
                            .rsplit("::")
                            .next()
                            .unwrap_or(&qualified_name)
                            .to_string();
                        scopes.push(Scope::Function {
                            head_start: stmt_start + start,
                            brace: i,
                            name,
                            qualified_name,
                        });
                    }
                    HeadKind::Transparent => {
                        scopes.push(Scope::Transparent);
                        stmt_start = i + 1;
                    }
                    HeadKind::Aggregate | HeadKind::Initializer => scopes.push(Scope::Block),
                    HeadKind::Unknown => {
                        warn(
                            &mut warnings,
                            Some(line_of(&starts, i)),
                            "unrecognized top-level block (K&R definition or macro-generated code?)"
                                .to_string(),
                        );
                        scopes.push(Scope::Block);
                    }
                }
            }
            b'}' => match scopes.pop() {
                None => {
                    warn(
                        &mut warnings,
                        Some(line_of(&starts, i)),
                        "unbalanced closing brace".to_string(),
                    );
                    stmt_start = i + 1;
                }
                Some(Scope::Function {
                    head_start,
                    brace,
                    name,
                    qualified_name,
                }) => {
                    if at_top(&scopes) {
                        defs.push(make_def(file, &starts, head_start, brace, i, name, qualified_name));
                        stmt_start = i + 1;
                    }
                }
                Some(_) => {
                    if at_top(&scopes) {
                        stmt_start = i + 1;
                    }
                }
            },
            b';' if at_top(&scopes) => stmt_start = i + 1,
            _ => {}
        }
    }

    let open = scopes
        .iter()
        .filter(|s| !matches!(s, Scope::Transparent))
        .count();
    if open > 0 {
        warn(
            &mut warnings,
            None,
            format!("{open} unclosed brace(s) at end of file; trailing definitions skipped"),
        );
    }
    (defs, warnings)
}

fn make_def(
    file: &SourceFile,
    starts: &[usize],
    head_start: usize,
    brace: usize,
    close: usize,
    name: String,
    qualified_name: String,
) -> FunctionDef {
    let start_line = line_of(starts, head_start);
    let end_line = line_of(starts, close);
    let line_begin = starts[start_line - 1];
    FunctionDef {
        name,
        qualified_name,
        file_path: file.path.clone(),
        start_line,
        end_line,
        body: line_span(&file.content, starts, start_line, end_line).to_string(),
        head_offset: head_start - line_begin,
        brace_offset: brace - line_begin,
        def_len: close + 1 - head_start,
    }
}

fn has_word(text: &str, word: &str) -> bool {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .any(|w| w == word)
}

/// Classifies the masked text preceding a top-level `{`.
fn classify_head(head: &str) -> HeadKind {
    let trimmed = head.trim();
    if trimmed.is_empty() {
        return HeadKind::Unknown;
    }
    if trimmed == "extern" || trimmed.starts_with("namespace") && has_word(trimmed, "namespace") {
        return HeadKind::Transparent;
    }
    if has_top_level_assignment(head) {
        return HeadKind::Initializer;
    }
    if let Some((start, qualified_name)) = function_shape(head) {
        return HeadKind::Function {
            start,
            qualified_name,
        };
    }
    if ["struct", "union", "enum", "class", "typedef"]
        .iter()
        .any(|w| has_word(trimmed, w))
    {
        return HeadKind::Aggregate;
    }
    HeadKind::Unknown
}

fn has_top_level_assignment(head: &str) -> bool {
    let b = head.as_bytes();
    let mut depth = 0i32;
    for (i, &c) in b.iter().enumerate() {
        match c {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b'=' if depth == 0 => {
                let prev = i.checked_sub(1).map(|j| b[j]);
                let next = b.get(i + 1).copied();
                let comparison = matches!(prev, Some(b'=' | b'!' | b'<' | b'>')) || next == Some(b'=');
                let operator_decl = head[..i].trim_end().ends_with("operator");
                if !comparison && !operator_decl {
                    return true;
                }
            }
            _ => {}
        }
    }
    false
}

/// If `head` ends in `qualified::name(params)` (plus optional qualifiers or
/// a constructor initializer list), returns the byte offset where the
/// declaration starts and the qualified name.
fn function_shape(head: &str) -> Option<(usize, String)> {
    let b = head.as_bytes();

    // Cut a constructor initializer list: a lone ':' after a ')' at depth 0.
    let mut end = b.len();
    let mut depth = 0i32;
    let mut seen_close = false;
    for (i, &c) in b.iter().enumerate() {
        match c {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    seen_close = true;
                }
            }
            b':' if depth == 0 && seen_close => {
                let lone = b.get(i + 1) != Some(&b':') && (i == 0 || b[i - 1] != b':');
                if lone {
                    end = i;
                    break;
                }
            }
            _ => {}
        }
    }

    let mut h = head[..end].trim_end();
    loop {
        let before = h;
        for q in TRAILING_QUALIFIERS {
            if let Some(rest) = h.strip_suffix(q) {
                if rest.ends_with(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
                    h = rest.trim_end();
                }
            }
        }
        h = h.trim_end_matches('&').trim_end();
        if h == before {
            break;
        }
    }
    if !h.ends_with(')') {
        return None;
    }

    let hb = h.as_bytes();
    let mut depth = 0i32;
    let mut open = None;
    for i in (0..hb.len()).rev() {
        match hb[i] {
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
    let open = open?;
    let before = h[..open].trim_end();
    let bb = before.as_bytes();
    let mut k = bb.len();
    while k > 0 {
        let c = bb[k - 1];
        if is_ident_byte(c) || c == b'~' {
            k -= 1;
        } else if c == b':' && k >= 2 && bb[k - 2] == b':' {
            k -= 2;
        } else {
            break;
        }
    }
    let qualified = &before[k..];
    let last = qualified.rsplit("::").next().unwrap_or(qualified);
    let last_ok = last
        .trim_start_matches('~')
        .bytes()
        .next()
        .is_some_and(is_ident_start);
    if !last_ok || qualified.starts_with("::") && qualified.len() == 2 {
        return None;
    }
    if NON_FUNCTION_NAMES.contains(&last) {
        return None;
    }
    let qualified = qualified.trim_start_matches("::");

    // Walk back over the return type and specifiers.
    let mut s = k;
    while s > 0 {
        let c = bb[s - 1];
        if is_ident_byte(c) || c.is_ascii_whitespace() || matches!(c, b'*' | b'&' | b':' | b'<' | b'>' | b',' | b'~') {
            s -= 1;
        } else {
            break;
        }
    }
    while s < bb.len() && bb[s].is_ascii_whitespace() {
        s += 1;
    }
    Some((s, qualified.to_string()))
}
