use std::collections::BTreeSet;

use cmind_core::analyzer::{
    collect_code_blocks, enumerate_call_chains, parse_call_chain, render_call_chain, BlockRequest, CallChain,
    CallGraph, Direction,
};
use cmind_core::corpus::{extract_functions, lookup_function, SourceFile, SourceTree};
use cmind_core::eval::{judge, CaseOutcome, EvalReport};
use cmind_core::llm::fingerprint;
use cmind_core::pipeline::{LocalizationResult, RunStatus};
use cmind_core::prompts::{
    parse_analysis_choice, parse_chain_selection, parse_entry_response, parse_reasoner_response, MAX_ENTRY_ITEMS,
};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// Generated C files

#[derive(Debug, Clone)]
enum Piece {
    Function { name: String, stmts: Vec<Stmt> },
    Prototype(String),
    Struct(String),
    Initializer(String),
    Macro(String),
    Comment(String),
}

#[derive(Debug, Clone)]
enum Stmt {
    Call(String),
    Nested(Vec<Stmt>),
    BraceString,
    BraceComment,
    BraceChar,
}

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,10}".prop_filter("keyword", |s| {
        !matches!(s.as_str(), "if" | "for" | "do" | "int" | "while" | "return" | "sizeof" | "switch" | "case" | "else" | "char" | "void" | "struct" | "enum" | "union" | "static" | "const")
    })
}

fn stmt() -> impl Strategy<Value = Stmt> {
    let leaf = prop_oneof![
        name().prop_map(Stmt::Call),
        Just(Stmt::BraceString),
        Just(Stmt::BraceComment),
        Just(Stmt::BraceChar),
    ];
    leaf.prop_recursive(3, 12, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(Stmt::Nested))
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        4 => (name(), prop::collection::vec(stmt(), 0..5)).prop_map(|(name, stmts)| Piece::Function { name, stmts }),
        1 => name().prop_map(Piece::Prototype),
        1 => name().prop_map(Piece::Struct),
        1 => name().prop_map(Piece::Initializer),
        1 => name().prop_map(Piece::Macro),
        1 => name().prop_map(Piece::Comment),
    ]
}

fn render_stmt(s: &Stmt, indent: usize, out: &mut String) {
    let pad = "\t".repeat(indent);
    match s {
        Stmt::Call(n) => out.push_str(&format!("{pad}{n}(1);\n")),
        Stmt::BraceString => out.push_str(&format!("{pad}puts(\"}} {{ }}\");\n")),
        Stmt::BraceComment => out.push_str(&format!("{pad}/* }} */ // {{\n")),
        Stmt::BraceChar => out.push_str(&format!("{pad}c = '}}';\n")),
        Stmt::Nested(inner) => {
            out.push_str(&format!("{pad}if (c) {{\n"));
            for i in inner {
                render_stmt(i, indent + 1, out);
            }
            out.push_str(&format!("{pad}}}\n"));
        }
    }
}

/// Renders the file and returns the names of the definitions in it.
fn render(pieces: &[Piece]) -> (String, Vec<String>) {
    let mut out = String::new();
    let mut defs = Vec::new();
    for p in pieces {
        match p {
            Piece::Function { name, stmts } => {
                out.push_str(&format!("static int {name}(int c)\n{{\n"));
                for s in stmts {
                    render_stmt(s, 1, &mut out);
                }
                out.push_str("\treturn c;\n}\n");
                defs.push(name.clone());
            }
            Piece::Prototype(n) => out.push_str(&format!("int {n}(int c);\n")),
            Piece::Struct(n) => out.push_str(&format!("struct {n} {{\n\tint a;\n}};\n")),
            Piece::Initializer(n) => out.push_str(&format!("static int {n}[] = {{ 1, 2 }};\n")),
            Piece::Macro(n) => out.push_str(&format!("#define {n}(x) {{ (x); }}\n")),
            Piece::Comment(n) => out.push_str(&format!("/* int {n}(void) {{ }} */\n")),
        }
        out.push('\n');
    }
    (out, defs)
}

/// Brace depth outside comments, strings and character literals.
fn balanced(code: &str) -> bool {
    let b = code.as_bytes();
    let mut depth = 0i64;
    let mut i = 0;
    while i < b.len() {
        if b[i..].starts_with(b"//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if b[i..].starts_with(b"/*") {
            i += 2;
            while i + 1 < b.len() && !b[i..].starts_with(b"*/") {
                i += 1;
            }
            i += 2;
        } else if b[i] == b'"' || b[i] == b'\'' {
            let q = b[i];
            i += 1;
            while i < b.len() && b[i] != q {
                i += if b[i] == b'\\' { 2 } else { 1 };
            }
            i += 1;
        } else {
            match b[i] {
                b'{' => depth += 1,
                b'}' => depth -= 1,
                _ => {}
            }
            if depth < 0 {
                return false;
            }
            i += 1;
        }
    }
    depth == 0
}

proptest! {
    #[test]
    fn extraction_is_verbatim_balanced_and_deterministic(pieces in prop::collection::vec(piece(), 0..8)) {
        let (src, defs) = render(&pieces);
        let tree = SourceTree::from_files("p", [SourceFile::new("gen.c", src.clone())]);
        let index = extract_functions(&tree);
        let lines: Vec<&str> = src.split('\n').collect();
        for f in index.functions() {
            prop_assert!(f.start_line <= f.end_line);
            prop_assert_eq!(&f.body, &lines[f.start_line - 1..f.end_line].join("\n"));
            prop_assert!(balanced(&f.body), "unbalanced body {}", f.body);
        }
        let got: Vec<&str> = index.functions().iter().map(|f| f.name.as_str()).collect();
        prop_assert_eq!(got, defs.iter().map(String::as_str).collect::<Vec<_>>());
        prop_assert_eq!(extract_functions(&tree), index);
    }

    #[test]
    fn lookup_order_is_by_path_then_line(names in prop::collection::vec(name(), 1..6)) {
        let files: Vec<SourceFile> = names
            .iter()
            .enumerate()
            .map(|(i, n)| SourceFile::new(format!("d{}/f.c", names.len() - i), format!("int {n}(void) {{ return 0; }}\nint shared(void) {{ return {i}; }}\n")))
            .collect();
        let tree = SourceTree::from_files("p", files);
        let index = extract_functions(&tree);
        let hits: Vec<(String, usize)> = lookup_function(&index, "shared").iter().map(|f| (f.file_path.clone(), f.start_line)).collect();
        let mut sorted = hits.clone();
        sorted.sort();
        prop_assert_eq!(hits, sorted);
    }
}

// ---------------------------------------------------------------------------
// Chains

fn chain_name() -> impl Strategy<Value = String> {
    "[A-Za-z_][A-Za-z0-9_]{0,8}(::[A-Za-z_][A-Za-z0-9_]{0,6}){0,2}"
}

fn any_chain() -> impl Strategy<Value = CallChain> {
    (prop::collection::btree_set(chain_name(), 1..8), any::<bool>(), any::<u64>()).prop_map(|(names, back, seed)| {
        let mut names: Vec<String> = names.into_iter().collect();
        let k = names.len();
        names.rotate_left((seed as usize) % k);
        let dir = if back && names.len() > 1 { Direction::Backward } else { Direction::Forward };
        CallChain::new(names, dir)
    })
}

fn any_graph() -> impl Strategy<Value = CallGraph> {
    (2usize..9).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..20).prop_map(move |pairs| {
            let mut g = CallGraph::default();
            for i in 0..n {
                g.nodes.insert(format!("f{i}"));
            }
            for (a, b) in pairs {
                g.edges.insert((format!("f{a}"), format!("f{b}")));
            }
            g
        })
    })
}

proptest! {
    #[test]
    fn chain_render_parse_round_trip(chain in any_chain()) {
        let text = render_call_chain(&chain);
        prop_assert_eq!(parse_call_chain(&text).unwrap(), chain);
    }

    #[test]
    fn enumerated_chains_are_simple_bounded_graph_paths(
        g in any_graph(),
        depth in 1usize..6,
        backward in any::<bool>(),
        cap in 1usize..200,
    ) {
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let roots: Vec<String> = g.nodes.iter().take(2).cloned().collect();
        let out = enumerate_call_chains(&g, &roots, dir, depth, cap).unwrap();
        prop_assert!(out.chains.len() <= cap);
        let mut seen = BTreeSet::new();
        for c in &out.chains {
            let f = c.functions();
            prop_assert!(f.len() <= depth);
            prop_assert!(roots.contains(&f[0]));
            prop_assert_eq!(f.iter().collect::<BTreeSet<_>>().len(), f.len());
            for w in f.windows(2) {
                let edge = if backward { (w[1].clone(), w[0].clone()) } else { (w[0].clone(), w[1].clone()) };
                prop_assert!(g.edges.contains(&edge), "{} not an edge", render_call_chain(c));
            }
            prop_assert!(seen.insert(f.to_vec()));
        }
    }

    #[test]
    fn chain_selection_never_leaves_the_offered_set(
        offered in prop::collection::vec(any_chain(), 1..4),
        picks in prop::collection::vec((0usize..4, 0usize..8, 0usize..8, any::<bool>()), 0..5),
        junk in "[ -~\n]{0,40}",
    ) {
        // Replies mix real sub-chains, reversed ones, invented ones and noise.
        let mut reply = junk.clone();
        for (n, (which, a, b, flip)) in picks.iter().enumerate() {
            let base = &offered[which % offered.len()];
            let f = base.functions();
            let (lo, hi) = ((*a).min(*b) % f.len(), (*a).max(*b) % f.len());
            let mut part: Vec<String> = f[lo.min(hi)..=hi.max(lo)].to_vec();
            if *flip {
                part.reverse();
            }
            reply.push_str(&format!("\npath: {}.{}", n + 1, part.join(" -> ")));
        }
        let sel = parse_chain_selection(&reply, &offered);
        prop_assert!(!sel.chains.is_empty());
        for c in &sel.chains {
            prop_assert!(offered.iter().any(|o| o.contains_contiguous(c)), "{} escaped the leash", c);
        }
    }
}

// ---------------------------------------------------------------------------
// Parsers

fn entryish() -> impl Strategy<Value = String> {
    let token = prop_oneof![
        Just("METHOD:".to_string()),
        Just("FILE:".to_string()),
        Just("methods :".to_string()),
        Just("NONE".to_string()),
        (1u32..9).prop_map(|n| format!("{n}.")),
        chain_name(),
        "[a-z]{1,6}\\.c".prop_map(String::from),
        Just(", ".to_string()),
        Just("\n".to_string()),
        Just(" ".to_string()),
        Just("()".to_string()),
        Just("[".to_string()),
        Just("]".to_string()),
    ];
    prop::collection::vec(token, 0..60).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn entry_points_are_capped(text in entryish()) {
        if let Ok(ep) = parse_entry_response(&text) {
            prop_assert!(ep.methods.len() <= MAX_ENTRY_ITEMS);
            prop_assert!(ep.files.len() <= MAX_ENTRY_ITEMS);
            prop_assert!(!ep.methods.is_empty() || !ep.files.is_empty());
        }
    }

    #[test]
    fn parsers_are_total(text in "\\PC{0,200}") {
        let _ = parse_entry_response(&text);
        let _ = parse_analysis_choice(&text);
        if let Ok(r) = parse_reasoner_response(&text) {
            prop_assert!(!r.hypothesis.is_empty() || !r.missing_methods.is_empty());
        }
    }

    #[test]
    fn fingerprint_ignores_whitespace_layout(words in prop::collection::vec("[a-z{}();]{1,8}", 1..20), gaps in prop::collection::vec("[ \t\n]{1,3}", 20)) {
        let plain = words.join(" ");
        let spread: String = words.iter().zip(&gaps).map(|(w, g)| format!("{g}{w}")).collect();
        prop_assert_eq!(fingerprint(&plain), fingerprint(&spread));
    }
}

// ---------------------------------------------------------------------------
// Code blocks

const LIB_C: &str = "int add(int a, int b)\n{\n\treturn a + b;\n}\n\nint twice(int a)\n{\n\treturn add(a, a);\n}\n";
const IO_C: &str = "#include <stdio.h>\n\nvoid show(int v)\n{\n\tprintf(\"%d\\n\", v);\n\tif (v) {\n\t\tshow(v - 1);\n\t}\n}\n";

fn request() -> impl Strategy<Value = BlockRequest> {
    prop_oneof![
        prop::sample::select(vec!["add", "twice", "show", "missing"]).prop_map(|n| BlockRequest::Function(n.into())),
        prop::sample::select(vec!["lib.c", "io.c", "nope.c"]).prop_map(|p| BlockRequest::File(p.into())),
    ]
}

proptest! {
    #[test]
    fn code_blocks_are_verbatim_and_within_budget(
        requests in prop::collection::vec(request(), 0..6),
        budget in 1usize..300,
    ) {
        let tree = SourceTree::from_files("p", [SourceFile::new("lib.c", LIB_C), SourceFile::new("io.c", IO_C)]);
        let index = extract_functions(&tree);
        let got = collect_code_blocks(&tree, &index, &requests, budget);
        let total: usize = got.set.blocks.iter().map(|b| b.text.chars().count()).sum();
        prop_assert!(total <= budget);
        for b in &got.set.blocks {
            let file = tree.get(&b.file_path).unwrap();
            prop_assert!(file.content.contains(&b.text));
            prop_assert!(b.is_verbatim_in(&tree));
        }
        prop_assert_eq!(got.set.truncated, got.set.blocks.iter().any(|b| b.truncated) || !got.set.dropped.is_empty());
    }
}

// ---------------------------------------------------------------------------
// Judging

fn outcome(hyp: &str, status: RunStatus, truth: &[String], id: usize) -> CaseOutcome {
    let mut r = LocalizationResult::failed("x");
    r.status = status;
    r.hypothesis = hyp.to_string();
    r.failure_reason = None;
    let (verdict, matched_name) = judge(&r, truth);
    CaseOutcome {
        case_id: format!("c{id}"),
        verdict,
        matched_name,
        status,
        hypothesis: hyp.to_string(),
        failure_reason: None,
    }
}

proptest! {
    #[test]
    fn judging_is_order_independent(
        cases in prop::collection::vec((prop::sample::select(vec!["foo crashes", "bar::foo frees twice", "foobar", "in foo()", "nothing"]), any::<bool>()), 1..20),
        seed in any::<u64>(),
    ) {
        let truth = vec!["foo".to_string()];
        let outcomes: Vec<CaseOutcome> = cases
            .iter()
            .enumerate()
            .map(|(i, (h, done))| outcome(h, if *done { RunStatus::Completed } else { RunStatus::Failed }, &truth, i))
            .collect();
        let mut shuffled = outcomes.clone();
        let k = shuffled.len();
        shuffled.rotate_left((seed as usize) % k);
        shuffled.reverse();
        let a = EvalReport::from_outcomes("m", outcomes.clone());
        let b = EvalReport::from_outcomes("m", shuffled);
        prop_assert_eq!((a.total, a.correct, a.incorrect), (b.total, b.correct, b.incorrect));
        prop_assert_eq!(a.correct + a.incorrect, a.total);
        for (o, (h, done)) in outcomes.iter().zip(&cases) {
            // Re-judging gives the same verdict.
            let again = outcome(h, if *done { RunStatus::Completed } else { RunStatus::Failed }, &truth, 0);
            prop_assert_eq!(o.verdict, again.verdict);
        }
    }
}
