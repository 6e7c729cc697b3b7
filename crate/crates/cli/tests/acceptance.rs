//! Acceptance suite. Runs every release criterion, prints one PASS/FAIL
//! line each and exits non-zero if any failed.
//!
//! Built with `harness = false` so the lines are printed even under a
//! plain `cargo test`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cmind_core::analyzer::{
    build_callgraph, enumerate_call_chains, parse_call_chain, render_call_chain, CallChain, CallGraph,
    Direction,
};
use cmind_core::corpus::{extract_functions, load_source_tree, SourceFile, SourceTree};
use cmind_core::eval::{run_case, EvalCase, EvalOptions, EvalReport};
use cmind_core::llm::{Completion, LlmBackend, LlmConfig, LlmError, LlmGateway, Stage};
use cmind_core::pipeline::{run, AnalysisKind, LocalizationResult, PipelineConfig, RunStatus};
use cmind_core::prompts::{
    parse_analysis_choice, parse_chain_selection, parse_entry_response, parse_reasoner_response,
    AnalysisChoice, BugReport, PromptError, Strategy, MAX_ENTRY_ITEMS,
};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::Value;

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn obs() -> PathBuf {
    root().join("fixtures/obs")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Leash bookkeeping: every pipeline run made by this suite is logged here
// and audited by the no-fabrication criterion.

static RUNS: Mutex<Vec<(SourceTree, LocalizationResult)>> = Mutex::new(Vec::new());

fn log_run(tree: &SourceTree, result: &LocalizationResult) {
    RUNS.lock().unwrap().push((tree.clone(), result.clone()));
}

/// Every fenced C block in `prompt` must be the exact text of the file
/// lines its header names. Returns (blocks checked, violations).
fn audit_code_blocks(tree: &SourceTree, prompt: &str) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut rest = prompt;
    while let Some(open) = rest.find("```c\n") {
        let header = rest[..open].trim_end_matches(['\n', ':']);
        let header = header.rsplit('\n').next().unwrap_or("");
        let body_start = open + "```c\n".len();
        let Some(close) = rest[body_start..].find("\n```") else {
            bad.push(format!("unterminated block after {header:?}"));
            break;
        };
        let body = &rest[body_start..body_start + close];
        rest = &rest[body_start + close + 4..];
        checked += 1;

        // header: `label (path:start-end)`
        let span = header
            .rsplit_once(" (")
            .and_then(|(_, s)| s.strip_suffix(')'))
            .and_then(|s| s.rsplit_once(':'))
            .and_then(|(p, r)| r.split_once('-').map(|(a, b)| (p, a, b)));
        let Some((path, start, end)) = span else {
            bad.push(format!("block without a source span: {header:?}"));
            continue;
        };
        let (Ok(start), Ok(end)) = (start.parse::<usize>(), end.parse::<usize>()) else {
            bad.push(format!("bad span in {header:?}"));
            continue;
        };
        let Some(file) = tree.get(path) else {
            bad.push(format!("block names a file not in the tree: {path}"));
            continue;
        };
        let lines: Vec<&str> = file.content.split('\n').collect();
        // A whole-file block keeps the file's final newline.
        let body = body.strip_suffix('\n').unwrap_or(body);
        let n = body.split('\n').count();
        let last = start + n - 1;
        if start == 0 || last > end || end > lines.len() {
            bad.push(format!("{header}: span out of range"));
            continue;
        }
        let expected = lines[start - 1..last].join("\n");
        if expected != body {
            bad.push(format!("{header}: text differs from {path}:{start}-{last}"));
        }
    }
    (checked, bad)
}

/// Dataflow hop lines `path:line: code    // note` must quote the named
/// line.
fn audit_hops(tree: &SourceTree, prompt: &str) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for line in prompt.lines() {
        let Some((hop, _note)) = line.split_once("    // ") else {
            continue;
        };
        let mut parts = hop.splitn(3, ':');
        let (Some(path), Some(num), Some(code)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let (Some(file), Ok(num)) = (tree.get(path), num.parse::<usize>()) else {
            continue;
        };
        checked += 1;
        let actual = file.content.split('\n').nth(num.wrapping_sub(1)).map(str::trim);
        if actual != Some(code.trim()) {
            bad.push(format!("hop {path}:{num} quotes {code:?}, file has {actual:?}"));
        }
    }
    (checked, bad)
}

// ---------------------------------------------------------------------------
// Shared helpers

fn scripted(entries: &[(Stage, &str)]) -> LlmGateway {
    struct Queue(Mutex<Vec<(Stage, String)>>);
    impl LlmBackend for Queue {
        fn complete(&self, stage: Stage, _prompt: &str) -> Result<Completion, LlmError> {
            let mut q = self.0.lock().unwrap();
            match q.iter().position(|(s, _)| *s == stage) {
                Some(i) => Ok(Completion::text(q.remove(i).1)),
                None => Err(LlmError::TranscriptExhausted(stage)),
            }
        }
    }
    let q = entries.iter().map(|(s, r)| (*s, r.to_string())).collect();
    LlmGateway::with_backend(Box::new(Queue(Mutex::new(q))))
}

fn obs_tree() -> SourceTree {
    load_source_tree(&obs().join("src")).unwrap()
}

fn obs_report() -> BugReport {
    BugReport::new(std::fs::read_to_string(obs().join("bug.txt")).unwrap()).unwrap()
}

fn zip_dir(dir: &Path) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    let mut zip = zip::ZipWriter::new(&mut buf);
    let tree = load_source_tree(dir).unwrap();
    for f in tree.files() {
        zip.start_file(f.path.as_str(), zip::write::SimpleFileOptions::default()).unwrap();
        zip.write_all(f.content.as_bytes()).unwrap();
    }
    zip.finish().unwrap();
    buf.into_inner()
}

fn cmind() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cmind"));
    for var in ["CMIND_CONFIG", "CMIND_MODEL", "CMIND_ENDPOINT", "CMIND_API_KEY_ENV", "XDG_CONFIG_HOME"] {
        c.env_remove(var);
    }
    c.env("HOME", "/nonexistent-cmind-home");
    c
}

// ---------------------------------------------------------------------------
// Replay fidelity

fn replay_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for i in 0..2 {
        let out_path = dir.path().join(format!("r{i}.json"));
        let start = Instant::now();
        let out = cmind()
            .arg("localize")
            .arg("--src")
            .arg(obs().join("src"))
            .arg("--report")
            .arg(obs().join("bug.txt"))
            .arg("--transcript")
            .arg(obs().join("replay.jsonl"))
            .arg("--out")
            .arg(&out_path)
            .output()
            .unwrap();
        slowest = slowest.max(start.elapsed());
        check(out.status.code() == Some(0), || {
            format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
        })?;
        let result: LocalizationResult = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
        check(result.status == RunStatus::Completed, || format!("status {:?}", result.status))?;
        for token in ["ApplicationAudioCaptureToolbar::Init", "obs_module_get_locale_string", "NULL"] {
            check(result.summary.contains(token), || format!("summary lacks {token}"))?;
        }
        let stdout = String::from_utf8(out.stdout).unwrap();
        check(stdout.trim_end() == result.summary.trim_end(), || "stdout is not the summary".into())?;
        log_run(&obs_tree(), &result);
        outputs.push((stdout, result));
    }
    check(outputs[0] == outputs[1], || "two replays differ".into())?;
    check(slowest < Duration::from_secs(5), || format!("took {slowest:?}"))?;
    Ok(format!("completed, deterministic, slowest run {} ms", slowest.as_millis()))
}

// ---------------------------------------------------------------------------
// Corpus accounting

const WRONG_SUMMARY: &str = "1. obs_module_get_locale_string reads mod->get_string without testing mod.\n\nHypothesis\nobs_module_get_locale_string lacks a NULL check on mod and crashes on a NULL module.";

fn wrong_transcript() -> String {
    let replay = std::fs::read_to_string(obs().join("replay.jsonl")).unwrap();
    let mut lines: Vec<Value> = replay.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let n = lines.len();
    // Final reasoner reply and summary blame only the crashing callee.
    lines[n - 2]["response"] = Value::from(
        "REASONING METHODS: [backward reasoning] REASONING STEPS: [1. mod is dereferenced unchecked.] Hypothesis: [obs_module_get_locale_string lacks a NULL check on mod] METHOD MISSING: []",
    );
    lines[n - 1]["response"] = Value::from(WRONG_SUMMARY);
    lines.iter().map(|v| v.to_string() + "\n").collect()
}

fn failing_transcript() -> String {
    (0..3)
        .map(|_| r#"{"stage":"entry_collector","response":"I cannot tell from this report."}"#.to_string() + "\n")
        .collect()
}

/// Writes a 20-case corpus with `correct` right answers, one failed run
/// and the rest wrong answers, in shuffled order.
fn write_corpus(dir: &Path, correct: usize, seed: u64) -> Vec<EvalCase> {
    std::fs::write(dir.join("source.zip"), zip_dir(&obs().join("src"))).unwrap();
    std::fs::copy(obs().join("bug.txt"), dir.join("bug.txt")).unwrap();
    std::fs::copy(obs().join("replay.jsonl"), dir.join("right.jsonl")).unwrap();
    std::fs::write(dir.join("wrong.jsonl"), wrong_transcript()).unwrap();
    std::fs::write(dir.join("fail.jsonl"), failing_transcript()).unwrap();
    let mut kinds: Vec<&str> = std::iter::repeat_n("right", correct)
        .chain(std::iter::once("fail"))
        .chain(std::iter::repeat_n("wrong", 20 - correct - 1))
        .collect();
    kinds.shuffle(&mut StdRng::seed_from_u64(seed));
    let cases: Vec<EvalCase> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| EvalCase {
            case_id: format!("case-{i:02}-{k}"),
            report: "bug.txt".into(),
            source: "source.zip".into(),
            transcript: Some(format!("{k}.jsonl").into()),
            ground_truth: vec!["ApplicationAudioCaptureToolbar::Init".into()],
        })
        .collect();
    let manifest: String = cases.iter().map(|c| serde_json::to_string(c).unwrap() + "\n").collect();
    std::fs::write(dir.join("manifest.jsonl"), manifest).unwrap();
    cases
}

fn table_row(label: &str, correct: usize, expect_incorrect: usize, seed: u64) -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let cases = write_corpus(dir.path(), correct, seed);
    let out = cmind()
        .arg("eval")
        .arg("--corpus")
        .arg(dir.path())
        .args(["--label", label, "--workers", "4"])
        .output()
        .unwrap();
    check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let report: EvalReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval_report.json")).unwrap()).unwrap();
    check(report.total == 20 && report.correct == correct && report.incorrect == expect_incorrect, || {
        format!("{label}: got {}/{}/{}", report.total, report.correct, report.incorrect)
    })?;
    let failed = report.per_case.iter().filter(|c| c.status == RunStatus::Failed).count();
    check(failed == 1, || format!("{failed} failed cases"))?;
    let row = format!("| {label} | 20 | {correct} | {expect_incorrect} |");
    let table = String::from_utf8(out.stdout).unwrap();
    check(table.contains(&row), || format!("table lacks {row:?}:\n{table}"))?;

    // Same corpus again gives byte-identical report files.
    let first = std::fs::read(dir.path().join("eval_report.json")).unwrap();
    let again = cmind()
        .arg("eval")
        .arg("--corpus")
        .arg(dir.path())
        .args(["--label", label, "--workers", "1"])
        .output()
        .unwrap();
    check(again.status.success(), || "second eval failed".into())?;
    check(std::fs::read(dir.path().join("eval_report.json")).unwrap() == first, || {
        "eval report not reproducible".into()
    })?;

    let opts = EvalOptions::default();
    let tree = load_source_tree(&dir.path().join("source.zip")).unwrap();
    for case in &cases {
        log_run(&tree, &run_case(dir.path(), case, &opts));
    }
    Ok(row)
}

fn table_accounting() -> Outcome {
    let a = table_row("o4-mini", 15, 5, 7)?;
    let b = table_row("gpt-5-mini", 16, 4, 11)?;
    Ok(format!("{a} {b}"))
}

// ---------------------------------------------------------------------------
// Callgraph oracle

/// Random C file plus the call edges it was built to contain.
fn synth_program(rng: &mut StdRng) -> (String, BTreeSet<(String, String)>) {
    let n = rng.random_range(4..=12);
    let names: Vec<String> = (0..n).map(|i| format!("fn_{i}_{}", rng.random_range(0..100))).collect();
    let mut truth = BTreeSet::new();
    let mut src = String::from("#include <stdio.h>\n#include <string.h>\n\n");
    src.push_str(&format!("#define WRAP(x) {}(x)\n", names[0]));
    for name in &names {
        src.push_str(&format!("static int {name}(int x);\n"));
    }
    src.push_str("typedef int (*handler_t)(int);\n\n");
    for (i, name) in names.iter().enumerate() {
        let mut body = Vec::new();
        let statements = rng.random_range(1..=6);
        for _ in 0..statements {
            let callee = names.choose(rng).unwrap();
            match rng.random_range(0..12) {
                0 | 1 => {
                    body.push(format!("\tx = {callee}(x);"));
                    truth.insert((name.clone(), callee.clone()));
                }
                2 => {
                    body.push(format!("\tx += {callee} (x - 1);"));
                    truth.insert((name.clone(), callee.clone()));
                }
                3 => {
                    body.push(format!("\tx = {callee}(\n\t\tx);"));
                    truth.insert((name.clone(), callee.clone()));
                }
                4 => body.push(format!("\t/* {callee}(x) is not called here */")),
                5 => body.push(format!("\t// {callee}(x);")),
                6 => body.push(format!("\tputs(\"{callee}(x)\");")),
                7 => body.push(format!("\thandler_t h = &{callee};\n\t(void)h;")),
                8 => body.push("\tif (x > 3) {\n\t\twhile (x--) {}\n\t}".into()),
                9 => body.push("\tx = (int)(sizeof(x)) + 'f';".into()),
                10 => body.push("\tmemset(&x, 0, sizeof x);".into()),
                _ => body.push("\tfor (int k = 0; k < 2; k++) { x ^= k; }".into()),
            }
        }
        let storage = if i == 0 { "int" } else { "static int" };
        src.push_str(&format!("{storage} {name}(int x)\n{{\n{}\n\treturn x;\n}}\n\n", body.join("\n")));
    }
    (src, truth)
}

/// Independent scan: blank comments, literals and preprocessor lines, find
/// top-level `name(...) {` definitions, then every `ident (` in each body
/// that names a definition.
fn oracle_edges(src: &str) -> BTreeSet<(String, String)> {
    let b = src.as_bytes();
    let mut clean = vec![b' '; b.len()];
    let mut i = 0;
    let mut line_start = true;
    while i < b.len() {
        let c = b[i];
        if c == b'\n' {
            clean[i] = b'\n';
            line_start = true;
            i += 1;
            continue;
        }
        if line_start && c == b'#' {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if !c.is_ascii_whitespace() {
            line_start = false;
        }
        if b[i..].starts_with(b"//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if b[i..].starts_with(b"/*") {
            i += 2;
            while i < b.len() && !b[i..].starts_with(b"*/") {
                if b[i] == b'\n' {
                    clean[i] = b'\n';
                }
                i += 1;
            }
            i += 2;
        } else if c == b'"' || c == b'\'' {
            i += 1;
            while i < b.len() && b[i] != c {
                i += if b[i] == b'\\' { 2 } else { 1 };
            }
            i += 1;
        } else {
            clean[i] = c;
            i += 1;
        }
    }
    let text = String::from_utf8(clean).unwrap();
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_';

    let mut defs: Vec<(String, usize, usize)> = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut k = 0;
    while k < chars.len() {
        match chars[k] {
            // Bodies are skipped whole, so every brace seen here is top level.
            '{' => {
                let mut j = k;
                while j > 0 && chars[j - 1].is_whitespace() {
                    j -= 1;
                }
                let mut end = k;
                let mut d = 0;
                for (m, ch) in chars.iter().enumerate().skip(k) {
                    match ch {
                        '{' => d += 1,
                        '}' => {
                            d -= 1;
                            if d == 0 {
                                end = m;
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                if j > 0 && chars[j - 1] == ')' {
                    let mut p = j - 1;
                    let mut pd = 0;
                    loop {
                        match chars[p] {
                            ')' => pd += 1,
                            '(' => {
                                pd -= 1;
                                if pd == 0 {
                                    break;
                                }
                            }
                            _ => {}
                        }
                        p -= 1;
                    }
                    let mut q = p;
                    while q > 0 && chars[q - 1].is_whitespace() {
                        q -= 1;
                    }
                    let mut s = q;
                    while s > 0 && is_ident(chars[s - 1]) {
                        s -= 1;
                    }
                    let name: String = chars[s..q].iter().collect();
                    if !name.is_empty() {
                        defs.push((name, k, end));
                    }
                }
                k = end + 1;
                continue;
            }
            _ => {}
        }
        k += 1;
    }

    let defined: BTreeSet<&str> = defs.iter().map(|d| d.0.as_str()).collect();
    let mut edges = BTreeSet::new();
    for (name, open, close) in &defs {
        let body = &chars[*open..=*close];
        let mut t = 0;
        while t < body.len() {
            if is_ident(body[t]) && (t == 0 || !is_ident(body[t - 1])) {
                let s = t;
                while t < body.len() && is_ident(body[t]) {
                    t += 1;
                }
                let word: String = body[s..t].iter().collect();
                let mut u = t;
                while u < body.len() && body[u].is_whitespace() {
                    u += 1;
                }
                if u < body.len() && body[u] == '(' && defined.contains(word.as_str()) {
                    edges.insert((name.clone(), word));
                }
            } else {
                t += 1;
            }
        }
    }
    edges
}

fn callgraph_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(20);
    let fixtures = 24;
    let mut total_edges = 0;
    for n in 0..fixtures {
        let (src, truth) = synth_program(&mut rng);
        check(src.lines().count() <= 200, || format!("fixture {n} too long"))?;
        let oracle = oracle_edges(&src);
        check(oracle == truth, || format!("fixture {n}: oracle disagrees with construction"))?;
        let tree = SourceTree::from_files("synth", [SourceFile::new(format!("synth{n}.c"), src.clone())]);
        let graph = build_callgraph(&extract_functions(&tree));
        check(graph.edges == oracle, || {
            let extra: Vec<_> = graph.edges.difference(&oracle).collect();
            let missing: Vec<_> = oracle.difference(&graph.edges).collect();
            format!("fixture {n}: extra {extra:?}, missing {missing:?}\n{src}")
        })?;
        total_edges += oracle.len();
    }
    Ok(format!("{fixtures} fixtures, {total_edges} edges, exact set equality"))
}

// ---------------------------------------------------------------------------
// Chain enumeration oracle

/// Every simple path of at most `depth` nodes from `root`, as name lists.
fn dfs_paths(adj: &BTreeMap<String, BTreeSet<String>>, root: &str, depth: usize) -> Vec<Vec<String>> {
    fn go(
        adj: &BTreeMap<String, BTreeSet<String>>,
        path: &mut Vec<String>,
        depth: usize,
        out: &mut Vec<Vec<String>>,
    ) {
        out.push(path.clone());
        if path.len() == depth {
            return;
        }
        let last = path.last().unwrap().clone();
        for next in adj.get(&last).into_iter().flatten() {
            if !path.contains(next) {
                path.push(next.clone());
                go(adj, path, depth, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(adj, &mut vec![root.to_string()], depth, &mut out);
    out.sort();
    out
}

fn adjacency(graph: &CallGraph, direction: Direction) -> BTreeMap<String, BTreeSet<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (a, b) in &graph.edges {
        let (from, to) = match direction {
            Direction::Forward => (a, b),
            Direction::Backward => (b, a),
        };
        adj.entry(from.clone()).or_default().insert(to.clone());
    }
    adj
}

fn compare_chains(graph: &CallGraph, label: &str, depth: usize) -> Result<usize, String> {
    let mut compared = 0;
    for root in &graph.nodes {
        for direction in [Direction::Forward, Direction::Backward] {
            let expected = dfs_paths(&adjacency(graph, direction), root, depth);
            let got = enumerate_call_chains(graph, std::slice::from_ref(root), direction, depth, 100_000)
                .map_err(|e| format!("{label}: {e}"))?;
            let got_names: Vec<Vec<String>> = got.chains.iter().map(|c| c.functions().to_vec()).collect();
            check(got_names == expected && !got.truncated, || {
                format!("{label} root {root} {direction:?}: {got_names:?} != {expected:?}")
            })?;
            compared += expected.len();
        }
    }
    Ok(compared)
}

fn random_chain(rng: &mut StdRng) -> CallChain {
    const PARTS: &[&str] = &["init", "read", "parse_hdr", "Toolbar", "obs", "do_copy", "x", "buf2"];
    let len = rng.random_range(1..=8);
    let mut names: Vec<String> = Vec::new();
    while names.len() < len {
        let mut n = PARTS.choose(rng).unwrap().to_string();
        if rng.random_bool(0.3) {
            n = format!("{}::{}", PARTS.choose(rng).unwrap(), n);
        }
        n.push_str(&rng.random_range(0..50).to_string());
        if !names.contains(&n) {
            names.push(n);
        }
    }
    let dir = if len > 1 && rng.random_bool(0.5) {
        Direction::Backward
    } else {
        Direction::Forward
    };
    CallChain::new(names, dir)
}

fn chain_oracle() -> Outcome {
    let tree = load_source_tree(&root().join("fixtures/diamond")).unwrap();
    let diamond = build_callgraph(&extract_functions(&tree));
    let from_a = enumerate_call_chains(&diamond, &["a".into()], Direction::Forward, 8, 100).unwrap();
    let rendered: Vec<String> = from_a.chains.iter().map(render_call_chain).collect();
    check(rendered == ["a", "a -> b", "a -> b -> d", "a -> c", "a -> c -> d"], || {
        format!("diamond from a: {rendered:?}")
    })?;
    let mut compared = compare_chains(&diamond, "diamond", 8)?;

    let mut rng = StdRng::seed_from_u64(8);
    let mut dag = CallGraph::default();
    let names: Vec<String> = (0..8).map(|i| format!("n{i}")).collect();
    dag.nodes.extend(names.iter().cloned());
    for i in 0..8 {
        for j in i + 1..8 {
            if rng.random_bool(0.45) {
                dag.edges.insert((names[i].clone(), names[j].clone()));
            }
        }
    }
    for depth in [2, 4, 8] {
        compared += compare_chains(&dag, "dag", depth)?;
    }

    // Cap: output is the lexicographic prefix of the full enumeration.
    let full = dfs_paths(&adjacency(&dag, Direction::Forward), "n0", 8);
    if full.len() > 3 {
        let capped = enumerate_call_chains(&dag, &["n0".into()], Direction::Forward, 8, 3).unwrap();
        let got: Vec<Vec<String>> = capped.chains.iter().map(|c| c.functions().to_vec()).collect();
        check(capped.truncated && got == full[..3], || "cap prefix mismatch".into())?;
    }

    let mut rng = StdRng::seed_from_u64(1000);
    for _ in 0..1000 {
        let chain = random_chain(&mut rng);
        let text = render_call_chain(&chain);
        let back = parse_call_chain(&text).map_err(|e| format!("{text}: {e}"))?;
        check(back == chain, || format!("round trip changed {text}"))?;
    }
    Ok(format!(
        "diamond + 8-node DAG ({} edges): {compared} chains match DFS; 1000 round trips",
        dag.edges.len()
    ))
}

// ---------------------------------------------------------------------------
// Grammar suite

fn ident(rng: &mut StdRng) -> String {
    const HEADS: &[&str] = &["read", "parse", "obs_module", "copy", "Toolbar::Init", "emit", "buf"];
    format!("{}_{}", HEADS.choose(rng).unwrap(), rng.random_range(0..1000))
}

fn path(rng: &mut StdRng) -> String {
    const DIRS: &[&str] = &["", "src/", "libobs/", "UI/widgets/"];
    format!("{}{}.{}", DIRS.choose(rng).unwrap(), ident(rng).replace("::", "_"), ["c", "h", "cpp"].choose(rng).unwrap())
}

fn prose(rng: &mut StdRng) -> String {
    const WORDS: &[&str] = &["the", "pointer", "is", "freed", "twice", "when", "len", "exceeds", "buffer", "size", "so", "NULL"];
    (0..rng.random_range(3..12)).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn generated_grammar_strings() -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(33);
    let mut n = 0;
    for _ in 0..500 {
        // METHOD:1.[m] 2.[m] FILE:1.[f] with NONE when a list is empty.
        let methods: Vec<String> = (0..rng.random_range(0..=3)).map(|_| ident(&mut rng)).collect();
        let mut files: Vec<String> = (0..rng.random_range(0..=3)).map(|_| path(&mut rng)).collect();
        if methods.is_empty() && files.is_empty() {
            files.push(path(&mut rng));
        }
        let list = |xs: &[String]| -> String {
            if xs.is_empty() {
                "1.NONE".into()
            } else {
                xs.iter().enumerate().map(|(i, x)| format!("{}.{x}", i + 1)).collect::<Vec<_>>().join(" ")
            }
        };
        let methods = methods.into_iter().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
        let files = files.into_iter().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
        let text = format!("METHOD:{} FILE:{}", list(&methods), list(&files));
        let got = parse_entry_response(&text).map_err(|e| format!("{text}: {e}"))?;
        check(got.methods == methods && got.files == files, || format!("{text} -> {got:?}"))?;

        let choice = if rng.random_bool(0.5) {
            let (s, k) = (ident(&mut rng), ident(&mut rng));
            let text = format!("data flow analysis: source:[{s}] sink:[{k}]");
            (text, AnalysisChoice::Dataflow { source: s, sink: k })
        } else {
            ("call graph analysis".to_string(), AnalysisChoice::Callgraph)
        };
        check(parse_analysis_choice(&choice.0).ok() == Some(choice.1.clone()), || choice.0.clone())?;

        let strategy = *[Strategy::Forward, Strategy::Backward, Strategy::CodeComprehension].choose(&mut rng).unwrap();
        let steps = prose(&mut rng);
        let missing: Vec<String> = (0..rng.random_range(0..=3)).map(|_| ident(&mut rng)).collect::<BTreeSet<_>>().into_iter().collect();
        let hyp = if missing.is_empty() || rng.random_bool(0.5) { prose(&mut rng) } else { String::new() };
        let text = if missing.is_empty() && rng.random_bool(0.5) {
            format!("REASONING METHODS:[{}] REASONING STEPS:[{steps}] Hypothesis: [{hyp}]", strategy.label())
        } else {
            format!(
                "REASONING METHODS:[{}] REASONING STEPS:[{steps}] Hypothesis: [{hyp}] METHOD MISSING: [{}]",
                strategy.label(),
                missing.join(", ")
            )
        };
        let got = parse_reasoner_response(&text).map_err(|e| format!("{text}: {e}"))?;
        check(
            got.strategy == Some(strategy) && got.steps == steps && got.hypothesis == hyp && got.missing_methods == missing,
            || format!("{text} -> {got:?}"),
        )?;

        let offered: Vec<CallChain> = (0..rng.random_range(1..5)).map(|_| random_chain(&mut rng)).collect();
        let picks: Vec<CallChain> = offered.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
        let picks = if picks.is_empty() { vec![offered[0].clone()] } else { picks };
        let text = format!(
            "path: {}",
            picks.iter().enumerate().map(|(i, c)| format!("{}.{c}", i + 1)).collect::<Vec<_>>().join(" ")
        );
        let sel = parse_chain_selection(&text, &offered);
        let mut want = picks.clone();
        want.dedup();
        check(sel.chains == want && !sel.fell_back, || format!("{text} -> {:?}", sel.chains))?;
        n += 4;
    }
    Ok(n)
}

fn corpus_lines(name: &str) -> Vec<Value> {
    let text = std::fs::read_to_string(root().join("docs/grammar-corpus").join(name)).unwrap();
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn offered(sample: &Value) -> Vec<CallChain> {
    sample["offered"].as_array().unwrap().iter().map(|c| parse_call_chain(c.as_str().unwrap()).unwrap()).collect()
}

fn leniency_sample(s: &Value) -> Result<(), String> {
    let input = s["input"].as_str().unwrap();
    let expect = &s["expect"];
    let got = match s["grammar"].as_str().unwrap() {
        "entry" => serde_json::to_value(parse_entry_response(input).map_err(|e| e.to_string())?).unwrap(),
        "choice" => serde_json::to_value(parse_analysis_choice(input).map_err(|e| e.to_string())?).unwrap(),
        "reasoner" => {
            let r = parse_reasoner_response(input).map_err(|e| e.to_string())?;
            serde_json::json!({"strategy": r.strategy, "hypothesis": r.hypothesis, "missing_methods": r.missing_methods})
        }
        "chains" => {
            let sel = parse_chain_selection(input, &offered(s));
            if sel.fell_back {
                return Err("fell back".into());
            }
            Value::from(sel.chains.iter().map(render_call_chain).collect::<Vec<_>>())
        }
        g => return Err(format!("unknown grammar {g}")),
    };
    check(&got == expect, || format!("got {got}"))
}

fn rejection_sample(s: &Value) -> Result<(), String> {
    let input = s["input"].as_str().unwrap();
    let want = s["error"].as_str().unwrap();
    let got: Option<PromptError> = match s["grammar"].as_str().unwrap() {
        "entry" => parse_entry_response(input).err(),
        "choice" => parse_analysis_choice(input).err(),
        "reasoner" => parse_reasoner_response(input).err(),
        "chains" => {
            let offered = offered(s);
            let sel = parse_chain_selection(input, &offered);
            return check(sel.fell_back && want == "Fallback" && sel.chains == offered[..1], || {
                format!("selection {:?}", sel.chains)
            });
        }
        g => return Err(format!("unknown grammar {g}")),
    };
    let kind = match &got {
        Some(PromptError::NoEntryPoints) => "NoEntryPoints",
        Some(PromptError::UnparseableChoice) => "UnparseableChoice",
        Some(PromptError::UnparseableReasoning) => "UnparseableReasoning",
        Some(other) => other.kind(),
        None => "accepted",
    };
    check(kind == want, || format!("got {kind}"))
}

fn grammar_suite() -> Outcome {
    let generated = generated_grammar_strings()?;
    let lenient = corpus_lines("leniency.jsonl");
    let rejected = corpus_lines("rejection.jsonl");
    check(lenient.len() >= 15 && rejected.len() >= 10, || "corpora too small".into())?;
    for s in &lenient {
        leniency_sample(s).map_err(|e| format!("leniency {}: {e}", s["input"]))?;
    }
    for s in &rejected {
        rejection_sample(s).map_err(|e| format!("rejection {}: {e}", s["input"]))?;
    }
    Ok(format!(
        "{generated} generated strings, {} leniency and {} rejection samples",
        lenient.len(),
        rejected.len()
    ))
}

// ---------------------------------------------------------------------------
// Termination and caps

/// Answers every stage sensibly except the reasoner, which only ever asks
/// for more code.
struct EndlessRequests;

impl LlmBackend for EndlessRequests {
    fn complete(&self, stage: Stage, _prompt: &str) -> Result<Completion, LlmError> {
        Ok(Completion::text(match stage {
            Stage::EntryCollector => "METHOD:1.obs_module_get_locale_string FILE:1.NONE",
            Stage::AnalysisSelector => "call graph analysis",
            Stage::ChainSelector => "path: 1.obs_module_get_locale_string <- obs_module_get_locale_text",
            Stage::Reasoner => "REASONING METHODS: backward reasoning Hypothesis: [] METHOD MISSING: [obs_get_module, more_code]",
            Stage::Summarizer => "unused",
        }))
    }
}

struct FuzzEntry(String);

impl LlmBackend for FuzzEntry {
    fn complete(&self, stage: Stage, _prompt: &str) -> Result<Completion, LlmError> {
        Ok(Completion::text(match stage {
            Stage::EntryCollector => self.0.as_str(),
            Stage::AnalysisSelector => "call graph analysis",
            Stage::ChainSelector => "path: 1.none",
            Stage::Reasoner => "REASONING METHODS: code comprehension Hypothesis: [done] METHOD MISSING: []",
            Stage::Summarizer => "Hypothesis\ndone",
        }))
    }
}

fn fuzz_entry_reply(rng: &mut StdRng, names: &[String], files: &[String]) -> String {
    let mut out = String::new();
    if rng.random_bool(0.3) {
        out.push_str("Sure, here are the entry points.\n");
    }
    for _ in 0..rng.random_range(0..12) {
        let key = match rng.random_range(0..6) {
            0 => "METHOD:",
            1 => "method :",
            2 => "**METHODS:**",
            3 => "FILE:",
            4 => "File:",
            _ => "FILES :",
        };
        out.push_str(key);
        for k in 0..rng.random_range(1..6) {
            let num = if rng.random_bool(0.8) { k + 1 } else { rng.random_range(0..9) };
            let value = match rng.random_range(0..5) {
                0 => "NONE".to_string(),
                1 => format!("{}()", names.choose(rng).unwrap()),
                2 => format!("[{}]", files.choose(rng).unwrap()),
                3 => format!("`{}`", ident(rng)),
                _ => names.choose(rng).unwrap().clone(),
            };
            out.push_str(&format!(" {num}.{value}"));
            if rng.random_bool(0.2) {
                out.push(',');
            }
        }
        out.push(if rng.random_bool(0.5) { '\n' } else { ' ' });
    }
    out
}

fn termination_and_caps() -> Outcome {
    let tree = obs_tree();
    let report = obs_report();
    let result = run(&report, &tree, &PipelineConfig::default(), &LlmGateway::with_backend(Box::new(EndlessRequests)));
    log_run(&tree, &result);
    let reasoner_calls = result.trace.iter().filter(|t| t.stage == Stage::Reasoner).count();
    check(result.status == RunStatus::Inconclusive, || format!("status {:?}", result.status))?;
    check(result.iterations == 5 && reasoner_calls == 5, || {
        format!("{} iterations, {reasoner_calls} reasoner calls", result.iterations)
    })?;

    let index = extract_functions(&tree);
    let names: Vec<String> = index.functions().iter().map(|f| f.qualified_name.clone()).collect();
    let files: Vec<String> = tree.paths().map(String::from).collect();
    let mut rng = StdRng::seed_from_u64(500);
    let mut parsed = 0;
    let mut widest = (0, 0);
    for i in 0..500 {
        let reply = fuzz_entry_reply(&mut rng, &names, &files);
        if let Ok(ep) = parse_entry_response(&reply) {
            parsed += 1;
            check(ep.methods.len() <= MAX_ENTRY_ITEMS && ep.files.len() <= MAX_ENTRY_ITEMS, || {
                format!("{reply:?} -> {ep:?}")
            })?;
            widest = (widest.0.max(ep.methods.len()), widest.1.max(ep.files.len()));
        }
        if i % 10 == 0 {
            let r = run(&report, &tree, &PipelineConfig::default(), &LlmGateway::with_backend(Box::new(FuzzEntry(reply.clone()))));
            check(r.entry_points.methods.len() <= 3 && r.entry_points.files.len() <= 3, || {
                format!("pipeline kept {:?}", r.entry_points)
            })?;
            log_run(&tree, &r);
        }
    }
    Ok(format!(
        "halted at 5 iterations (inconclusive); 500 fuzzed replies, {parsed} parsed, widest {}+{}",
        widest.0, widest.1
    ))
}

// ---------------------------------------------------------------------------
// Extra pipeline runs so the leash audit also sees dataflow prompts.

fn dataflow_run() {
    let tree = obs_tree();
    let gateway = scripted(&[
        (Stage::EntryCollector, "METHOD:1.ApplicationAudioCaptureToolbar::Init 2.obs_module_get_locale_text FILE:1.NONE"),
        (
            Stage::AnalysisSelector,
            "data flow analysis: source:[ApplicationAudioCaptureToolbar::Init] sink:[obs_module_get_locale_text]",
        ),
        (Stage::Reasoner, "REASONING METHODS: [forward reasoning] Hypothesis: [] METHOD MISSING: [obs_get_module, obs_module_get_locale_string]"),
        (Stage::Reasoner, "REASONING METHODS: [forward reasoning] REASONING STEPS: [mod can be NULL] Hypothesis: [ApplicationAudioCaptureToolbar::Init passes a NULL mod] METHOD MISSING: []"),
        (Stage::Summarizer, "Hypothesis\nApplicationAudioCaptureToolbar::Init passes a NULL mod."),
    ]);
    let r = run(&obs_report(), &tree, &PipelineConfig::default(), &gateway);
    assert_eq!(r.status, RunStatus::Completed, "{:?}", r.failure_reason);
    assert_eq!(r.analysis_kind, Some(AnalysisKind::Dataflow), "{:?}", r.warnings);
    log_run(&tree, &r);
}

fn no_fabrication() -> Outcome {
    dataflow_run();
    let runs = RUNS.lock().unwrap();
    let mut prompts = 0;
    let mut blocks = 0;
    let mut hops = 0;
    let mut violations = Vec::new();
    for (tree, result) in runs.iter() {
        for t in &result.trace {
            prompts += 1;
            let (n, bad) = audit_code_blocks(tree, &t.prompt);
            blocks += n;
            violations.extend(bad);
            let (n, bad) = audit_hops(tree, &t.prompt);
            hops += n;
            violations.extend(bad);
        }
        if let Some(reason) = &result.failure_reason {
            if reason.starts_with("LeashViolation") {
                violations.push(reason.clone());
            }
        }
    }
    check(violations.is_empty(), || format!("{} violations: {:?}", violations.len(), &violations[..violations.len().min(5)]))?;
    check(blocks > 0 && hops > 0, || format!("audit saw {blocks} blocks and {hops} hops"))?;

    // The auditor must notice a one-character edit to quoted code.
    let (tree, result) = &runs[0];
    let tampered = result.trace[1].prompt.replacen("mod->get_string", "mod.get_string", 1);
    check(tampered != result.trace[1].prompt && !audit_code_blocks(tree, &tampered).1.is_empty(), || {
        "auditor missed a tampered block".into()
    })?;
    Ok(format!("{} runs, {prompts} prompts, {blocks} code blocks, {hops} dataflow hops, 0 violations", runs.len()))
}

// ---------------------------------------------------------------------------
// Service lifecycle

fn service_lifecycle() -> Outcome {
    use cmind_service::{bind, serve_app, AppState, GatewayFactory, ServiceConfig};

    let rt = tokio::runtime::Runtime::new().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig::new(dir.path(), LlmConfig::scripted(obs().join("replay.jsonl")));
    let archive = zip_dir(&obs().join("src"));
    let report = std::fs::read_to_string(obs().join("bug.txt")).unwrap();

    let start = |config: &ServiceConfig| {
        let config = config.clone();
        async move {
            let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
            let addr = listener.local_addr().unwrap();
            let state = AppState::start(&config, GatewayFactory::from_config(config.llm.clone())).unwrap();
            let (tx, rx) = tokio::sync::oneshot::channel::<()>();
            let task = tokio::spawn(serve_app(listener, state, async {
                let _ = rx.await;
            }));
            (format!("http://{addr}"), tx, task)
        }
    };

    rt.block_on(async {
        let client = reqwest::Client::new();
        let (base, stop, task) = start(&config).await;
        let form = reqwest::multipart::Form::new()
            .text("report", report)
            .part("source", reqwest::multipart::Part::bytes(archive).file_name("obs.zip"));
        let resp = client.post(format!("{base}/jobs")).multipart(form).send().await.unwrap();
        check(resp.status().as_u16() == 202, || format!("submit gave {}", resp.status()))?;
        let id = resp.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string();
        check(id.len() == 16 && id.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')), || {
            format!("bad id {id}")
        })?;

        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let s: Value = client.get(format!("{base}/jobs/{id}")).send().await.unwrap().json().await.unwrap();
            if s["status"] == "completed" {
                break;
            }
            check(s["status"] != "failed" && Instant::now() < deadline, || format!("job state {s}"))?;
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        let fetched = client.get(format!("{base}/jobs/{id}/result")).send().await.unwrap().text().await.unwrap();
        let result: LocalizationResult = serde_json::from_str(&fetched).unwrap();
        check(result.hypothesis.contains("ApplicationAudioCaptureToolbar::Init"), || "wrong hypothesis".into())?;
        let _ = stop.send(());
        task.await.unwrap().unwrap();

        let (base, stop, task) = start(&config).await;
        let again = client.get(format!("{base}/jobs/{id}/result")).send().await.unwrap();
        check(again.status().as_u16() == 200, || format!("after restart: {}", again.status()))?;
        check(again.text().await.unwrap() == fetched, || "result changed across restart".into())?;
        let _ = stop.send(());
        task.await.unwrap().unwrap();
        Ok(format!("job {id}: submit, poll, fetch, restart, fetch intact"))
    })
}

// ---------------------------------------------------------------------------

fn main() {
    // `cargo test -- --list` and filters are passed to every test binary.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("replay-fidelity", replay_fidelity),
        ("table-accounting", table_accounting),
        ("callgraph-oracle", callgraph_oracle),
        ("chain-oracle", chain_oracle),
        ("grammar-suite", grammar_suite),
        ("termination-and-caps", termination_and_caps),
        // Audits the pipeline runs made by every criterion above.
        ("no-fabrication-leash", no_fabrication),
        ("service-lifecycle", service_lifecycle),
    ];

    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
