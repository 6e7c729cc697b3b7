use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use super::{
    AnalysisKind, LocalizationResult, PipelineConfig, RunStatus, ToolEvent, TraceExchange,
    MAX_ENTRY_POINTS,
};
use crate::analyzer::{
    build_callgraph, collect_code_blocks, dataflow_paths, enumerate_call_chains, resolve_blocks,
    AnalysisError, BlockRequest, CallChain, CallGraph, CodeBlockSet, DataflowPath, Direction,
};
use crate::corpus::lexer::is_ident_byte;
use crate::corpus::{extract_functions, lookup_file, lookup_function, FunctionIndex, SourceTree};
use crate::llm::{LlmError, LlmGateway, Session, Stage};
use crate::prompts::{
    parse_analysis_choice, parse_chain_selection, parse_entry_response, parse_reasoner_response,
    render_dataflow_paths, with_notes, AnalysisChoice, BugReport, EntryPoints, PromptError,
    PromptKit, ReasonerOutput, TemplateKind,
};

#[derive(Debug, thiserror::Error)]
enum StageError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Leash(String),
    #[error("{0}")]
    NoCode(String),
}

impl StageError {
    fn reason(&self) -> String {
        let kind = match self {
            StageError::Llm(e) => e.kind(),
            StageError::Prompt(e) => e.kind(),
            StageError::Analysis(e) => e.kind(),
            StageError::Leash(_) => "LeashViolation",
            StageError::NoCode(_) => "NoEntryPoints",
        };
        format!("{kind}: {self}")
    }
}

/// Runs the whole pipeline with the built-in templates. Never panics on
/// bad model output; every failure ends up in the result's status.
pub fn run(
    report: &BugReport,
    tree: &SourceTree,
    config: &PipelineConfig,
    gateway: &LlmGateway,
) -> LocalizationResult {
    run_with_kit(report, tree, config, gateway, &PromptKit::builtin())
}

pub fn run_with_kit(
    report: &BugReport,
    tree: &SourceTree,
    config: &PipelineConfig,
    gateway: &LlmGateway,
    kit: &PromptKit,
) -> LocalizationResult {
    if let Err(e) = config.validate() {
        return LocalizationResult::failed(format!("ConfigInvalid: {e}"));
    }
    let index = extract_functions(tree);
    let mut run = Run {
        report,
        tree,
        index,
        kit,
        gateway,
        config,
        sessions: BTreeMap::new(),
        trace: Vec::new(),
        tool_events: Vec::new(),
        warnings: Vec::new(),
        entry: EntryPoints::default(),
        known: Vec::new(),
        fulfilled: BTreeSet::new(),
        analysis_kind: None,
        chains: Vec::new(),
        dataflow: Vec::new(),
        dataflow_pair: None,
        iterations: 0,
    };
    run.tool(
        "extract_functions",
        &tree.paths().collect::<Vec<_>>().join("\n"),
        &run.index.names().collect::<Vec<_>>().join("\n"),
        format!("{} functions in {} files", run.index.len(), tree.len()),
    );
    for w in run.index.warnings().to_vec() {
        let at = w.line.map(|l| format!(":{l}")).unwrap_or_default();
        run.warn(format!("{}{at}: {}", w.file_path, w.message));
    }
    let outcome = run.execute();
    run.finish(outcome)
}

struct Run<'a> {
    report: &'a BugReport,
    tree: &'a SourceTree,
    index: FunctionIndex,
    kit: &'a PromptKit,
    gateway: &'a LlmGateway,
    config: &'a PipelineConfig,
    sessions: BTreeMap<Stage, Session>,
    trace: Vec<TraceExchange>,
    tool_events: Vec<ToolEvent>,
    warnings: Vec<String>,
    entry: EntryPoints,
    /// Code known to the reasoner, in the order it was learned.
    known: Vec<BlockRequest>,
    fulfilled: BTreeSet<String>,
    analysis_kind: Option<AnalysisKind>,
    chains: Vec<CallChain>,
    dataflow: Vec<DataflowPath>,
    dataflow_pair: Option<(String, String)>,
    iterations: usize,
}

fn last_segment(name: &str) -> &str {
    name.rsplit("::").next().unwrap_or(name)
}

fn names_match(a: &str, b: &str) -> bool {
    a == b || last_segment(a) == last_segment(b)
}

fn contains_token(text: &str, token: &str) -> bool {
    let bytes = text.as_bytes();
    text.match_indices(token).any(|(at, _)| {
        let before = at.checked_sub(1).map(|i| bytes[i]);
        let after = bytes.get(at + token.len()).copied();
        !before.is_some_and(is_ident_byte) && !after.is_some_and(is_ident_byte)
    })
}

static REPORT_IDENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z_~][A-Za-z0-9_]*(?:::[A-Za-z_~][A-Za-z0-9_]*)*").expect("static regex")
});

impl Run<'_> {
    fn warn(&mut self, message: String) {
        if !self.warnings.contains(&message) {
            self.warnings.push(message);
        }
    }

    fn tool(&mut self, tool: &str, inputs: &str, outputs: &str, detail: String) {
        self.tool_events.push(ToolEvent::new(tool, inputs, outputs, detail));
    }

    fn execute(&mut self) -> Result<(RunStatus, ReasonerOutput), StageError> {
        self.collect_entry_points()?;
        self.run_static_analysis()?;
        self.reason_loop()
    }

    fn send(&mut self, stage: Stage, prompt: &str) -> Result<String, StageError> {
        let gateway = self.gateway;
        let session = self
            .sessions
            .entry(stage)
            .or_insert_with(|| gateway.new_session(stage));
        let response = gateway.complete(session, prompt)?;
        self.trace.push(TraceExchange {
            stage,
            prompt: prompt.to_string(),
            response: response.clone(),
            parsed: String::new(),
        });
        Ok(response)
    }

    fn mark_parsed(&mut self, parsed: String) {
        if let Some(last) = self.trace.last_mut() {
            last.parsed = parsed;
        }
    }

    /// Sends `prompt` and parses the reply, re-asking with a correction
    /// line up to `max_reasks` times.
    fn ask<T: Serialize>(
        &mut self,
        stage: Stage,
        kind: TemplateKind,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, PromptError>,
    ) -> Result<T, StageError> {
        let mut current = prompt.to_string();
        let mut reasks = 0;
        loop {
            let response = self.send(stage, &current)?;
            match parse(&response) {
                Ok(value) => {
                    self.mark_parsed(serde_json::to_string(&value).expect("serializable"));
                    return Ok(value);
                }
                Err(e) => {
                    self.mark_parsed(format!("error: {}: {e}", e.kind()));
                    if reasks == self.config.max_reasks {
                        return Err(e.into());
                    }
                    reasks += 1;
                    self.warn(format!("{stage}: reply could not be parsed ({}), asked again", e.kind()));
                    current = with_notes(prompt, &[kind.correction_note().to_string()]);
                }
            }
        }
    }

    /// Known code fitted to `budget`, checked to be verbatim source.
    fn known_blocks(&mut self, budget: usize) -> Result<CodeBlockSet, StageError> {
        let collected = collect_code_blocks(self.tree, &self.index, &self.known, budget);
        if collected.set.truncated {
            self.warn(format!(
                "code exceeded the {budget}-character budget and was truncated"
            ));
        }
        self.verified(collected.set)
    }

    fn verified(&self, set: CodeBlockSet) -> Result<CodeBlockSet, StageError> {
        match set.blocks.iter().find(|b| !b.is_verbatim_in(self.tree)) {
            Some(b) => Err(StageError::Leash(format!(
                "code block {} does not match {}",
                b.label, b.file_path
            ))),
            None => Ok(set),
        }
    }

    fn collect_entry_points(&mut self) -> Result<(), StageError> {
        let listing: Vec<String> = self.tree.code_paths().into_iter().map(String::from).collect();
        let prompt = self.kit.render_entry_prompt(self.report, &listing);
        let entry = self.ask(
            Stage::EntryCollector,
            TemplateKind::EntryPoints,
            &prompt,
            parse_entry_response,
        )?;

        let mut requests = Vec::new();
        let mut resolved = Vec::new();
        for m in &entry.methods {
            if lookup_function(&self.index, m).is_empty() {
                self.warn(format!("entry method {m} is not defined in the source tree"));
            } else {
                requests.push(BlockRequest::Function(m.clone()));
                self.fulfilled.insert(m.clone());
                resolved.push(m.clone());
            }
        }
        for f in &entry.files {
            match lookup_file(self.tree, f) {
                Ok(Some(file)) => {
                    requests.push(BlockRequest::File(file.path.clone()));
                    resolved.push(file.path.clone());
                }
                Ok(None) => self.warn(format!("entry file {f} is not in the source tree, dropped")),
                Err(e) => self.warn(format!("entry file {f} dropped: {e}")),
            }
        }
        self.tool(
            "resolve_entry_points",
            &serde_json::to_string(&entry).expect("serializable"),
            &resolved.join("\n"),
            format!("{} of {} resolved", resolved.len(), entry.methods.len() + entry.files.len()),
        );
        if requests.is_empty() {
            requests = self.fallback_requests(&entry);
            if requests.is_empty() {
                return Err(StageError::NoCode(
                    "no entry method or file could be found in the source tree".into(),
                ));
            }
            let labels: Vec<&str> = requests.iter().map(BlockRequest::label).collect();
            self.warn(format!("entry points did not resolve, using {}", labels.join(", ")));
        }
        self.entry = entry;
        self.known = requests;
        Ok(())
    }

    /// Files whose code mentions an entry method, or else functions of the
    /// index that the report names.
    fn fallback_requests(&mut self, entry: &EntryPoints) -> Vec<BlockRequest> {
        let mut out: Vec<BlockRequest> = Vec::new();
        for m in &entry.methods {
            let short = last_segment(m);
            for f in self.tree.files() {
                if out.len() == MAX_ENTRY_POINTS {
                    break;
                }
                let req = BlockRequest::File(f.path.clone());
                if f.is_code() && contains_token(&f.content, short) && !out.contains(&req) {
                    out.push(req);
                }
            }
        }
        if out.is_empty() {
            for m in REPORT_IDENT.find_iter(self.report.text()) {
                if out.len() == MAX_ENTRY_POINTS {
                    break;
                }
                let req = BlockRequest::Function(m.as_str().to_string());
                if self.index.contains_name(m.as_str()) && !out.contains(&req) {
                    self.fulfilled.insert(m.as_str().to_string());
                    out.push(req);
                }
            }
        }
        let labels: Vec<&str> = out.iter().map(BlockRequest::label).collect();
        self.tool(
            "entry_fallback",
            &serde_json::to_string(entry).expect("serializable"),
            &labels.join("\n"),
            format!("{} fallback block(s)", out.len()),
        );
        out
    }

    /// Names offered as data-flow sources: resolved entry methods, or the
    /// functions defined in entry files.
    fn offered_function_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for req in &self.known {
            if let BlockRequest::Function(n) = req {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        if names.is_empty() {
            for req in &self.known {
                if let BlockRequest::File(p) = req {
                    for f in self.index.in_file(p) {
                        if !names.contains(&f.qualified_name) {
                            names.push(f.qualified_name.clone());
                        }
                    }
                }
            }
        }
        names
    }

    fn run_static_analysis(&mut self) -> Result<(), StageError> {
        let known = self.known_blocks(self.config.code_budget)?;
        let names = self.offered_function_names();
        let prompt = self.kit.render_analysis_choice_prompt(self.report, &known, &names);
        let choice = self.ask(
            Stage::AnalysisSelector,
            TemplateKind::AnalysisChoice,
            &prompt,
            parse_analysis_choice,
        )?;
        let graph = build_callgraph(&self.index);
        self.tool(
            "build_callgraph",
            &self.index.names().collect::<Vec<_>>().join("\n"),
            &graph.render_edge_list(),
            format!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len()),
        );

        if let AnalysisChoice::Dataflow { source, sink } = &choice {
            if self.try_dataflow(&graph, &names, source, sink) {
                return Ok(());
            }
        }
        self.analysis_kind = Some(AnalysisKind::Callgraph);
        self.select_chains(&graph, &known)
    }

    /// Returns false when data-flow mode has to give way to the call graph.
    fn try_dataflow(&mut self, graph: &CallGraph, names: &[String], source: &str, sink: &str) -> bool {
        if !names.iter().any(|n| names_match(n, source)) {
            self.warn(format!(
                "data flow source {source} is not one of the offered methods, using call graph analysis"
            ));
            return false;
        }
        let result = dataflow_paths(&self.index, graph, source, sink, self.config.max_dataflow_paths);
        let outputs = match &result {
            Ok(paths) => paths.iter().map(DataflowPath::render).collect::<Vec<_>>().join("\n"),
            Err(e) => e.to_string(),
        };
        self.tool(
            "dataflow_paths",
            &format!("{source}\n{sink}"),
            &outputs,
            match &result {
                Ok(p) => format!("{} path(s)", p.len()),
                Err(e) => format!("{}: {e}", e.kind()),
            },
        );
        match result {
            Ok(paths) if !paths.is_empty() => {
                self.analysis_kind = Some(AnalysisKind::Dataflow);
                self.dataflow = paths;
                self.dataflow_pair = Some((source.to_string(), sink.to_string()));
                true
            }
            Ok(_) => {
                self.warn(format!(
                    "no data flow from {source} to {sink}, falling back to call graph analysis"
                ));
                false
            }
            Err(e) => {
                self.warn(format!(
                    "data flow analysis failed ({}: {e}), falling back to call graph analysis",
                    e.kind()
                ));
                false
            }
        }
    }

    fn chain_roots(&self) -> Vec<String> {
        let mut roots = BTreeSet::new();
        for req in &self.known {
            if let BlockRequest::Function(n) = req {
                for f in lookup_function(&self.index, n) {
                    roots.insert(f.qualified_name.clone());
                }
            }
        }
        if roots.is_empty() {
            for req in &self.known {
                if let BlockRequest::File(p) = req {
                    roots.extend(self.index.in_file(p).iter().map(|f| f.qualified_name.clone()));
                }
            }
        }
        roots.into_iter().collect()
    }

    fn select_chains(&mut self, graph: &CallGraph, known: &CodeBlockSet) -> Result<(), StageError> {
        let roots = self.chain_roots();
        if roots.is_empty() {
            self.warn("no functions to start call chains from".into());
            return Ok(());
        }
        let depth = self.config.max_chain_depth;
        let cap = self.config.max_chains;
        let mut offered: Vec<CallChain> = Vec::new();
        let mut truncated = false;
        for direction in [Direction::Forward, Direction::Backward] {
            let e = enumerate_call_chains(graph, &roots, direction, depth, cap)?;
            truncated |= e.truncated;
            offered.extend(e.chains.into_iter().filter(|c| c.len() > 1));
        }
        if offered.len() > cap {
            offered.truncate(cap);
            truncated = true;
        }
        if offered.is_empty() {
            offered = roots
                .iter()
                .map(|r| CallChain::new(vec![r.clone()], Direction::Forward))
                .collect();
        }
        if truncated {
            self.warn(format!("call chains were capped at {cap}"));
        }
        let listing: Vec<String> = offered.iter().map(CallChain::to_string).collect();
        self.tool(
            "enumerate_call_chains",
            &roots.join("\n"),
            &listing.join("\n"),
            format!("{} chain(s) from {} root(s), depth {depth}", offered.len(), roots.len()),
        );

        let prompt = self.kit.render_chain_selection_prompt(&offered, self.report, known);
        let response = self.send(Stage::ChainSelector, &prompt)?;
        let selection = parse_chain_selection(&response, &offered);
        self.mark_parsed(serde_json::to_string(&selection.chains).expect("serializable"));
        for w in selection.warnings {
            self.warn(format!("chain_selector: {w}"));
        }
        self.chains = selection.chains;
        Ok(())
    }

    /// Rendered `{callmethods}` and `{path_to_explore}` values.
    fn reasoner_context(&mut self, known: &CodeBlockSet) -> Result<(String, String), StageError> {
        if let Some((source, sink)) = &self.dataflow_pair {
            return Ok((render_dataflow_paths(&self.dataflow), format!("{source} -> {sink}")));
        }
        if self.chains.is_empty() {
            return Ok(("(none)".into(), "(none)".into()));
        }
        let mut requests: Vec<BlockRequest> = Vec::new();
        for c in &self.chains {
            for f in c.functions() {
                let r = BlockRequest::Function(f.clone());
                if !requests.contains(&r) {
                    requests.push(r);
                }
            }
        }
        let spans: BTreeSet<(&str, usize, usize)> = known
            .blocks
            .iter()
            .map(|b| (b.file_path.as_str(), b.start_line, b.end_line))
            .collect();
        let fresh: Vec<_> = resolve_blocks(self.tree, &self.index, &requests)
            .blocks
            .into_iter()
            .filter(|b| !spans.contains(&(b.file_path.as_str(), b.start_line, b.end_line)))
            .collect();
        let room = self.config.code_budget.saturating_sub(known.total_chars());
        let set = CodeBlockSet::fit(&fresh, room);
        if set.truncated {
            self.warn("call chain code exceeded the remaining budget and was truncated".into());
        }
        let set = self.verified(set)?;
        let chains: Vec<String> = self.chains.iter().map(CallChain::to_string).collect();
        Ok((set.render(), chains.join("\n")))
    }

    fn reason_loop(&mut self) -> Result<(RunStatus, ReasonerOutput), StageError> {
        let mut notes: Vec<String> = Vec::new();
        let mut strategy = None;
        let mut with_hypothesis: Option<ReasonerOutput> = None;
        loop {
            self.iterations += 1;
            let known = self.known_blocks(self.config.code_budget)?;
            let (callmethods, path) = self.reasoner_context(&known)?;
            let prompt = with_notes(
                &self
                    .kit
                    .render_reasoner_prompt(&known, &callmethods, &path, self.report),
                &notes,
            );
            let mut out = self.ask(
                Stage::Reasoner,
                TemplateKind::Reasoner,
                &prompt,
                parse_reasoner_response,
            )?;
            if let (Some(before), Some(now)) = (strategy, out.strategy) {
                if before != now {
                    self.warn(format!(
                        "reasoner switched strategy from {} to {} in iteration {}",
                        crate::prompts::Strategy::label(before),
                        now.label(),
                        self.iterations
                    ));
                }
            }
            strategy = out.strategy.or(strategy);
            out.strategy = strategy;

            if out.missing_methods.is_empty() {
                return Ok((RunStatus::Completed, out));
            }
            if !out.hypothesis.is_empty() {
                with_hypothesis = Some(out.clone());
            }
            if self.iterations >= self.config.max_iterations {
                self.warn(format!(
                    "reasoning stopped after {} iterations with methods still requested",
                    self.iterations
                ));
                let best = if out.hypothesis.is_empty() {
                    with_hypothesis.unwrap_or(out)
                } else {
                    out
                };
                return Ok((RunStatus::Inconclusive, best));
            }
            notes = self.fulfill(&out.missing_methods);
        }
    }

    /// Adds newly requested functions to the known code. Names already
    /// supplied or absent from the tree come back as `NOT FOUND` lines.
    fn fulfill(&mut self, names: &[String]) -> Vec<String> {
        let mut notes = Vec::new();
        let mut added = Vec::new();
        for name in names {
            if self.fulfilled.contains(name) || lookup_function(&self.index, name).is_empty() {
                notes.push(format!("NOT FOUND: {name}"));
                continue;
            }
            self.fulfilled.insert(name.clone());
            self.known.push(BlockRequest::Function(name.clone()));
            added.push(name.as_str());
        }
        let detail = format!("{} added, {} not found", added.len(), notes.len());
        let outputs = added.join("\n");
        self.tool("lookup_function", &names.join("\n"), &outputs, detail);
        notes
    }

    fn summarize(&mut self, out: &ReasonerOutput) -> String {
        let prompt = self.kit.render_summary_prompt(self.report, out);
        match self.send(Stage::Summarizer, &prompt) {
            Ok(reply) if !reply.trim().is_empty() => {
                self.mark_parsed("summary".into());
                reply.trim().to_string()
            }
            Ok(_) => {
                self.mark_parsed("error: empty summary".into());
                self.warn("summarizer returned an empty reply, using the hypothesis".into());
                out.hypothesis.clone()
            }
            Err(e) => {
                self.warn(format!("summarizer failed ({}), using the hypothesis", e.reason()));
                out.hypothesis.clone()
            }
        }
    }

    fn finish(mut self, outcome: Result<(RunStatus, ReasonerOutput), StageError>) -> LocalizationResult {
        let (status, output, summary, failure) = match outcome {
            Ok((status, out)) => {
                let summary = if out.hypothesis.is_empty() {
                    String::new()
                } else {
                    self.summarize(&out)
                };
                (status, Some(out), summary, None)
            }
            Err(e) => (RunStatus::Failed, None, String::new(), Some(e.reason())),
        };
        let output = output.unwrap_or(ReasonerOutput {
            strategy: None,
            steps: String::new(),
            hypothesis: String::new(),
            missing_methods: Vec::new(),
        });
        LocalizationResult {
            id: None,
            status,
            hypothesis: output.hypothesis,
            strategy: output.strategy,
            reasoning_steps: output.steps,
            summary,
            entry_points: self.entry,
            analysis_kind: self.analysis_kind,
            selected_chains: self.chains.iter().map(CallChain::to_string).collect(),
            iterations: self.iterations,
            warnings: self.warnings,
            failure_reason: failure,
            trace: self.trace,
            tool_events: self.tool_events,
        }
    }
}
