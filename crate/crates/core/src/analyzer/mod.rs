//! Static analysis tools: call graph, call-chain enumeration, def-use
//! dataflow paths and budgeted code-block collection.
//!
//! Everything here is a pure function of immutable inputs.

mod blocks;
mod callgraph;
mod chains;
mod dataflow;

pub use blocks::{
    collect_code_blocks, resolve_blocks, BlockRequest, CodeBlock, CodeBlockCollection, CodeBlockSet,
    ResolvedBlocks, DEFAULT_CODE_BUDGET, TRUNCATION_MARKER,
};
pub use callgraph::{build_callgraph, CallGraph, NON_CALL_KEYWORDS};
pub use chains::{
    enumerate_call_chains, parse_call_chain, render_call_chain, CallChain, ChainEnumeration, Direction,
    DEFAULT_MAX_CHAINS, DEFAULT_MAX_DEPTH,
};
pub use dataflow::{dataflow_paths, DataflowPath, DataflowStep};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{0} is not a function in the call graph")]
    UnknownRoot(String),
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    #[error("{0}")]
    MalformedChain(String),
    #[error("no function named {0}")]
    SourceNotFound(String),
}

impl AnalysisError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisError::UnknownRoot(_) => "UnknownRoot",
            AnalysisError::InvalidDepth => "InvalidDepth",
            AnalysisError::MalformedChain(_) => "MalformedChain",
            AnalysisError::SourceNotFound(_) => "SourceNotFound",
        }
    }
}
