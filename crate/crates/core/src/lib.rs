//! Core of the cmind bug localization agent.

pub mod analyzer;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod prompts;
