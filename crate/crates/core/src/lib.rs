//! Text2SQL orchestration engine.
//!
//! Four agents — planner, generator, validator, checker — turn a natural
//! language question into an executable SQLite query through a pluggable
//! LLM gateway. Around the pipeline sit a benchmark loader, an
//! execution-based evaluation harness (EX/VES), and a gold-error audit
//! toolkit for benchmark quality work.

pub mod audit;
pub mod bench_io;
pub mod checker;
pub mod db;
mod error;
pub mod eval;
pub mod fixtures;
pub mod generator;
pub mod llm;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod schema;
pub mod validator;
pub mod sqlast;

pub use error::{Error, Result};
pub use schema::{DbSchema, SchemaSubset};
