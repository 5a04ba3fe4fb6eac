//! Standard-library companion to `promptdag-core`: graph, schema, trace and
//! backend configuration files, an HTTP chat-completions client, environments
//! over framed stdio, the interactive builder and the `promptdag` CLI.

pub mod builder;
pub mod cli;
pub mod config;
pub mod framed;
pub mod graph_file;
pub mod http;
pub mod run;
pub mod schema_file;
pub mod trace_file;

pub use promptdag_core as core;
