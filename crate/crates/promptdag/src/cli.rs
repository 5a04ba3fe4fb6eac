//! The `promptdag` command line.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use promptdag_core::env::MiniForage;
use promptdag_core::HookRegistry;

use crate::builder::{BuilderSession, Wizard};
use crate::framed;
use crate::graph_file::GraphFile;
use crate::run::{self, EnvSpec, Exit, RunOptions};
use crate::schema_file::SchemaFile;
use crate::trace_file::{self, TraceFilter};

#[derive(Debug, Parser)]
#[command(name = "promptdag", version, about = "Build, validate, run and inspect prompt graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create or edit a graph file interactively.
    Build {
        path: PathBuf,
    },
    /// Run one episode of a graph agent in an environment.
    Run {
        #[arg(long)]
        graph: PathBuf,
        /// miniforage[:seed] or exec:<command speaking the framed protocol>.
        #[arg(long, default_value = "miniforage:0")]
        env: EnvSpec,
        /// Backend configuration (profiles, prices, limits).
        #[arg(long)]
        backend: Option<PathBuf>,
        /// Scripted responses; replaces the live backend.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Overrides for the episode loop's node names.
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_steps: u64,
        /// Fail on unresolved `$db…$` keys instead of leaving them empty.
        #[arg(long)]
        strict_templates: bool,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        summary_out: Option<PathBuf>,
        /// Final database snapshot.
        #[arg(long)]
        db_out: Option<PathBuf>,
    },
    /// Check a graph file. Uses `<name>.schema.json` next to it if present.
    Validate {
        graph: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Show a trace file node by node.
    Trace {
        file: PathBuf,
        #[arg(long)]
        node: Option<String>,
        #[arg(long)]
        pass: Option<u64>,
        #[arg(long)]
        step: Option<u64>,
    },
    /// Serve a MiniForage world over framed stdin/stdout.
    ServeEnv {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn validate(graph: &Path, schema: Option<&Path>) -> Exit {
    let file = match GraphFile::load(graph) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return Exit::Validation;
        }
    };
    let schema_file = match schema {
        Some(p) => SchemaFile::load(p).map(Some),
        None => SchemaFile::load_sibling(graph),
    };
    let db_schema = match schema_file.map(|s| s.map(|s| s.schema())) {
        Ok(Some(Ok(s))) => Some(s),
        Ok(None) => None,
        Ok(Some(Err(e))) => {
            eprintln!("schema: {e}");
            return Exit::Validation;
        }
        Err(e) => {
            eprintln!("{e}");
            return Exit::Validation;
        }
    };
    let report = promptdag_core::graph::validate_defs(&file.nodes, &HookRegistry::builtin(), db_schema.as_ref());
    if report.is_empty() {
        let edges: usize = file.nodes.iter().map(|n| n.deps.len()).sum();
        println!("ok: {} nodes, {edges} edges, no findings", file.nodes.len());
        Exit::Success
    } else {
        println!("{} finding(s):\n{report}", report.len());
        Exit::Validation
    }
}

fn build(path: &Path) -> Exit {
    let schema = match SchemaFile::load_sibling(path).map(|s| s.map(|s| s.schema())) {
        Ok(Some(Ok(s))) => Some(s),
        Ok(None) => None,
        Ok(Some(Err(e))) => {
            eprintln!("schema: {e}");
            return Exit::Validation;
        }
        Err(e) => {
            eprintln!("{e}");
            return Exit::Validation;
        }
    };
    let hooks = HookRegistry::builtin();
    let session = if path.exists() {
        GraphFile::load(path).map_err(|e| e.to_string()).and_then(|f| BuilderSession::open(f, hooks, schema).map_err(|e| e.to_string()))
    } else {
        Ok(BuilderSession::new(hooks, schema))
    };
    let mut session = match session {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return Exit::Validation;
        }
    };
    let stdin = io::stdin();
    match Wizard::new(stdin.lock(), io::stdout()).run(&mut session, path) {
        Ok(_) => Exit::Success,
        Err(e) => {
            eprintln!("{e}");
            Exit::Failure
        }
    }
}

fn trace(file: &Path, filter: TraceFilter) -> Exit {
    match run::read_trace_file(file) {
        Ok(traces) => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = io::stdout().lock().write_all(trace_file::render_view(&traces, &filter).as_bytes());
            Exit::Success
        }
        Err(e) => {
            eprintln!("{e}");
            Exit::Validation
        }
    }
}

fn run_cmd(opts: RunOptions) -> Exit {
    match run::execute(&opts) {
        Ok(outcome) => {
            let s = &outcome.summary;
            match &s.error {
                None => println!(
                    "completed {} step(s), reward {}, achievements [{}], {} tokens",
                    s.steps,
                    s.reward,
                    s.achievements.join(", "),
                    s.usage.tokens()
                ),
                Some(e) => {
                    eprintln!(
                        "failed after {} step(s): {}{}",
                        s.steps,
                        e.node.as_ref().map(|n| format!("node `{n}`: ")).unwrap_or_default(),
                        e.message
                    );
                    if e.message.contains("missing credentials") {
                        eprintln!("hint: set {} in the environment", crate::http::API_KEY_VAR);
                    }
                }
            }
            outcome.exit
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit()
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let exit = match cli.command {
        Command::Build { path } => build(&path),
        Command::Validate { graph, schema } => validate(&graph, schema.as_deref()),
        Command::Trace { file, node, pass, step } => trace(&file, TraceFilter { node, pass, step }),
        Command::ServeEnv { seed } => match framed::serve(&mut MiniForage::new(seed), io::stdin().lock(), io::stdout().lock()) {
            Ok(()) => Exit::Success,
            Err(e) => {
                let _ = writeln!(io::stderr(), "serve-env: {e}");
                Exit::Failure
            }
        },
        Command::Run {
            graph,
            env,
            backend,
            script,
            agent,
            max_steps,
            strict_templates,
            trace_out,
            summary_out,
            db_out,
        } => run_cmd(RunOptions {
            graph,
            env: Some(env),
            backend,
            script,
            agent,
            max_steps,
            strict_templates,
            trace_out,
            summary_out,
            db_out,
        }),
    };
    exit as i32
}
