//! Loading everything an episode needs and running it.

use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use promptdag_core::agent::{feedback_node, run_episode, EpisodeConfig, EpisodeError, EpisodeResult, Environment, KnowledgeState};
use promptdag_core::env::MiniForage;
use promptdag_core::template::TemplateMode;
use promptdag_core::{
    ChatBackend, Database, Graph, HookRegistry, NodeFailure, NodeId, PassError, Runtime, Script, ScriptedBackend,
    Usage, ValidationReport,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError};
use crate::framed::FramedEnv;
use crate::graph_file::{GraphFile, GraphFileError};
use crate::http::HttpBackend;
use crate::schema_file::{SchemaFile, SchemaFileError};
use crate::trace_file;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Failure = 1,
    Validation = 2,
    NodeFailure = 3,
    Backend = 4,
}

/// `miniforage`, `miniforage:<seed>` or `exec:<shell command>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSpec {
    MiniForage { seed: u64 },
    Exec(String),
}

impl FromStr for EnvSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "miniforage" => Ok(EnvSpec::MiniForage { seed: 0 }),
            Some(("miniforage", seed)) => {
                seed.parse().map(|seed| EnvSpec::MiniForage { seed }).map_err(|_| format!("bad seed `{seed}`"))
            }
            Some(("exec", cmd)) if !cmd.trim().is_empty() => Ok(EnvSpec::Exec(cmd.to_string())),
            _ => Err(format!("unknown environment `{s}`; expected miniforage[:seed] or exec:<command>")),
        }
    }
}

impl EnvSpec {
    pub fn open(&self) -> Result<Box<dyn Environment>, String> {
        match self {
            EnvSpec::MiniForage { seed } => Ok(Box::new(MiniForage::new(*seed))),
            EnvSpec::Exec(cmd) => FramedEnv::spawn(cmd).map(|e| Box::new(e) as Box<dyn Environment>).map_err(|e| e.to_string()),
        }
    }
}

/// Optional overrides of the episode loop's node names and limits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentFile {
    pub actor_node: Option<String>,
    pub obs_summary_nodes: Option<Vec<String>>,
    pub plan_summary_node: Option<String>,
    pub action_summary_node: Option<String>,
    pub history_window: Option<usize>,
    pub max_repeats: Option<u32>,
    /// Set to false to disable per-skill feedback.
    pub feedback: Option<bool>,
}

impl AgentFile {
    pub fn apply(&self, config: &mut EpisodeConfig) {
        if let Some(a) = &self.actor_node {
            config.actor_node = a.as_str().into();
        }
        if let Some(list) = &self.obs_summary_nodes {
            config.obs_summary_nodes = list.iter().map(|s| NodeId::from(s.as_str())).collect();
        }
        if let Some(p) = &self.plan_summary_node {
            config.plan_summary_node = p.as_str().into();
        }
        if let Some(a) = &self.action_summary_node {
            config.action_summary_node = a.as_str().into();
        }
        if let Some(w) = self.history_window {
            config.history_window = w;
        }
        if let Some(m) = self.max_repeats {
            config.max_repeats = m;
        }
        if let Some(f) = self.feedback {
            config.feedback = f.then(feedback_node);
        }
    }
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Graph(#[from] GraphFileError),
    #[error(transparent)]
    Schema(#[from] SchemaFileError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {detail}")]
    File { path: PathBuf, detail: String },
    #[error("graph is not valid:\n{0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Usage(String),
    #[error("environment: {0}")]
    Env(String),
    /// Writing a requested output failed.
    #[error("cannot write {path}: {detail}")]
    Output { path: PathBuf, detail: String },
}

impl SetupError {
    pub fn exit(&self) -> Exit {
        match self {
            SetupError::Env(_) | SetupError::Output { .. } => Exit::Failure,
            _ => Exit::Validation,
        }
    }
}

/// A graph file with its sibling schema, validated against `hooks`.
pub struct LoadedGraph {
    pub graph: Graph,
    pub schema: Option<SchemaFile>,
}

pub fn load_graph(path: &Path, hooks: &HookRegistry) -> Result<LoadedGraph, SetupError> {
    let file = GraphFile::load(path)?;
    let schema = SchemaFile::load_sibling(path)?;
    let db_schema = schema.as_ref().map(SchemaFile::schema).transpose().map_err(|e| SetupError::File {
        path: SchemaFile::sibling_of(path),
        detail: e.to_string(),
    })?;
    let report = promptdag_core::graph::validate_defs(&file.nodes, hooks, db_schema.as_ref());
    if !report.is_empty() {
        return Err(SetupError::Invalid(report));
    }
    let graph = file.to_graph().map_err(|e| SetupError::File { path: path.into(), detail: e.to_string() })?;
    Ok(LoadedGraph { graph, schema })
}

pub fn load_script(path: &Path) -> Result<Script, SetupError> {
    let text = fs::read_to_string(path).map_err(|e| SetupError::File { path: path.into(), detail: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| SetupError::File { path: path.into(), detail: e.to_string() })
}

pub fn load_agent_file(path: &Path) -> Result<AgentFile, SetupError> {
    let text = fs::read_to_string(path).map_err(|e| SetupError::File { path: path.into(), detail: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| SetupError::File { path: path.into(), detail: e.to_string() })
}

/// Episode settings: schema defaults, then agent overrides.
pub fn episode_config(schema: Option<&SchemaFile>, agent: Option<&AgentFile>, max_steps: u64) -> EpisodeConfig {
    let mut config = EpisodeConfig { max_steps, ..Default::default() };
    if let Some(s) = schema {
        config.defaults = s.defaults.clone();
    }
    if let Some(a) = agent {
        a.apply(&mut config);
    }
    config
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub message: String,
}

/// What `run` writes to `--summary-out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    pub steps: u64,
    pub reward: f64,
    pub done: bool,
    pub achievements: Vec<String>,
    pub knowledge: KnowledgeState,
    pub usage: Usage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorSummary>,
}

/// Maps an episode error to an exit code and its attribution.
pub fn classify(error: &EpisodeError, config: &EpisodeConfig) -> (Exit, ErrorSummary) {
    let summary = |kind: &str, node: Option<&NodeId>| ErrorSummary {
        kind: kind.into(),
        node: node.map(|n| n.to_string()),
        message: error.to_string(),
    };
    match error {
        EpisodeError::Pass(PassError::NodeEvaluationFailed { node, cause: NodeFailure::Backend(_) }) => {
            (Exit::Backend, summary("BackendError", Some(node)))
        }
        EpisodeError::Pass(PassError::NodeEvaluationFailed { node, .. }) => (Exit::NodeFailure, summary("NodeEvaluationFailed", Some(node))),
        EpisodeError::Pass(_) => (Exit::NodeFailure, summary("PassError", None)),
        EpisodeError::Action(_) | EpisodeError::MissingActorOutput(_) => (Exit::NodeFailure, summary("ActionError", Some(&config.actor_node))),
        EpisodeError::Env(_) => (Exit::Failure, summary("EnvError", None)),
        EpisodeError::Db(_) => (Exit::Failure, summary("DbError", None)),
        EpisodeError::Knowledge(_) => (Exit::Failure, summary("KnowledgeError", None)),
    }
}

pub struct Outcome {
    pub exit: Exit,
    pub result: EpisodeResult,
    pub summary: RunSummary,
    pub db: Database,
}

/// Runs one episode with whatever backend the runtime holds.
pub fn run_loaded<B: ChatBackend>(
    loaded: &mut LoadedGraph,
    env: &mut dyn Environment,
    runtime: &mut Runtime<B>,
    config: &EpisodeConfig,
) -> Outcome {
    let mut db = Database::new();
    let (result, failure) = match run_episode(&mut loaded.graph, env, runtime, &mut db, config) {
        Ok(r) => (r, None),
        Err(f) => (f.result, Some(f.error)),
    };
    let (exit, error) = match &failure {
        None => (Exit::Success, None),
        Some(e) => {
            let (exit, s) = classify(e, config);
            (exit, Some(s))
        }
    };
    let summary = RunSummary {
        status: if failure.is_none() { "completed" } else { "failed" }.into(),
        steps: result.steps,
        reward: result.reward,
        done: result.done,
        achievements: result.achievements.clone(),
        knowledge: result.knowledge.clone(),
        usage: result.usage(),
        error,
    };
    Outcome { exit, result, summary, db }
}

/// Everything `promptdag run` accepts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub graph: PathBuf,
    pub env: Option<EnvSpec>,
    pub backend: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub agent: Option<PathBuf>,
    pub max_steps: u64,
    pub strict_templates: bool,
    pub trace_out: Option<PathBuf>,
    pub summary_out: Option<PathBuf>,
    pub db_out: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Loads, runs and writes the requested outputs.
pub fn execute(opts: &RunOptions) -> Result<Outcome, SetupError> {
    let hooks = HookRegistry::builtin();
    let mut loaded = load_graph(&opts.graph, &hooks)?;
    let agent = opts.agent.as_deref().map(load_agent_file).transpose()?;
    let config = episode_config(loaded.schema.as_ref(), agent.as_ref(), opts.max_steps);
    let backend_config = opts.backend.as_deref().map(BackendConfig::load).transpose()?.unwrap_or_default();
    let backend: Box<dyn ChatBackend> = match (&opts.script, &opts.backend) {
        (Some(script), _) => Box::new(ScriptedBackend::new(load_script(script)?)),
        (None, Some(_)) => Box::new(HttpBackend::from_env()),
        (None, None) => return Err(SetupError::Usage("either --script or --backend is required".into())),
    };
    let mut limits = backend_config.limits.unwrap_or_default();
    limits.template_mode = if opts.strict_templates { TemplateMode::Strict } else { TemplateMode::Lenient };
    limits.max_repeats = config.max_repeats;
    let mut runtime = Runtime::new(backend).with_hooks(hooks).with_prices(backend_config.prices.clone()).with_limits(limits);
    for p in &backend_config.profiles {
        runtime = runtime.with_profile(p.clone());
    }
    let env_spec = opts.env.clone().unwrap_or(EnvSpec::MiniForage { seed: 0 });
    let mut env = env_spec.open().map_err(SetupError::Env)?;
    let outcome = run_loaded(&mut loaded, env.as_mut(), &mut runtime, &config);

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: io::Error| SetupError::Output { path, detail: e.to_string() }
    };
    if let Some(path) = &opts.trace_out {
        let file = fs::File::create(path).map_err(io_err(path))?;
        trace_file::write_traces(io::BufWriter::new(file), &outcome.result.traces).map_err(io_err(path))?;
    }
    if let Some(path) = &opts.summary_out {
        write_json(path, &outcome.summary).map_err(io_err(path))?;
    }
    if let Some(path) = &opts.db_out {
        write_json(path, &outcome.db).map_err(io_err(path))?;
    }
    Ok(outcome)
}

/// Reads a trace file written by `run`.
pub fn read_trace_file(path: &Path) -> Result<Vec<promptdag_core::PassTrace>, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    trace_file::read_traces(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
}
