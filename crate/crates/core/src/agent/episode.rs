use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use super::action::{emit_action, ActionCommand, ActionError, ACTIONS_PATH};
use super::knowledge::KnowledgeState;
use super::skills::{build_feedback_context, feedback_due};
use crate::backend::Usage;
use crate::graph::{Graph, HookRef, NodeDef, NodeEvaluator, NodeId, PassError, PassOptions};
use crate::runtime::SEPARATOR;
use crate::store::{Database, DbError, DbPath, PassTrace, StepSummary};
use crate::template::render_value;
use crate::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("environment error: {0}")]
pub struct EnvError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: String,
    pub reward: f64,
    pub done: bool,
    #[serde(default)]
    pub info: Value,
}

/// A text environment driven one action at a time.
pub trait Environment {
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Result<String, EnvError>;
    /// Performs `action` up to `repeats` times.
    fn step(&mut self, action: &str, repeats: u32) -> Result<StepOutcome, EnvError>;
    fn actions(&self) -> Vec<String>;
    fn manual(&self) -> String;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn reset(&mut self) -> Result<String, EnvError> {
        (**self).reset()
    }
    fn step(&mut self, action: &str, repeats: u32) -> Result<StepOutcome, EnvError> {
        (**self).step(action, repeats)
    }
    fn actions(&self) -> Vec<String> {
        (**self).actions()
    }
    fn manual(&self) -> String {
        (**self).manual()
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self) -> Result<String, EnvError> {
        (**self).reset()
    }
    fn step(&mut self, action: &str, repeats: u32) -> Result<StepOutcome, EnvError> {
        (**self).step(action, repeats)
    }
    fn actions(&self) -> Vec<String> {
        (**self).actions()
    }
    fn manual(&self) -> String {
        (**self).manual()
    }
}

/// Per-pass node that critiques a skill from its step summaries.
pub fn feedback_node() -> NodeDef {
    NodeDef::new(
        "feedback",
        "$db.feedback.context$\n\nThe steps above were all taken under the skill '$db.feedback.skill$'. \
         Critique how well the skill has been executed and suggest one concrete improvement to its guide. \
         Answer in at most three sentences.",
    )
    .with_hook(HookRef::with_arg("pass_through", "feedback.current"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub max_steps: u64,
    /// Number of stored step summaries shown as recent history.
    pub history_window: usize,
    pub actor_node: NodeId,
    pub obs_summary_nodes: Vec<NodeId>,
    pub plan_summary_node: NodeId,
    pub action_summary_node: NodeId,
    /// Added for one pass after every third step under a skill; `None`
    /// disables skill feedback.
    pub feedback: Option<NodeDef>,
    pub max_repeats: u32,
    /// Written before the first step for keys not already present.
    pub defaults: Map<String, Value>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 100,
            history_window: 25,
            actor_node: "actor-final".into(),
            obs_summary_nodes: ["s-obs", "s-vit"].map(NodeId::from).to_vec(),
            plan_summary_node: "s-plan".into(),
            action_summary_node: "s-action".into(),
            feedback: Some(feedback_node()),
            max_repeats: 9,
            defaults: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub steps: u64,
    pub reward: f64,
    pub done: bool,
    /// In unlock order.
    pub achievements: Vec<String>,
    pub knowledge: KnowledgeState,
    pub actions: Vec<ActionCommand>,
    pub summaries: Vec<StepSummary>,
    pub traces: Vec<PassTrace>,
}

impl EpisodeResult {
    pub fn usage(&self) -> Usage {
        self.traces.iter().map(PassTrace::totals).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpisodeError {
    #[error("pass failed: {0}")]
    Pass(PassError),
    #[error(transparent)]
    Env(EnvError),
    #[error("actor output rejected: {0}")]
    Action(ActionError),
    #[error("actor node `{0}` produced no output")]
    MissingActorOutput(NodeId),
    #[error("database: {0}")]
    Db(DbError),
    #[error("knowledge invariant violated: {0}")]
    Knowledge(String),
}

/// An episode that stopped early, with everything recorded up to the error.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFailure {
    pub error: EpisodeError,
    pub result: EpisodeResult,
}

impl core::fmt::Display for EpisodeFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "episode stopped after {} step(s): {}", self.result.steps, self.error)
    }
}

impl core::error::Error for EpisodeFailure {}

fn put(db: &mut Database, path: &str, value: impl Into<Value>) -> Result<(), EpisodeError> {
    db.set_str(path, value).map_err(EpisodeError::Db)
}

fn render_history(db: &Database, window: usize) -> String {
    let recent = db.window_history(window);
    if recent.is_empty() {
        return "NA".into();
    }
    let parts: Vec<String> = recent.iter().map(StepSummary::render).collect();
    parts.join(SEPARATOR)
}

fn output_text(trace: &PassTrace, node: &NodeId) -> Option<String> {
    trace.entry(node.as_str()).map(|e| render_value(&e.parsed))
}

/// Runs the observe, pass, act loop until the environment is done or
/// `max_steps` passes have run. Step `T` runs pass `T`, starting at 1.
pub fn run_episode<E, V>(
    graph: &mut Graph,
    env: &mut V,
    evaluator: &mut E,
    db: &mut Database,
    config: &EpisodeConfig,
) -> Result<EpisodeResult, EpisodeFailure>
where
    E: NodeEvaluator + ?Sized,
    V: Environment + ?Sized,
{
    let mut result = EpisodeResult::default();
    match episode_loop(graph, env, evaluator, db, config, &mut result) {
        Ok(()) => {
            result.knowledge = KnowledgeState::from_db(db);
            Ok(result)
        }
        Err(error) => {
            result.knowledge = KnowledgeState::from_db(db);
            Err(EpisodeFailure { error, result })
        }
    }
}

fn episode_loop<E, V>(
    graph: &mut Graph,
    env: &mut V,
    evaluator: &mut E,
    db: &mut Database,
    config: &EpisodeConfig,
    result: &mut EpisodeResult,
) -> Result<(), EpisodeError>
where
    E: NodeEvaluator + ?Sized,
    V: Environment + ?Sized,
{
    if config.max_steps == 0 {
        return Ok(());
    }
    let actions = env.actions();
    let mut observation = env.reset().map_err(EpisodeError::Env)?;
    for (key, value) in &config.defaults {
        let path = DbPath::parse(key).map_err(EpisodeError::Db)?;
        if db.get(&path).is_none() {
            db.set(&path, value.clone()).map_err(EpisodeError::Db)?;
        }
    }
    put(db, "instruction_manual", env.manual())?;
    put(db, ACTIONS_PATH, Value::Array(actions.iter().cloned().map(Value::String).collect()))?;
    put(db, "allowed_actions", actions.join(", "))?;
    put(db, "observation.previous", "NA")?;
    put(db, "feedback.current", "NA")?;
    let mut pending_feedback: Option<String> = None;

    for step in 1..=config.max_steps {
        put(db, "observation.current", observation.clone())?;
        put(db, "recent_history", render_history(db, config.history_window))?;
        let mut options = PassOptions::new(step);
        if let (Some(skill), Some(node)) = (pending_feedback.take(), &config.feedback) {
            let context = build_feedback_context(db, &skill).map_err(EpisodeError::Db)?;
            put(db, "feedback.context", context)?;
            put(db, "feedback.skill", skill)?;
            options.temporary_nodes.push(node.clone());
        }
        let trace = match graph.run_pass(evaluator, db, options) {
            Ok(t) => t,
            Err(failure) => {
                result.traces.push(failure.trace);
                return Err(EpisodeError::Pass(failure.error));
            }
        };
        let actor = trace.entry(config.actor_node.as_str()).map(|e| e.parsed.clone());
        result.traces.push(trace);
        let trace = result.traces.last().expect("just pushed");
        let actor = actor.ok_or_else(|| EpisodeError::MissingActorOutput(config.actor_node.clone()))?;
        let command = emit_action(&actor, &actions, config.max_repeats).map_err(EpisodeError::Action)?;

        let obs_parts: Vec<String> = config.obs_summary_nodes.iter().filter_map(|n| output_text(trace, n)).collect();
        let summary = StepSummary {
            step,
            s_obs: if obs_parts.is_empty() { "NA".into() } else { obs_parts.join(" ") },
            s_plan: output_text(trace, &config.plan_summary_node).unwrap_or_else(|| "NA".into()),
            s_action: trace
                .entry(config.action_summary_node.as_str())
                .map_or_else(|| Value::String("NA".into()), |e| e.parsed.clone()),
            skill: db.lookup("skill.current").and_then(Value::as_str).map(String::from),
        };

        let outcome = env.step(&command.action, command.repeats).map_err(EpisodeError::Env)?;
        result.actions.push(command);
        result.steps = step;
        result.reward += outcome.reward;
        result.done = outcome.done;
        if let Some(unlocked) = outcome.info.get("unlocked").and_then(Value::as_array) {
            for a in unlocked.iter().filter_map(Value::as_str) {
                if !result.achievements.iter().any(|x| x == a) {
                    result.achievements.push(a.to_string());
                }
            }
        }
        db.push_summary(summary.clone()).map_err(EpisodeError::Db)?;
        result.summaries.push(summary.clone());
        KnowledgeState::from_db(db).check().map_err(EpisodeError::Knowledge)?;

        put(db, "observation.previous", core::mem::take(&mut observation))?;
        observation = outcome.observation;
        pending_feedback = summary.skill.filter(|s| feedback_due(db, s, step));
        if outcome.done {
            break;
        }
    }
    put(db, "observation.current", observation)?;
    Ok(())
}
