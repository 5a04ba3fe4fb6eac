//! Planning, reflection and knowledge patterns built from after-query hooks,
//! plus the episode loop that drives an agent graph in an environment.

pub mod action;
pub mod branch;
pub mod episode;
pub mod gate;
pub mod knowledge;
pub mod skills;

pub use action::{emit_action, normalize_action, ActionCommand, ActionEmitHook, ActionError};
pub use branch::{conditional_branch, BranchError, ConditionalBranch};
pub use episode::{
    feedback_node, run_episode, EnvError, Environment, EpisodeConfig, EpisodeError, EpisodeFailure, EpisodeResult,
    StepOutcome,
};
pub use gate::{gate_branch, GateArg, GateBranchHook, GateDecision, GateError, DEFAULT_TRIGGERS, GATE_FIELDS};
pub use knowledge::{kb_commit, unknown_merge, KbAddHook, KnowledgeError, KnowledgeState, UnknownMergeHook, KB_FLAGS};
pub use skills::{build_feedback_context, feedback_due, SkillEntry, SkillSelectHook};

use crate::runtime::HookRegistry;

pub(crate) fn register_hooks(r: &mut HookRegistry) {
    r.register("gate_branch", GateBranchHook);
    r.register("kb_add", KbAddHook);
    r.register("unknown_merge", UnknownMergeHook);
    r.register("action_emit", ActionEmitHook);
    r.register("skill_select", SkillSelectHook);
}
