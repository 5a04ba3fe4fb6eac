use promptdag_core::agent::{run_episode, EpisodeConfig, EpisodeError};
use promptdag_core::env::MiniForage;
use promptdag_core::{
    Database, Graph, HookRef, NodeDef, NodeFailure, PassError, Runtime, Script, ScriptRule, ScriptedBackend,
};

fn gate(changed: bool) -> String {
    let yn = |b: bool| if b { "yes" } else { "no" };
    format!(
        r#"{{"unexpected_encounters":"no","mistake":"no","correction_planned":"no","confused":"no","top_subgoal_completed":"no","top_subgoal_changed":"{}","replan":"no"}}"#,
        yn(changed)
    )
}

/// observe -> gate -> plan -> actor-final; plan only runs when the gate fires.
fn small_agent() -> Graph {
    Graph::from_defs([
        NodeDef::new("s-obs", "$db.observation.current$\nSummarize the observation."),
        NodeDef::new("gate", "Decide.").with_deps(["s-obs"]).with_hook(HookRef::with_arg("gate_branch", "plan")),
        NodeDef::new("plan", "Plan.").with_deps(["gate"]),
        NodeDef::new("actor-final", "Act. Allowed: $db.allowed_actions$")
            .with_deps(["s-obs", "plan"])
            .with_hook(HookRef::new("action_emit")),
    ])
    .unwrap()
}

fn script(actions: &[&str]) -> Script {
    let mut rules = vec![
        ScriptRule::node("s-obs", "grass all around").fallback(),
        ScriptRule::node("gate", gate(false)).fallback(),
        ScriptRule::node("gate", gate(true)).at_pass(1),
        ScriptRule::node("plan", "walk west then chop"),
    ];
    for (i, a) in actions.iter().enumerate() {
        rules.push(ScriptRule::node("actor-final", format!(r#"{{"action":"{a}","repeats":1}}"#)).at_pass(i as u64 + 1));
    }
    Script::new(rules)
}

fn config(max_steps: u64) -> EpisodeConfig {
    EpisodeConfig {
        max_steps,
        obs_summary_nodes: vec!["s-obs".into()],
        plan_summary_node: "plan".into(),
        action_summary_node: "actor-final".into(),
        feedback: None,
        ..Default::default()
    }
}

#[test]
fn gated_agent_collects_wood_and_skips_planning_after_the_first_step() {
    let actions = ["move_west", "do"];
    let mut rt = Runtime::new(ScriptedBackend::new(script(&actions)));
    let mut db = Database::new();
    let result = run_episode(&mut small_agent(), &mut MiniForage::new(0), &mut rt, &mut db, &config(2)).unwrap();
    assert_eq!(result.steps, 2);
    assert_eq!(result.achievements, ["collect_wood"]);
    let ran: Vec<Vec<&str>> =
        result.traces.iter().map(|t| t.entries.iter().map(|e| e.node.as_str()).collect()).collect();
    assert_eq!(ran[0], ["s-obs", "gate", "plan", "actor-final"]);
    assert_eq!(ran[1], ["s-obs", "gate", "actor-final"]);
    assert_eq!(result.summaries[1].s_plan, "NA");
    // The second pass saw the first step in its history.
    assert!(db.lookup("recent_history").unwrap().as_str().unwrap().contains("Step 1:"));
}

#[test]
fn identical_inputs_give_identical_results() {
    let run = || {
        let mut rt = Runtime::new(ScriptedBackend::new(script(&["move_west", "do", "do"])));
        run_episode(&mut small_agent(), &mut MiniForage::new(0), &mut rt, &mut Database::new(), &config(3)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn unknown_action_exhausts_the_actor_and_keeps_the_partial_result() {
    let mut rt = Runtime::new(ScriptedBackend::new(script(&["move_west", "fly"])));
    let failure = run_episode(&mut small_agent(), &mut MiniForage::new(0), &mut rt, &mut Database::new(), &config(5))
        .unwrap_err();
    // The hook rejects the action on every attempt, so the node exhausts its retries.
    let EpisodeError::Pass(PassError::NodeEvaluationFailed { node, cause }) = &failure.error else {
        panic!("unexpected error {:?}", failure.error)
    };
    assert_eq!(node, "actor-final");
    assert!(matches!(cause, NodeFailure::AfterQueryExhausted { attempts: 3, .. }), "{cause:?}");
    assert_eq!(failure.result.steps, 1);
}
