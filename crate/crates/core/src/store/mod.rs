//! Shared database, step history and pass traces.

mod trace;

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::template::render_value;
use crate::Value;

pub use trace::{AbortMarker, OpRecord, PassTrace, TraceEntry};

/// Default number of step summaries kept before the oldest are evicted.
pub const DEFAULT_HISTORY_CAP: usize = 1000;

/// Top-level keys with a fixed shape.
pub mod reserved {
    pub const INSTRUCTION_MANUAL: &str = "instruction_manual";
    pub const SUBGOALS: &str = "subgoals";
    pub const ACTION_SUMMARY: &str = "action_summary";
    pub const SKILLS: &str = "skills";
    pub const KB: &str = "kb";
    pub const UNKNOWN: &str = "unknown";
    pub const HISTORY: &str = "history";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DbError {
    #[error("invalid path `{path}`: {reason}")]
    InvalidPath { path: String, reason: &'static str },
    #[error("`{0}` is not a map")]
    NotAMap(String),
    #[error("reserved key `{key}` must hold {expected}")]
    ReservedShape { key: &'static str, expected: &'static str },
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("history steps must increase: got {got} after {last}")]
    NonIncreasingStep { last: u64, got: u64 },
}

/// Dot-separated path into the database, e.g. `subgoals.subgoal`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DbPath(Vec<String>);

impl DbPath {
    pub fn parse(text: &str) -> Result<Self, DbError> {
        let invalid = |reason| DbError::InvalidPath { path: text.to_string(), reason };
        if text.is_empty() {
            return Err(invalid("empty path"));
        }
        let mut segments = Vec::new();
        for seg in text.split('.') {
            if seg.is_empty() {
                return Err(invalid("empty segment"));
            }
            if !seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(invalid("segments may only contain letters, digits, `_` and `-`"));
            }
            segments.push(seg.to_string());
        }
        Ok(DbPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn starts_with(&self, prefix: &DbPath) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl fmt::Display for DbPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl Serialize for DbPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DbPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        DbPath::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Declared database keys; a declared path covers everything beneath it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DbSchema(BTreeSet<DbPath>);

impl DbSchema {
    pub fn new<I, S>(paths: I) -> Result<Self, DbError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        paths.into_iter().map(|p| DbPath::parse(p.as_ref())).collect::<Result<_, _>>().map(DbSchema)
    }

    pub fn covers(&self, path: &DbPath) -> bool {
        self.0.iter().any(|declared| path.starts_with(declared))
    }

    pub fn paths(&self) -> impl Iterator<Item = &DbPath> {
        self.0.iter()
    }
}

/// Summaries of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: u64,
    pub s_obs: String,
    pub s_plan: String,
    pub s_action: Value,
    pub skill: Option<String>,
}

impl StepSummary {
    /// The observation, plan and action summaries joined.
    pub fn render(&self) -> String {
        alloc::format!(
            "Step {}:\nObservation: {}\nPlan: {}\nAction: {}",
            self.step,
            self.s_obs,
            self.s_plan,
            render_value(&self.s_action)
        )
    }
}

/// Writes collected during a hook run, committed only if the hook succeeds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagedWrites(Vec<(DbPath, Value)>);

impl StagedWrites {
    pub fn set(&mut self, path: DbPath, value: Value) {
        self.0.push((path, value));
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Hierarchical store shared by every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Database {
    root: Map<String, Value>,
    history: VecDeque<StepSummary>,
    history_cap: usize,
}

impl Default for Database {
    fn default() -> Self {
        Database::new()
    }
}

impl Database {
    pub fn new() -> Self {
        Database { root: Map::new(), history: VecDeque::new(), history_cap: DEFAULT_HISTORY_CAP }
    }

    pub fn with_history_cap(mut self, cap: usize) -> Self {
        self.history_cap = cap.max(1);
        while self.history.len() > self.history_cap {
            self.history.pop_front();
        }
        self
    }

    pub fn root(&self) -> &Map<String, Value> {
        &self.root
    }

    pub fn get(&self, path: &DbPath) -> Option<&Value> {
        let (first, rest) = path.0.split_first()?;
        let mut cur = self.root.get(first)?;
        for seg in rest {
            cur = cur.as_object()?.get(seg)?;
        }
        Some(cur)
    }

    /// Convenience lookup by textual path.
    pub fn lookup(&self, path: &str) -> Option<&Value> {
        DbPath::parse(path).ok().and_then(|p| self.get(&p).map(|v| v as &Value))
    }

    /// Writes `value` at `path`, creating intermediate maps.
    pub fn set(&mut self, path: &DbPath, value: Value) -> Result<(), DbError> {
        let (first, rest) = path.0.split_first().expect("paths are non-empty");
        if first == reserved::HISTORY {
            return Err(DbError::ReservedShape { key: reserved::HISTORY, expected: "step summaries (use push_summary)" });
        }
        let mut top = match self.root.get(first) {
            Some(v) => v.clone(),
            None if rest.is_empty() => Value::Null,
            None => Value::Object(Map::new()),
        };
        if rest.is_empty() {
            top = value;
        } else {
            let mut cur = &mut top;
            for (i, seg) in rest.iter().enumerate() {
                let map = cur
                    .as_object_mut()
                    .ok_or_else(|| DbError::NotAMap(path.0[..=i].join(".")))?;
                if i + 1 == rest.len() {
                    map.insert(seg.clone(), value);
                    break;
                }
                cur = map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()));
            }
        }
        check_reserved(first, &top)?;
        self.root.insert(first.clone(), top);
        Ok(())
    }

    pub fn set_str(&mut self, path: &str, value: impl Into<Value>) -> Result<(), DbError> {
        self.set(&DbPath::parse(path)?, value.into())
    }

    pub fn remove(&mut self, path: &DbPath) -> Option<Value> {
        let (last, parents) = path.0.split_last()?;
        if parents.is_empty() {
            return self.root.remove(last);
        }
        let mut cur = self.root.get_mut(&parents[0])?;
        for seg in &parents[1..] {
            cur = cur.as_object_mut()?.get_mut(seg)?;
        }
        cur.as_object_mut()?.remove(last)
    }

    /// Applies staged writes all-or-nothing.
    pub fn commit(&mut self, writes: StagedWrites) -> Result<(), DbError> {
        if writes.is_empty() {
            return Ok(());
        }
        let mut next = self.root.clone();
        core::mem::swap(&mut next, &mut self.root);
        for (path, value) in writes.0 {
            if let Err(e) = self.set(&path, value) {
                self.root = next;
                return Err(e);
            }
        }
        Ok(())
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &StepSummary> + DoubleEndedIterator {
        self.history.iter()
    }

    pub fn push_summary(&mut self, summary: StepSummary) -> Result<(), DbError> {
        if let Some(last) = self.history.back() {
            if summary.step <= last.step {
                return Err(DbError::NonIncreasingStep { last: last.step, got: summary.step });
            }
        }
        self.history.push_back(summary);
        while self.history.len() > self.history_cap {
            self.history.pop_front();
        }
        Ok(())
    }

    /// The most recent `min(window, available)` summaries, oldest first.
    pub fn window_history(&self, window: usize) -> Vec<StepSummary> {
        let skip = self.history.len().saturating_sub(window.max(1));
        self.history.iter().skip(skip).cloned().collect()
    }

    /// Every summary recorded under `skill`, oldest first.
    pub fn skill_history(&self, skill: &str) -> Result<Vec<StepSummary>, DbError> {
        let known = self
            .root
            .get(reserved::SKILLS)
            .and_then(Value::as_object)
            .is_some_and(|lib| lib.contains_key(skill));
        if !known {
            return Err(DbError::UnknownSkill(skill.to_string()));
        }
        Ok(self.history.iter().filter(|s| s.skill.as_deref() == Some(skill)).cloned().collect())
    }
}

fn check_reserved(key: &str, value: &Value) -> Result<(), DbError> {
    use reserved::*;
    let require = |key: &'static str, expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(DbError::ReservedShape { key, expected })
        }
    };
    match key {
        INSTRUCTION_MANUAL => require(INSTRUCTION_MANUAL, "text", value.is_string()),
        SUBGOALS => require(SUBGOALS, "a map", value.is_object()),
        ACTION_SUMMARY => require(ACTION_SUMMARY, "a map", value.is_object()),
        SKILLS => require(SKILLS, "a map", value.is_object()),
        KB => require(
            KB,
            "a map of non-empty texts",
            value.as_object().is_some_and(|m| m.values().all(|v| v.as_str().is_some_and(|s| !s.is_empty()))),
        ),
        UNKNOWN => require(UNKNOWN, "a map of records", value.as_object().is_some_and(|m| m.values().all(Value::is_object))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    fn summary(step: u64, skill: &str) -> StepSummary {
        StepSummary {
            step,
            s_obs: alloc::format!("obs {step}"),
            s_plan: "plan".into(),
            s_action: json!({"action": "noop"}),
            skill: Some(skill.into()),
        }
    }

    fn with_steps(n: u64) -> Database {
        let mut db = Database::new();
        for t in 1..=n {
            db.push_summary(summary(t, "A")).unwrap();
        }
        db
    }

    fn steps(list: &[StepSummary]) -> Vec<u64> {
        list.iter().map(|s| s.step).collect()
    }

    #[test]
    fn set_and_get_nested() {
        let mut db = Database::new();
        db.set_str("subgoals.subgoal", "Move toward tree").unwrap();
        db.set_str("subgoals.completion_criteria", "adjacent to tree").unwrap();
        assert_eq!(db.lookup("subgoals.subgoal"), Some(&json!("Move toward tree")));
        assert_eq!(db.lookup("subgoals.missing"), None);
        assert!(matches!(db.set_str("subgoals.subgoal.deeper", 1), Err(DbError::NotAMap(_))));
    }

    #[test]
    fn reserved_shapes_are_enforced() {
        let mut db = Database::new();
        assert!(db.set_str("instruction_manual", 3).is_err());
        assert!(db.set_str("kb.Wood", "").is_err());
        assert!(db.set_str("unknown.Item", "flat").is_err());
        assert!(db.set_str("history.x", 1).is_err());
        db.set_str("kb.Wood_Quantity_for_Table", "2 wood for table").unwrap();
        assert!(db.lookup("kb").is_some());
    }

    #[test]
    fn commit_is_all_or_nothing() {
        let mut db = Database::new();
        db.set_str("a", 1).unwrap();
        let mut writes = StagedWrites::default();
        writes.set(DbPath::parse("b").unwrap(), json!(2));
        writes.set(DbPath::parse("a.x").unwrap(), json!(3));
        assert!(db.commit(writes).is_err());
        assert_eq!(db.lookup("b"), None);
        assert_eq!(db.lookup("a"), Some(&json!(1)));
    }

    #[test]
    fn window_of_thirty_keeps_last_twenty_five() {
        let db = with_steps(30);
        assert_eq!(steps(&db.window_history(25)), (6..=30).collect::<Vec<_>>());
    }

    #[test]
    fn short_history_returns_everything() {
        assert_eq!(steps(&with_steps(3).window_history(25)), vec![1, 2, 3]);
        assert!(Database::new().window_history(25).is_empty());
    }

    #[test]
    fn window_of_one_is_latest() {
        assert_eq!(steps(&with_steps(7).window_history(1)), vec![7]);
    }

    #[test]
    fn skill_history_filters_by_active_skill() {
        let mut db = Database::new();
        db.set_str("skills.A", json!(["a"])).unwrap();
        db.set_str("skills.B", json!(["b"])).unwrap();
        for (t, s) in [(1, "A"), (2, "A"), (3, "B"), (4, "A")] {
            db.push_summary(summary(t, s)).unwrap();
        }
        assert_eq!(steps(&db.skill_history("A").unwrap()), vec![1, 2, 4]);
        assert_eq!(steps(&db.skill_history("B").unwrap()), vec![3]);
        assert_eq!(db.skill_history("C"), Err(DbError::UnknownSkill("C".into())));
    }

    #[test]
    fn history_rejects_non_increasing_steps_and_evicts() {
        let mut db = Database::new().with_history_cap(2);
        db.push_summary(summary(1, "A")).unwrap();
        assert!(db.push_summary(summary(1, "A")).is_err());
        db.push_summary(summary(2, "A")).unwrap();
        db.push_summary(summary(3, "A")).unwrap();
        assert_eq!(db.history().map(|s| s.step).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn schema_prefix_cover() {
        let schema = DbSchema::new(["subgoals", "action_summary.target"]).unwrap();
        assert!(schema.covers(&DbPath::parse("subgoals.subgoal").unwrap()));
        assert!(schema.covers(&DbPath::parse("action_summary.target").unwrap()));
        assert!(!schema.covers(&DbPath::parse("action_summary.details").unwrap()));
    }

    proptest::proptest! {
        #[test]
        fn windows_are_contiguous(n in 0u64..80, w in 1usize..40) {
            let db = with_steps(n);
            let win = db.window_history(w);
            proptest::prop_assert_eq!(win.len() as u64, n.min(w as u64));
            for pair in win.windows(2) {
                proptest::prop_assert_eq!(pair[0].step + 1, pair[1].step);
            }
            if let Some(last) = win.last() {
                proptest::prop_assert_eq!(last.step, n);
            }
        }
    }
}
