use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::runtime::{AfterQueryHook, ExpectedShape, HookContext, HookError, SEPARATOR};
use crate::store::{reserved, Database, DbError};
use crate::Value;

/// One skill in the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub name: String,
    pub description: String,
    pub parameters: Value,
    pub guide: String,
}

impl SkillEntry {
    /// Reads `{name: [description, parameters, guide]}`; a bare description
    /// string is accepted too.
    pub fn from_answer(value: &Value) -> Result<Self, String> {
        let map = value.as_object().ok_or("expected a dictionary")?;
        let mut entries = map.iter();
        let (Some((name, body)), None) = (entries.next(), entries.next()) else {
            return Err("expected exactly one skill".into());
        };
        let text = |v: Option<&Value>| match v {
            Some(Value::String(s)) => s.clone(),
            Some(other) if !other.is_null() => crate::template::render_value(other),
            _ => String::new(),
        };
        let (description, parameters, guide) = match body {
            Value::String(s) => (s.clone(), Value::Null, String::new()),
            Value::Array(items) if !items.is_empty() => {
                (text(items.first()), items.get(1).cloned().unwrap_or(Value::Null), text(items.get(2)))
            }
            Value::Object(o) => (text(o.get("description")), o.get("parameters").cloned().unwrap_or(Value::Null), text(o.get("guide"))),
            _ => return Err(format!("skill `{name}` has no description")),
        };
        if name.trim().is_empty() || description.trim().is_empty() {
            return Err("skill name and description must be non-empty".into());
        }
        Ok(SkillEntry { name: name.clone(), description, parameters, guide })
    }

    fn to_value(&self) -> Value {
        json!({"description": self.description, "parameters": self.parameters, "guide": self.guide})
    }
}

/// Stores the chosen skill under `skill.current` and adds it to the library
/// if no skill of that exact name exists.
pub struct SkillSelectHook;

impl AfterQueryHook for SkillSelectHook {
    fn contract(&self) -> &str {
        "a dictionary with one skill: {name: [description, parameters, guide]}"
    }
    fn effects(&self) -> &str {
        "adds new skills to skills; writes skill.current"
    }
    fn check_arg(&self, arg: Option<&str>, _: &dyn Fn(&str) -> bool) -> Result<(), String> {
        arg.map_or(Ok(()), |a| Err(format!("skill_select takes no argument (got `{a}`)")))
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let parsed = cx.parse(&ExpectedShape::Map)?;
        let skill = SkillEntry::from_answer(&parsed).map_err(HookError::Retry)?;
        let mut library = cx.db.root().get(reserved::SKILLS).and_then(Value::as_object).cloned().unwrap_or_default();
        if !library.contains_key(&skill.name) {
            library.insert(skill.name.clone(), skill.to_value());
            cx.write(reserved::SKILLS, Value::Object(library))?;
        }
        cx.write("skill.current", Value::String(skill.name.clone()))?;
        Ok(parsed)
    }
}

/// True iff step `step` ran under `skill` and is a positive multiple of 3
/// among the recorded steps under that skill.
pub fn feedback_due(db: &Database, skill: &str, step: u64) -> bool {
    let mut count = 0u64;
    let mut current = false;
    for s in db.history().filter(|s| s.step <= step) {
        if s.skill.as_deref() == Some(skill) {
            count += 1;
            current = s.step == step;
        } else if s.step == step {
            current = false;
        }
    }
    current && count > 0 && count % 3 == 0
}

/// Every step summary recorded under `skill`, oldest first.
pub fn build_feedback_context(db: &Database, skill: &str) -> Result<String, DbError> {
    let steps = db.skill_history(skill)?;
    let parts: Vec<String> = steps.iter().map(|s| s.render()).collect();
    Ok(parts.join(SEPARATOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StepSummary;
    use alloc::vec;
    use proptest::prelude::*;

    fn summary(step: u64, skill: &str) -> StepSummary {
        StepSummary {
            step,
            s_obs: format!("obs {step}"),
            s_plan: format!("plan {step}"),
            s_action: json!({"action": "noop", "success": "yes"}),
            skill: Some(skill.into()),
        }
    }

    fn db_with(skills: &[&str]) -> Database {
        let mut db = Database::new();
        let mut lib = serde_json::Map::new();
        for s in skills {
            lib.insert((*s).into(), json!({"description": "d"}));
        }
        db.set_str("skills", Value::Object(lib)).unwrap();
        for (i, s) in skills.iter().enumerate() {
            db.push_summary(summary(i as u64 + 1, s)).unwrap();
        }
        db
    }

    #[test]
    fn third_step_under_skill_is_due() {
        let db = db_with(&["A", "A", "A", "A"]);
        assert_eq!([1, 2, 3, 4].map(|t| feedback_due(&db, "A", t)), [false, false, true, false]);
    }

    #[test]
    fn interleaved_skills_count_separately() {
        let db = db_with(&["A", "B", "A", "B", "A", "B"]);
        assert!(feedback_due(&db, "A", 5));
        assert!(!feedback_due(&db, "A", 6));
        assert!(feedback_due(&db, "B", 6));
    }

    #[test]
    fn feedback_context_is_chronological() {
        let db = db_with(&["A", "A", "B", "A"]);
        let ctx = build_feedback_context(&db, "A").unwrap();
        let positions: Vec<usize> = ["Step 1:", "Step 2:", "Step 4:"].iter().map(|s| ctx.find(s).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!ctx.contains("Step 3:"));
        assert!(build_feedback_context(&db, "Z").is_err());
    }

    #[test]
    fn single_step_context_joins_three_summaries() {
        let db = db_with(&["A"]);
        let ctx = build_feedback_context(&db, "A").unwrap();
        assert!(ctx.contains("obs 1") && ctx.contains("plan 1") && ctx.contains("noop"));
    }

    #[test]
    fn skill_answer_shapes() {
        let s = SkillEntry::from_answer(&json!({"CollectResource": ["Interact to collect", {"resource": "wood"}, "face it, then do"]})).unwrap();
        assert_eq!(s.name, "CollectResource");
        assert_eq!(s.guide, "face it, then do");
        assert!(SkillEntry::from_answer(&json!({"Rest": "Restore energy."})).is_ok());
        assert!(SkillEntry::from_answer(&json!({"a": "x", "b": "y"})).is_err());
        assert!(SkillEntry::from_answer(&json!({})).is_err());
    }

    proptest! {
        #[test]
        fn feedback_matches_brute_force_counter(seq in proptest::collection::vec(0usize..3, 1..40)) {
            let names = ["A", "B", "C"];
            let skills: Vec<&str> = seq.iter().map(|i| names[*i]).collect();
            let db = db_with(&skills);
            let mut counts = vec![0u64; 3];
            for (t, i) in seq.iter().enumerate() {
                counts[*i] += 1;
                for (j, name) in names.iter().enumerate() {
                    let expected = j == *i && counts[j] % 3 == 0;
                    prop_assert_eq!(feedback_due(&db, name, t as u64 + 1), expected);
                }
            }
        }
    }
}
