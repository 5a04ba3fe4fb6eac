//! `$db.path$` placeholders.
//!
//! A placeholder is `$db.` followed by a dot path and a closing `$`. `$$` is
//! a literal dollar sign. Any other `$` is copied through untouched, so prompt
//! text like `$ANSWER` or `$action` needs no escaping.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::store::{Database, DbPath};
use crate::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("malformed placeholder at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("unresolved template key `{0}`")]
    UnresolvedTemplateKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateMode {
    #[default]
    Strict,
    /// Missing keys become empty strings and are reported as warnings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Text(&'a str),
    Dollar,
    Key(DbPath),
}

const OPEN: &str = "$db.";

fn tokenize(text: &str) -> Result<Vec<Token<'_>>, TemplateError> {
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'$' {
            i += 1;
            continue;
        }
        if bytes.get(i + 1) == Some(&b'$') {
            if start < i {
                tokens.push(Token::Text(&text[start..i]));
            }
            tokens.push(Token::Dollar);
            i += 2;
            start = i;
            continue;
        }
        if text[i..].starts_with(OPEN) {
            let body_start = i + OPEN.len();
            let Some(len) = text[body_start..].find('$') else {
                return Err(TemplateError::Malformed { offset: i, detail: "missing closing `$`".into() });
            };
            let body = &text[body_start..body_start + len];
            let path = DbPath::parse(body)
                .map_err(|e| TemplateError::Malformed { offset: i, detail: e.to_string() })?;
            if start < i {
                tokens.push(Token::Text(&text[start..i]));
            }
            tokens.push(Token::Key(path));
            i = body_start + len + 1;
            start = i;
            continue;
        }
        i += 1;
    }
    if start < bytes.len() {
        tokens.push(Token::Text(&text[start..]));
    }
    Ok(tokens)
}

/// All placeholder paths in `text`, in order of appearance.
pub fn placeholders(text: &str) -> Result<Vec<DbPath>, TemplateError> {
    Ok(tokenize(text)?
        .into_iter()
        .filter_map(|t| match t {
            Token::Key(p) => Some(p),
            _ => None,
        })
        .collect())
}

/// Splits off placeholders that open the prompt (separated only by
/// whitespace) from the remaining text.
pub fn split_leading(text: &str) -> Result<(Vec<DbPath>, &str), TemplateError> {
    let mut keys = Vec::new();
    let mut rest = text;
    loop {
        let trimmed = rest.trim_start();
        if !trimmed.starts_with(OPEN) {
            let rest = if keys.is_empty() { text } else { trimmed };
            return Ok((keys, rest));
        }
        let body = &trimmed[OPEN.len()..];
        let Some(len) = body.find('$') else {
            return Err(TemplateError::Malformed {
                offset: text.len() - trimmed.len(),
                detail: "missing closing `$`".into(),
            });
        };
        let path = DbPath::parse(&body[..len]).map_err(|e| TemplateError::Malformed {
            offset: text.len() - trimmed.len(),
            detail: e.to_string(),
        })?;
        keys.push(path);
        rest = &body[len + 1..];
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub text: String,
    /// Keys that were missing in lenient mode.
    pub warnings: Vec<DbPath>,
}

/// Replaces every placeholder with its value's canonical text; everything
/// else is copied byte for byte.
pub fn resolve_template(text: &str, db: &Database, mode: TemplateMode) -> Result<Resolved, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut warnings = Vec::new();
    for token in tokenize(text)? {
        match token {
            Token::Text(t) => out.push_str(t),
            Token::Dollar => out.push('$'),
            Token::Key(path) => match db.get(&path) {
                Some(v) => out.push_str(&render_value(v)),
                None if mode == TemplateMode::Lenient => warnings.push(path),
                None => return Err(TemplateError::UnresolvedTemplateKey(path.to_string())),
            },
        }
    }
    Ok(Resolved { text: out, warnings })
}

/// Canonical text of a value as it appears inside prompts: strings verbatim,
/// numbers without trailing zeros, containers as compact JSON with sorted keys.
pub fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => {
            let mut out = String::new();
            write_compact(&mut out, other);
            out
        }
    }
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else if let Some(f) = n.as_f64() {
        const EXACT: f64 = 9_007_199_254_740_992.0;
        if f.is_finite() && f > -EXACT && f < EXACT && (f as i64) as f64 == f {
            let _ = write!(out, "{}", f as i64);
        } else {
            let _ = write!(out, "{f}");
        }
    }
}

fn write_compact(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_compact(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_compact(out, v);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn db(pairs: &[(&str, Value)]) -> Database {
        let mut db = Database::new();
        for (k, v) in pairs {
            db.set(&DbPath::parse(k).unwrap(), v.clone()).unwrap();
        }
        db
    }

    #[test]
    fn substitutes_nested_key() {
        let db = db(&[("subgoals.subgoal", json!("Move toward tree"))]);
        let r = resolve_template("goal: $db.subgoals.subgoal$", &db, TemplateMode::Strict).unwrap();
        assert_eq!(r.text, "goal: Move toward tree");
    }

    #[test]
    fn text_without_placeholders_is_unchanged() {
        let text = "Output a Json dictionary: {\"action\": $action, \"distance\":$distance$}";
        let r = resolve_template(text, &Database::new(), TemplateMode::Strict).unwrap();
        assert_eq!(r.text, text);
    }

    #[test]
    fn repeated_key_substitutes_each_time() {
        let db = db(&[("a", json!(1))]);
        assert_eq!(resolve_template("$db.a$-$db.a$", &db, TemplateMode::Strict).unwrap().text, "1-1");
    }

    #[test]
    fn escaped_dollar() {
        let r = resolve_template("cost: $$5 not $$db.a$", &Database::new(), TemplateMode::Strict).unwrap();
        assert_eq!(r.text, "cost: $5 not $db.a$");
    }

    #[test]
    fn strict_and_lenient_missing_keys() {
        let err = resolve_template("x $db.missing.key$ y", &Database::new(), TemplateMode::Strict).unwrap_err();
        assert_eq!(err, TemplateError::UnresolvedTemplateKey("missing.key".into()));
        let r = resolve_template("x $db.missing.key$ y", &Database::new(), TemplateMode::Lenient).unwrap();
        assert_eq!(r.text, "x  y");
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn malformed_placeholders() {
        assert!(matches!(placeholders("open $db.a.b"), Err(TemplateError::Malformed { .. })));
        assert!(matches!(placeholders("$db..x$"), Err(TemplateError::Malformed { .. })));
        assert!(matches!(placeholders("$db.has space$"), Err(TemplateError::Malformed { .. })));
    }

    #[test]
    fn hyphenated_segments_are_paths() {
        let keys = placeholders("plan '$db.action_summary.plan-sketch$' and $db.action_summary.relevance-crieria$").unwrap();
        assert_eq!(keys.len(), 2);
        assert_eq!(keys[0].to_string(), "action_summary.plan-sketch");
    }

    #[test]
    fn leading_placeholders_split() {
        let (keys, rest) = split_leading("$db.instruction_manual$\n$db.observation.current$\n\nDescribe it.").unwrap();
        assert_eq!(keys.len(), 2);
        assert_eq!(rest, "Describe it.");
        let (keys, rest) = split_leading("Describe $db.x$.").unwrap();
        assert!(keys.is_empty());
        assert_eq!(rest, "Describe $db.x$.");
    }

    #[test]
    fn canonical_rendering() {
        assert_eq!(render_value(&json!(2.0)), "2");
        assert_eq!(render_value(&json!(2.50)), "2.5");
        assert_eq!(render_value(&json!(-7)), "-7");
        assert_eq!(render_value(&json!({"b": [1.0, "x"], "a": true})), r#"{"a":true,"b":[1,"x"]}"#);
        assert_eq!(render_value(&json!("plain")), "plain");
    }

    proptest! {
        #[test]
        fn resolution_is_idempotent(
            pieces in proptest::collection::vec(("[a-z ,.!?]{0,12}", proptest::option::of("[a-c]")), 0..6),
            values in proptest::collection::btree_map("[a-c]", "[A-Za-z0-9 .,]{0,10}", 0..3),
        ) {
            let mut text = String::new();
            for (literal, key) in &pieces {
                text.push_str(literal);
                if let Some(k) = key {
                    text.push_str("$db.");
                    text.push_str(k);
                    text.push('$');
                }
            }
            let mut db = Database::new();
            for (k, v) in &values {
                db.set(&DbPath::parse(k).unwrap(), Value::String(v.clone())).unwrap();
            }
            let once = resolve_template(&text, &db, TemplateMode::Lenient).unwrap().text;
            let twice = resolve_template(&once, &db, TemplateMode::Lenient).unwrap().text;
            prop_assert_eq!(once, twice);
        }
    }
}
