//! Extraction of structured values from free-form model answers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpectedShape {
    Map,
    List,
    /// A leading yes/no token; parsed to a boolean.
    YesNo,
    /// A map containing at least these keys.
    Labeled(Vec<String>),
}

impl ExpectedShape {
    pub fn labeled<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ExpectedShape::Labeled(fields.into_iter().map(Into::into).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no structured block found in the answer")]
    NoBlockFound,
    #[error("structured block has the wrong shape: {0}")]
    ShapeMismatch(String),
}

/// Returns the first fenced or bare block that parses and matches `shape`.
///
/// Fenced blocks are tried before bare ones. Parsing tolerates `#` comments,
/// trailing commas and missing commas between lines, all common in answers
/// to prompts that show commented templates.
pub fn parse_structured_block(text: &str, shape: &ExpectedShape) -> Result<Value, ParseError> {
    if *shape == ExpectedShape::YesNo {
        return parse_yes_no(text)
            .map(Value::Bool)
            .ok_or_else(|| ParseError::ShapeMismatch("expected an answer starting with yes or no".into()));
    }
    let mut mismatch = None;
    let mut candidates = fenced_blocks(text);
    candidates.extend(bare_blocks(text));
    for candidate in candidates {
        let Some(value) = parse_lenient(candidate) else { continue };
        match check_shape(&value, shape) {
            Ok(()) => return Ok(value),
            Err(detail) => {
                mismatch.get_or_insert(detail);
            }
        }
    }
    Err(mismatch.map_or(ParseError::NoBlockFound, ParseError::ShapeMismatch))
}

/// `yes`/`no` (any case, optionally quoted, followed by anything) or a JSON
/// boolean.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let t = text.trim().trim_start_matches(['"', '\'', '`', '*']).trim_start();
    let head: String = t.chars().take_while(|c| c.is_ascii_alphabetic()).collect::<String>().to_ascii_lowercase();
    match head.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// Yes/no reading of a parsed field.
pub fn flag(value: &Value) -> Option<bool> {
    match value {
        Value::Bool(b) => Some(*b),
        Value::String(s) => parse_yes_no(s),
        _ => None,
    }
}

fn check_shape(value: &Value, shape: &ExpectedShape) -> Result<(), String> {
    match (shape, value) {
        (ExpectedShape::Map, Value::Object(_)) | (ExpectedShape::List, Value::Array(_)) => Ok(()),
        (ExpectedShape::Labeled(fields), Value::Object(map)) => {
            let missing: Vec<&str> = fields.iter().filter(|f| !map.contains_key(*f)).map(String::as_str).collect();
            if missing.is_empty() {
                Ok(())
            } else {
                Err(format!("missing field(s) {}", missing.join(", ")))
            }
        }
        (ExpectedShape::List, _) => Err("expected a list".to_string()),
        _ => Err("expected a dictionary".to_string()),
    }
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip an info string such as `json`.
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        out.push(&body[..close]);
        rest = &body[close + 3..];
    }
    out
}

/// Balanced `{...}` / `[...]` spans, outermost first, ignoring brackets in
/// strings.
fn bare_blocks(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' || bytes[i] == b'[' {
            if let Some(end) = matching_close(bytes, i) {
                out.push(&text[i..=end]);
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn matching_close(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_lenient(block: &str) -> Option<Value> {
    let block = block.trim();
    if let Ok(v) = serde_json::from_str(block) {
        return Some(v);
    }
    let cleaned = insert_missing_commas(&strip_comments(block));
    serde_json::from_str(&remove_trailing_commas(&cleaned)).ok()
}

/// Drops `#` comments outside strings.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    let mut skipping = false;
    for c in text.chars() {
        if skipping {
            if c == '\n' {
                skipping = false;
                out.push(c);
            }
            continue;
        }
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
        } else if c == '"' {
            in_str = true;
        } else if c == '#' {
            skipping = true;
            continue;
        }
        out.push(c);
    }
    out
}

/// Adds a comma at the end of a line that ends a value when the next
/// non-blank line starts a new key.
fn insert_missing_commas(text: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim_end();
        out.push_str(trimmed);
        let next = lines[i + 1..].iter().map(|l| l.trim()).find(|l| !l.is_empty());
        let ends_value = trimmed
            .trim()
            .chars()
            .last()
            .is_some_and(|c| !matches!(c, ',' | '{' | '[' | ':'));
        if ends_value && next.is_some_and(|n| n.starts_with('"')) {
            out.push(',');
        }
        out.push('\n');
    }
    out
}

fn remove_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
        } else if c == '"' {
            in_str = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const SKILLS: &str = r#"{
"NavigateToLocation": "Move towards a specific location using cardinal directions.",
"CollectResource": "Interact with an environment object to collect a resource.",
"PlaceObject": "Place an object in the game world from the player's inventory.",
"CraftItem": "Craft a specific item using available resources and tools.",
"UseFurnace": "Use a furnace to smelt or craft items.",
"InteractWithEntity": "Interact with an entity in the game world to achieve a specific outcome.",
"Rest": "Restore energy by sleeping or resting in a safe place."
}"#;

    #[test]
    fn skill_library_parses_to_seven_entries() {
        let v = parse_structured_block(SKILLS, &ExpectedShape::Map).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 7);
        assert!(v["NavigateToLocation"].as_str().unwrap().starts_with("Move towards"));
    }

    #[test]
    fn empty_map() {
        assert_eq!(parse_structured_block("{}", &ExpectedShape::Map).unwrap(), json!({}));
    }

    #[test]
    fn prose_then_fenced_block() {
        let answer = "The tree is south, so I move there.\n```json\n{\"action\":\"move_south\",\"repeats\":1,\"hazard\":\"no\"}\n```\nDone.";
        let shape = ExpectedShape::labeled(["action", "repeats", "hazard"]);
        assert_eq!(
            parse_structured_block(answer, &shape).unwrap(),
            json!({"action": "move_south", "repeats": 1, "hazard": "no"})
        );
    }

    #[test]
    fn commented_template_with_missing_commas() {
        let answer = "```\n{\n\"action\": \"do\", # The action\n\"repeats\": 2 # repeats\n\"hazard\": \"no\" # none\n}\n```";
        let v = parse_structured_block(answer, &ExpectedShape::Map).unwrap();
        assert_eq!(v, json!({"action": "do", "repeats": 2, "hazard": "no"}));
    }

    #[test]
    fn hash_inside_strings_survives() {
        let v = parse_structured_block("{\"a\": \"#1 pick\",}", &ExpectedShape::Map).unwrap();
        assert_eq!(v, json!({"a": "#1 pick"}));
    }

    #[test]
    fn errors() {
        assert_eq!(parse_structured_block("no json here", &ExpectedShape::Map), Err(ParseError::NoBlockFound));
        assert!(matches!(parse_structured_block("[1, 2]", &ExpectedShape::Map), Err(ParseError::ShapeMismatch(_))));
        assert!(matches!(
            parse_structured_block("{\"action\": \"do\"}", &ExpectedShape::labeled(["action", "repeats"])),
            Err(ParseError::ShapeMismatch(d)) if d.contains("repeats")
        ));
        assert!(matches!(parse_structured_block("maybe", &ExpectedShape::YesNo), Err(ParseError::ShapeMismatch(_))));
    }

    #[test]
    fn yes_no_tokens() {
        assert_eq!(parse_structured_block("Yes, the road is busy.", &ExpectedShape::YesNo), Ok(json!(true)));
        assert_eq!(parse_structured_block("  \"no\"", &ExpectedShape::YesNo), Ok(json!(false)));
        assert_eq!(flag(&json!("yes - verified")), Some(true));
        assert_eq!(flag(&json!(false)), Some(false));
        assert_eq!(flag(&json!(1)), None);
    }

    #[test]
    fn list_shape_skips_leading_map() {
        let v = parse_structured_block("{\"x\":1} then [1,2]", &ExpectedShape::List).unwrap();
        assert_eq!(v, json!([1, 2]));
    }
}
