//! Extracting the `{"queries": [..]}` object from free-form LLM output.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object with a \"queries\" key found")]
    NoJsonFound,
    #[error("expected exactly 2 queries, got {0}")]
    WrongArity(usize),
    #[error("query {0} is empty")]
    EmptyItem(usize),
    #[error("query {0} is not a string")]
    InvalidItem(usize),
}

/// Byte offset one past the `}` that closes the object opening at `start`.
fn balanced_end(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + off + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Returns the two generated queries, trimmed.
///
/// Prose and Markdown fences around the JSON are ignored: the first balanced
/// `{..}` that parses as an object with a `queries` key wins.
pub fn parse_llm_queries(raw: &str) -> Result<(String, String), ParseError> {
    let queries = raw
        .match_indices('{')
        .filter_map(|(start, _)| {
            let end = balanced_end(raw, start)?;
            match serde_json::from_str::<Value>(&raw[start..end]) {
                Ok(Value::Object(mut map)) => map.remove("queries"),
                _ => None,
            }
        })
        .next()
        .ok_or(ParseError::NoJsonFound)?;

    let items = match queries {
        Value::Array(items) => items,
        _ => return Err(ParseError::WrongArity(1)),
    };
    if items.len() != 2 {
        return Err(ParseError::WrongArity(items.len()));
    }
    let mut out = Vec::with_capacity(2);
    for (i, item) in items.iter().enumerate() {
        let text = item.as_str().ok_or(ParseError::InvalidItem(i))?.trim();
        if text.is_empty() {
            return Err(ParseError::EmptyItem(i));
        }
        out.push(text.to_string());
    }
    let second = out.pop().expect("two items");
    let first = out.pop().expect("two items");
    Ok((first, second))
}
