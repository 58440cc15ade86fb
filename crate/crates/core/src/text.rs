//! Text normalization used by the F1 metrics and the toy backends.
//!
//! Lowercase, replace every character that is neither alphanumeric nor
//! whitespace with a space, split on whitespace runs, drop empty tokens.
//! Classification happens after lowercasing so the output is a fixed point.

use alloc::string::String;
use alloc::vec::Vec;

pub fn normalize_text(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in raw.chars() {
        for lower in c.to_lowercase() {
            if lower.is_alphanumeric() {
                current.push(lower);
            } else if !current.is_empty() {
                tokens.push(core::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Joins tokens with single spaces.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}
