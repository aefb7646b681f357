//! Whitespace tokenization shared by fixtures, statistics and metrics.

use std::collections::HashMap;

/// Lowercased whitespace tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Lowercased whitespace tokens with leading and trailing punctuation removed;
/// tokens that are pure punctuation are dropped.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|t| strip_punct(t).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn strip_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// First whitespace token, lowercased, punctuation stripped.
pub fn first_token(s: &str) -> Option<String> {
    s.split_whitespace()
        .next()
        .map(|t| strip_punct(t).to_lowercase())
        .filter(|t| !t.is_empty())
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Unigram F1 over token multisets: `2PR / (P + R)`.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    if c.is_empty() && r.is_empty() {
        return 1.0;
    }
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let rc = counts(&r);
    let overlap: usize = counts(&c)
        .iter()
        .map(|(t, n)| (*n).min(rc.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c.len() as f64;
    let rec = overlap as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_values() {
        // P = 4/4, R = 4/6 -> F1 = 0.8
        assert!((token_f1("what was the comment", "what was the comment they made") - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("a b", "c d"), 0.0);
        assert_eq!(token_f1("Same words.", "same WORDS"), 1.0);
    }

    #[test]
    fn first_token_rules() {
        assert_eq!(first_token("Why?"), Some("why".into()));
        assert_eq!(first_token("... what"), None);
        assert_eq!(first_token(""), None);
    }
}
