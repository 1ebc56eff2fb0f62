//! Tokenisation shared by matching, featurisation and emotion counting.

/// Alphanumeric token of a string with its byte span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Split `text` into maximal runs of alphanumeric characters. Every
/// transition to a non-alphanumeric character is a token boundary.
pub fn tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Token { text: &text[s..i], start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &text[s..], start: s, end: text.len() });
    }
    out
}

/// Token strings only.
pub fn words(text: &str) -> Vec<&str> {
    tokens(text).into_iter().map(|t| t.text).collect()
}
