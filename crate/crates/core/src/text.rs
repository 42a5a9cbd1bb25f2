//! Label normalization shared by header labels, store lookup and upsert.

/// Characters stripped from both ends of a label.
fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
                | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Trim, casefold, collapse internal whitespace to single spaces and strip
/// surrounding punctuation.
///
/// ```
/// use tabkg_core::text::normalize;
/// assert_eq!(normalize("  Study\tType: "), "study type");
/// assert_eq!(normalize("\"Berlin\""), "berlin");
/// ```
pub fn normalize(input: &str) -> String {
    let folded = input.to_lowercase();
    let stripped = folded.trim_matches(|c: char| c.is_whitespace() || is_edge_punctuation(c));
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercase slug used for local names in exported documents.
pub fn slug(input: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in normalize(input).chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else {
            pending_sep = true;
        }
    }
    if out.is_empty() {
        out.push_str("property");
    }
    out
}
