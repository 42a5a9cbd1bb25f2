use super::Cell;

/// Enumeration delimiters in priority order.
pub const DEFAULT_DELIMITERS: [&str; 3] = [";", ",", "|"];

/// Byte offsets of `delimiter` in `text` that are not inside double quotes.
fn unquoted_matches(text: &str, delimiter: &str) -> Vec<usize> {
    let mut hits = Vec::new();
    if delimiter.is_empty() {
        return hits;
    }
    let mut in_quotes = false;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with('"') {
            in_quotes = !in_quotes;
            i += 1;
            continue;
        }
        if !in_quotes && rest.starts_with(delimiter) {
            hits.push(i);
            i += delimiter.len();
            continue;
        }
        i += rest.chars().next().map_or(1, char::len_utf8);
    }
    hits
}

/// Split an enumeration cell on the first delimiter (in priority order) that
/// occurs outside quotes. Parts are trimmed and empty parts dropped. Cells
/// that are already split, or contain none of the delimiters, come back
/// unchanged.
pub fn split_cell<S: AsRef<str>>(cell: &Cell, delimiters: &[S]) -> Cell {
    if cell.delimiter.is_some() {
        return cell.clone();
    }
    for delimiter in delimiters {
        let delimiter = delimiter.as_ref();
        let hits = unquoted_matches(&cell.raw_text, delimiter);
        if hits.is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(hits.len() + 1);
        let mut start = 0;
        for at in hits.into_iter().chain(std::iter::once(cell.raw_text.len())) {
            let part = cell.raw_text[start..at].trim();
            if !part.is_empty() {
                values.push(part.to_string());
            }
            start = (at + delimiter.len()).min(cell.raw_text.len());
        }
        return Cell { raw_text: cell.raw_text.clone(), values, delimiter: Some(delimiter.to_string()) };
    }
    cell.clone()
}
