use std::collections::BTreeSet;

use crate::text::normalize;

/// Character trigrams of an already-normalized string. Strings shorter than
/// three characters contribute themselves as a single gram.
pub(crate) fn trigrams(normalized: &str) -> BTreeSet<String> {
    let chars: Vec<char> = normalized.chars().collect();
    if chars.is_empty() {
        return BTreeSet::new();
    }
    if chars.len() < 3 {
        return BTreeSet::from([normalized.to_string()]);
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub(crate) fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Highest score a pair of distinct normalized labels can get. Distinct
/// strings may share a trigram set ("bertabe" and "bertaber"), and 1.0 is
/// reserved for normalized equality.
pub const MAX_FUZZY: f64 = 0.99;

/// Score for two labels already known to normalize differently.
pub(crate) fn fuzzy(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    jaccard(a, b).min(MAX_FUZZY)
}

/// Label similarity in `[0, 1]`: 1.0 exactly when both strings normalize to
/// the same text, otherwise the Jaccard overlap of their trigram sets capped
/// at [`MAX_FUZZY`].
pub fn similarity(a: &str, b: &str) -> f64 {
    let (na, nb) = (normalize(a), normalize(b));
    if na == nb {
        return 1.0;
    }
    fuzzy(&trigrams(&na), &trigrams(&nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_gives_one() {
        assert_eq!(similarity("Abc ", "abc"), 1.0);
        assert_eq!(similarity("Study Type", "study  type"), 1.0);
    }

    #[test]
    fn reflexive() {
        for s in ["", "x", "method", "deep learning", "!!!"] {
            assert_eq!(similarity(s, s), 1.0);
        }
    }

    #[test]
    fn shared_trigram_set_is_not_a_match() {
        assert_eq!(similarity("bertabe", "bertaber"), MAX_FUZZY);
    }

    #[test]
    fn method_vs_methods() {
        // {met, eth, tho, hod} vs {met, eth, tho, hod, ods}: 4 / 5.
        assert_eq!(similarity("method", "methods"), 0.8);
    }

    #[test]
    fn short_strings() {
        assert_eq!(trigrams("dl"), BTreeSet::from(["dl".to_string()]));
        assert_eq!(similarity("DL", "deep learning"), 0.0);
        assert_eq!(similarity("", "abc"), 0.0);
    }

    #[test]
    fn below_one_when_different() {
        let s = similarity("Study Types", "study type");
        assert!(s < 1.0 && s > 0.5, "{s}");
        assert_eq!(s, 8.0 / 9.0);
    }
}
