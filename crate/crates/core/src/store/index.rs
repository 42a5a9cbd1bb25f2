use std::collections::{BTreeMap, BTreeSet};

use super::similarity::{fuzzy, trigrams};
use crate::text::normalize;

/// Inverted trigram index over item labels.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LabelIndex<K: Ord> {
    postings: BTreeMap<String, BTreeSet<K>>,
    by_normalized: BTreeMap<String, BTreeSet<K>>,
    grams: BTreeMap<K, BTreeSet<String>>,
}

impl<K: Ord> Default for LabelIndex<K> {
    fn default() -> Self {
        Self { postings: BTreeMap::new(), by_normalized: BTreeMap::new(), grams: BTreeMap::new() }
    }
}

impl<K: Ord + Copy> LabelIndex<K> {
    pub fn insert(&mut self, key: K, label: &str) {
        let norm = normalize(label);
        let grams = trigrams(&norm);
        for g in &grams {
            self.postings.entry(g.clone()).or_default().insert(key);
        }
        self.by_normalized.entry(norm).or_default().insert(key);
        self.grams.insert(key, grams);
    }

    pub fn remove(&mut self, key: K, label: &str) {
        let norm = normalize(label);
        if let Some(grams) = self.grams.remove(&key) {
            for g in grams {
                if let Some(set) = self.postings.get_mut(&g) {
                    set.remove(&key);
                    if set.is_empty() {
                        self.postings.remove(&g);
                    }
                }
            }
        }
        if let Some(set) = self.by_normalized.get_mut(&norm) {
            set.remove(&key);
            if set.is_empty() {
                self.by_normalized.remove(&norm);
            }
        }
    }

    /// Items whose similarity to `query` is at least `threshold`, unordered.
    /// Only items sharing a trigram or the normalized form can score above 0.
    pub fn search(&self, query: &str, threshold: f64) -> Vec<(K, f64)> {
        let norm = normalize(query);
        let qgrams = trigrams(&norm);
        let exact: BTreeSet<K> = self.by_normalized.get(&norm).cloned().unwrap_or_default();
        let mut pool: BTreeSet<K> = exact.clone();
        for g in &qgrams {
            if let Some(keys) = self.postings.get(g) {
                pool.extend(keys.iter().copied());
            }
        }
        pool.into_iter()
            .map(|k| {
                let score = if exact.contains(&k) { 1.0 } else { fuzzy(&qgrams, &self.grams[&k]) };
                (k, score)
            })
            .filter(|(_, score)| *score >= threshold)
            .collect()
    }
}
