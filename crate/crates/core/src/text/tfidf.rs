//! Unigram + bigram TF-IDF with a document-frequency floor and a vocabulary
//! cap, smoothed idf and L2-normalized rows.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    /// Retained terms in index order (lexicographic). Bigrams are `"a b"`.
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
    pub max_terms: usize,
    pub min_df: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for (&i, &x) in self.indices.iter().zip(&self.values) {
            v[i] = x;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Unigrams followed by adjacent bigrams.
pub fn ngrams(doc: &[String]) -> impl Iterator<Item = String> + '_ {
    doc.iter()
        .cloned()
        .chain(doc.windows(2).map(|w| format!("{} {}", w[0], w[1])))
}

/// `ln((1 + N) / (1 + df)) + 1`.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

pub fn fit_tfidf(corpus: &[Vec<String>], max_terms: usize, min_df: usize) -> Result<TfidfVectorizer> {
    if corpus.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let distinct: BTreeSet<String> = ngrams(doc).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= min_df).collect();
    // highest document frequency first; BTreeMap order breaks ties lexicographically
    kept.sort_by(|a, b| b.1.cmp(&a.1));
    kept.truncate(max_terms);
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    let n_docs = corpus.len();
    Ok(TfidfVectorizer {
        idf: kept.iter().map(|(_, d)| smoothed_idf(n_docs, *d)).collect(),
        doc_freq: kept.iter().map(|(_, d)| *d).collect(),
        terms: kept.into_iter().map(|(t, _)| t).collect(),
        n_docs,
        max_terms,
        min_df,
    })
}

impl TfidfVectorizer {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// Raw counts times idf, L2-normalized. Documents with no retained term
    /// map to the zero vector.
    pub fn transform(&self, doc: &[String]) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in ngrams(doc) {
            if let Some(i) = self.index_of(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let (indices, mut values): (Vec<usize>, Vec<f64>) =
            counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).unzip();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        SparseVector { indices, values }
    }

    pub fn transform_dense(&self, doc: &[String]) -> Vec<f64> {
        self.transform(doc).to_dense(self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ubiquitous_term_has_unit_idf() {
        let corpus: Vec<_> = (0..7).map(|i| doc(&format!("wind t{i}"))).collect();
        let v = fit_tfidf(&corpus, 1000, 5).unwrap();
        assert_eq!(v.terms, ["wind"]);
        assert_abs_diff_eq!(v.idf[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn min_df_cutoff_excludes_rare_terms() {
        let mut corpus: Vec<_> = (0..5).map(|_| doc("gust")).collect();
        for d in corpus.iter_mut().take(4) {
            d.push("hail".into());
        }
        let v = fit_tfidf(&corpus, 1000, 5).unwrap();
        assert_eq!(v.index_of("hail"), None);
        assert!(v.index_of("gust").is_some());
        assert!(v.doc_freq.iter().all(|&d| d >= 5));
    }

    #[test]
    fn smoothed_idf_hand_value() {
        let corpus = vec![doc("a b"), doc("a"), doc("c"), doc("c"), doc("c"), doc("c")];
        let v = fit_tfidf(&corpus, 1000, 1).unwrap();
        let i = v.index_of("a").unwrap();
        assert_eq!(v.doc_freq[i], 2);
        assert_abs_diff_eq!(v.idf[i], (7.0f64 / 3.0).ln() + 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.idf[i], 1.8472978603872037, epsilon = 1e-12);
        assert!(v.index_of("a b").is_some());
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let corpus = vec![doc("x y z"), doc("x y"), doc("x")];
        let v = fit_tfidf(&corpus, 2, 1).unwrap();
        assert_eq!(v.terms, ["x", "x y"]);
        assert!(matches!(fit_tfidf(&corpus, 2, 4), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn transform_cases() {
        let mut v = fit_tfidf(&[doc("p q"), doc("p q")], 10, 1).unwrap();
        v.terms = vec!["p".into(), "q".into()];
        v.idf = vec![1.0, 2.0];
        v.doc_freq = vec![2, 2];
        assert!(v.transform(&doc("zz")).indices.is_empty());
        let t = v.transform(&doc("q q q"));
        assert_eq!(t.indices, vec![1]);
        assert_abs_diff_eq!(t.values[0], 1.0);
        let t = v.transform_dense(&doc("p q"));
        assert_abs_diff_eq!(t[0], 1.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(t[1], 2.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(t[0], 0.4472, epsilon = 1e-4);
        assert_abs_diff_eq!(t[1], 0.8944, epsilon = 1e-4);
    }

    proptest! {
        #[test]
        fn rows_are_unit_or_zero(words in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..8), 1..20)) {
            let corpus: Vec<Vec<String>> = words.iter().map(|d| d.iter().map(|w| format!("w{w}")).collect()).collect();
            if let Ok(v) = fit_tfidf(&corpus, 1000, 2) {
                prop_assert!(v.len() <= 1000);
                for d in &corpus {
                    let n = v.transform(d).norm();
                    prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
