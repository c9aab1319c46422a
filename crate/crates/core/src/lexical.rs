//! Okapi BM25 inverted index for candidate filtering.
//!
//! Sessions arrive incrementally, so the index supports in-place document
//! additions. Scores use the Lucene-style idf `ln(1 + (N - df + 0.5) /
//! (df + 0.5))`, which stays non-negative on tiny corpora. Ranking ties are
//! broken by ascending document id for cross-platform determinism.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::math;
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexicalError {
    #[error("duplicate document id: {0}")]
    DuplicateDoc(DocId),
    #[error("posting references unknown document index {0}")]
    BadDocIndex(u32),
}

/// Lowercase and split on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// One postings entry: internal document index plus term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term -> postings map with document lengths, supporting incremental adds.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_ids: Vec<DocId>,
    id_lookup: BTreeMap<DocId, u32>,
    doc_lengths: Vec<u32>,
    total_len: u64,
    k1: f64,
    b: f64,
}

impl InvertedIndex {
    pub fn new(k1: f64, b: f64) -> Self {
        Self {
            postings: BTreeMap::new(),
            doc_ids: Vec::new(),
            id_lookup: BTreeMap::new(),
            doc_lengths: Vec::new(),
            total_len: 0,
            k1,
            b,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn contains(&self, id: &DocId) -> bool {
        self.id_lookup.contains_key(id)
    }

    /// Adds documents, rejecting ids that are already present. The whole
    /// batch is validated before any mutation so a failed call leaves the
    /// index unchanged.
    pub fn add_documents(
        &mut self,
        docs: &[(DocId, Vec<String>)],
    ) -> Result<(), LexicalError> {
        let mut incoming = BTreeSet::new();
        for (id, _) in docs {
            if self.id_lookup.contains_key(id) || !incoming.insert(id.clone()) {
                return Err(LexicalError::DuplicateDoc(id.clone()));
            }
        }
        for (id, tokens) in docs {
            let idx = self.doc_ids.len() as u32;
            self.doc_ids.push(id.clone());
            self.id_lookup.insert(id.clone(), idx);
            self.doc_lengths.push(tokens.len() as u32);
            self.total_len += tokens.len() as u64;

            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for tok in tokens {
                *tf.entry(tok.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                self.postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting { doc: idx, tf: count });
            }
        }
        Ok(())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        math::ln(1.0 + (n - df as f64 + 0.5) / (df as f64 + 0.5))
    }

    /// Top-k BM25 hits for the query, descending score, ties by ascending
    /// document id. Duplicate query tokens count once.
    pub fn bm25_topk(&self, query_tokens: &[String], k: usize) -> Vec<(DocId, f64)> {
        self.bm25_topk_filtered(query_tokens, k, |_| true)
    }

    /// As [`bm25_topk`](Self::bm25_topk) but restricted to documents
    /// accepted by `allow`.
    pub fn bm25_topk_filtered(
        &self,
        query_tokens: &[String],
        k: usize,
        allow: impl Fn(&DocId) -> bool,
    ) -> Vec<(DocId, f64)> {
        if k == 0 || self.doc_ids.is_empty() {
            return Vec::new();
        }
        let terms: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
        let avg = self.avg_doc_len();
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for p in postings {
                let len = self.doc_lengths[p.doc as usize] as f64;
                let tf = p.tf as f64;
                let norm = tf * (self.k1 + 1.0)
                    / (tf + self.k1 * (1.0 - self.b + self.b * len / avg));
                *scores.entry(p.doc).or_insert(0.0) += idf * norm;
            }
        }
        let mut ranked: Vec<(&DocId, f64)> = scores
            .into_iter()
            .map(|(doc, s)| (&self.doc_ids[doc as usize], s))
            .filter(|(id, _)| allow(id))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(k);
        ranked.into_iter().map(|(id, s)| (id.clone(), s)).collect()
    }

    /// Documents in internal index order, with token counts. Postings refer
    /// to positions in this sequence.
    pub fn documents(&self) -> impl Iterator<Item = (&DocId, u32)> {
        self.doc_ids
            .iter()
            .zip(self.doc_lengths.iter().copied())
    }

    pub fn postings(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    /// Reassembles an index from persisted parts.
    pub fn from_parts(
        k1: f64,
        b: f64,
        docs: Vec<(DocId, u32)>,
        postings: Vec<(String, Vec<Posting>)>,
    ) -> Result<Self, LexicalError> {
        let mut index = Self::new(k1, b);
        for (id, len) in docs {
            if index.id_lookup.contains_key(&id) {
                return Err(LexicalError::DuplicateDoc(id));
            }
            let idx = index.doc_ids.len() as u32;
            index.id_lookup.insert(id.clone(), idx);
            index.doc_ids.push(id);
            index.doc_lengths.push(len);
            index.total_len += u64::from(len);
        }
        let count = index.doc_ids.len() as u32;
        for (term, list) in postings {
            if let Some(p) = list.iter().find(|p| p.doc >= count) {
                return Err(LexicalError::BadDocIndex(p.doc));
            }
            index.postings.insert(term, list);
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text)
    }

    fn doc(id: &str, text: &str) -> (DocId, Vec<String>) {
        (DocId::new(id), toks(text))
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(
            tokenize("Hello, BM25-world!"),
            vec!["hello", "bm25", "world"]
        );
        assert!(tokenize("--  --").is_empty());
    }

    #[test]
    fn add_documents_updates_counts_and_average() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "a b c"), doc("d2", "a b c d e")])
            .unwrap();
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.avg_doc_len(), 4.0);
    }

    #[test]
    fn duplicate_id_is_rejected_and_index_unchanged() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "a b")]).unwrap();
        let err = idx
            .add_documents(&[doc("d2", "x"), doc("d1", "y")])
            .unwrap_err();
        assert_eq!(err, LexicalError::DuplicateDoc(DocId::new("d1")));
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avg_doc_len(), 2.0);
    }

    #[test]
    fn incremental_sessions_are_additive() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("a1", "u v"), doc("a2", "v w")])
            .unwrap();
        idx.add_documents(&[doc("b1", "w x"), doc("b2", "x y"), doc("b3", "y z")])
            .unwrap();
        assert_eq!(idx.doc_count(), 5);
    }

    #[test]
    fn query_with_no_indexed_terms_returns_empty() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "alpha beta")]).unwrap();
        assert!(idx.bm25_topk(&toks("gamma delta"), 10).is_empty());
    }

    #[test]
    fn single_doc_index_returns_that_doc() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "alpha beta")]).unwrap();
        let hits = idx.bm25_topk(&toks("alpha beta"), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, DocId::new("d1"));
        assert!(hits[0].1 > 0.0);
    }

    /// Independent hand-scored oracle for one (term, doc) pair.
    fn bm25_term_oracle(n: usize, df: usize, tf: u32, len: u32, avg: f64, k1: f64, b: f64) -> f64 {
        let idf = (1.0 + (n as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln();
        let tf = tf as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len as f64 / avg))
    }

    #[test]
    fn three_doc_corpus_matches_hand_scored_oracle() {
        let (k1, b) = (0.8, 0.72);
        let mut idx = InvertedIndex::new(k1, b);
        idx.add_documents(&[
            doc("d1", "apple banana apple"),
            doc("d2", "banana cherry"),
            doc("d3", "cherry cherry cherry apple"),
        ])
        .unwrap();
        let avg = (3.0 + 2.0 + 4.0) / 3.0;

        // query: "apple cherry"; df(apple) = 2, df(cherry) = 2
        let expect_d1 = bm25_term_oracle(3, 2, 2, 3, avg, k1, b);
        let expect_d2 = bm25_term_oracle(3, 2, 1, 2, avg, k1, b);
        let expect_d3 =
            bm25_term_oracle(3, 2, 1, 4, avg, k1, b) + bm25_term_oracle(3, 2, 3, 4, avg, k1, b);

        let hits = idx.bm25_topk(&toks("apple cherry"), 3);
        let mut expected = vec![
            (DocId::new("d1"), expect_d1),
            (DocId::new("d2"), expect_d2),
            (DocId::new("d3"), expect_d3),
        ];
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        assert_eq!(
            hits.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>(),
            expected.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>()
        );
        for (got, want) in hits.iter().zip(&expected) {
            assert!((got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_query_tokens_count_once() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "apple pie"), doc("d2", "apple tart")])
            .unwrap();
        let once = idx.bm25_topk(&toks("apple"), 2);
        let twice = idx.bm25_topk(&toks("apple apple"), 2);
        assert_eq!(once, twice);
    }

    #[test]
    fn adding_documents_preserves_existing_term_frequencies() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "apple apple pear"), doc("d2", "pear")])
            .unwrap();
        let before: Vec<(String, Vec<Posting>)> = idx
            .postings()
            .map(|(t, p)| (t.to_string(), p.to_vec()))
            .collect();
        idx.add_documents(&[doc("d3", "apple pear plum")]).unwrap();
        for (term, old) in &before {
            let new: Vec<Posting> = idx
                .postings()
                .find(|(t, _)| t == term)
                .map(|(_, p)| p.to_vec())
                .unwrap();
            assert_eq!(&new[..old.len()], old.as_slice());
        }
    }

    #[test]
    fn ranking_is_deterministic_and_ties_break_by_id() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        // identical documents -> identical scores
        idx.add_documents(&[doc("z9", "same text"), doc("a1", "same text")])
            .unwrap();
        let hits = idx.bm25_topk(&toks("same"), 2);
        assert_eq!(hits[0].0, DocId::new("a1"));
        assert_eq!(hits[1].0, DocId::new("z9"));
        assert_eq!(hits, idx.bm25_topk(&toks("same"), 2));
    }

    #[test]
    fn filtered_search_restricts_candidates() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "apple"), doc("d2", "apple")])
            .unwrap();
        let hits = idx.bm25_topk_filtered(&toks("apple"), 10, |id| id.as_str() == "d2");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, DocId::new("d2"));
    }

    #[test]
    fn from_parts_round_trips() {
        let mut idx = InvertedIndex::new(0.8, 0.72);
        idx.add_documents(&[doc("d1", "apple banana"), doc("d2", "banana cherry")])
            .unwrap();
        let docs: Vec<(DocId, u32)> = idx.documents().map(|(id, l)| (id.clone(), l)).collect();
        let postings: Vec<(String, Vec<Posting>)> = idx
            .postings()
            .map(|(t, p)| (t.to_string(), p.to_vec()))
            .collect();
        let rebuilt = InvertedIndex::from_parts(0.8, 0.72, docs, postings).unwrap();
        assert_eq!(rebuilt.doc_count(), idx.doc_count());
        assert_eq!(rebuilt.avg_doc_len(), idx.avg_doc_len());
        assert_eq!(
            rebuilt.bm25_topk(&toks("banana"), 5),
            idx.bm25_topk(&toks("banana"), 5)
        );
    }
}
