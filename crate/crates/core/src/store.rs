//! The retrieval index: document embeddings with model-version provenance,
//! plus re-embedding cost accounting.
//!
//! In compat mode a session upsert encodes only the newly arrived
//! documents; embeddings written in earlier sessions are never rewritten.
//! In rebuild mode every stored document is re-encoded under the current
//! model. The [`CostLedger`] counts encoder document passes either way and
//! can also be driven standalone with session sizes for pure accounting.
//!
//! Search is exact brute-force dot product over the stored embeddings,
//! descending score with ties broken by ascending document id.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderParams, FeatureVector, Tower};
use crate::geometry::{self, Embedding, GeometryError};
use crate::math;
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("compat upsert may not overwrite existing document {0}")]
    CompatOverwrite(DocId),
}

/// Whether a session upsert extends the index or rebuilds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Compat,
    Rebuild,
}

/// One indexed document.
#[derive(Debug, Clone)]
pub struct StoredDoc {
    pub features: FeatureVector,
    pub embedding: Embedding,
    /// Session whose model produced the stored embedding.
    pub model_version: u32,
    /// Session in which the document first arrived.
    pub session_added: u32,
}

/// Per-session encoder-pass accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionCost {
    pub session: u32,
    pub new_docs: u64,
    pub encoded: u64,
    pub total_docs: u64,
}

/// Cumulative count of encoder document-forward passes spent maintaining
/// an index. Drivable standalone: feeding session sizes through
/// [`record_session`](Self::record_session) reproduces the accounting of a
/// full run without encoding anything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    embed_ops: u64,
    docs_stored: u64,
    sessions: Vec<SessionCost>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one session: `new_docs` arrived and `mode` decides whether
    /// only those are encoded or the whole collection so far.
    pub fn record_session(&mut self, session: u32, new_docs: u64, mode: IndexMode) {
        self.docs_stored += new_docs;
        let encoded = match mode {
            IndexMode::Compat => new_docs,
            IndexMode::Rebuild => self.docs_stored,
        };
        self.embed_ops += encoded;
        self.sessions.push(SessionCost {
            session,
            new_docs,
            encoded,
            total_docs: self.docs_stored,
        });
    }

    /// Extra encoder passes that do not change the stored collection
    /// (e.g. a from-scratch retrain re-encoding everything).
    pub fn record_extra_encodes(&mut self, session: u32, encoded: u64) {
        self.embed_ops += encoded;
        if let Some(last) = self
            .sessions
            .iter_mut()
            .rev()
            .find(|s| s.session == session)
        {
            last.encoded += encoded;
        } else {
            self.sessions.push(SessionCost {
                session,
                new_docs: 0,
                encoded,
                total_docs: self.docs_stored,
            });
        }
    }

    pub fn embed_ops(&self) -> u64 {
        self.embed_ops
    }

    pub fn docs_stored(&self) -> u64 {
        self.docs_stored
    }

    pub fn sessions(&self) -> &[SessionCost] {
        &self.sessions
    }

    /// Encoder passes accumulated over sessions `1..`, the upcoming-session
    /// cost that separates compatible updates from index rebuilds.
    pub fn upcoming_ops(&self) -> u64 {
        self.sessions
            .iter()
            .filter(|s| s.session >= 1)
            .map(|s| s.encoded)
            .sum()
    }
}

/// Document-id keyed embedding index.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    records: BTreeMap<DocId, StoredDoc>,
    ledger: CostLedger,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &DocId) -> Option<&StoredDoc> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = (&DocId, &StoredDoc)> {
        self.records.iter()
    }

    pub fn cost_report(&self) -> &CostLedger {
        &self.ledger
    }

    /// Inserts a pre-encoded record without touching the ledger; used when
    /// loading a persisted store.
    pub fn restore(&mut self, id: DocId, doc: StoredDoc) {
        self.records.insert(id, doc);
    }

    /// Indexes one session's documents. Compat mode encodes exactly the
    /// new documents and refuses to overwrite existing ids; rebuild mode
    /// also re-encodes every previously stored document under `params`.
    pub fn upsert_session(
        &mut self,
        session: u32,
        docs: &[(DocId, FeatureVector)],
        params: &EncoderParams,
        mode: IndexMode,
    ) -> Result<(), StoreError> {
        if mode == IndexMode::Compat {
            for (id, _) in docs {
                if self.records.contains_key(id) {
                    return Err(StoreError::CompatOverwrite(id.clone()));
                }
            }
        }
        if mode == IndexMode::Rebuild {
            for doc in self.records.values_mut() {
                doc.embedding = params.encode(&doc.features, Tower::Document)?;
                doc.model_version = session;
            }
        }
        for (id, features) in docs {
            let embedding = params.encode(features, Tower::Document)?;
            self.records.insert(
                id.clone(),
                StoredDoc {
                    features: features.clone(),
                    embedding,
                    model_version: session,
                    session_added: session,
                },
            );
        }
        self.ledger.record_session(session, docs.len() as u64, mode);
        Ok(())
    }

    /// Exact top-k by dot product over all stored documents.
    pub fn search_topk(&self, q_emb: &Embedding, k: usize) -> Result<Vec<(DocId, f64)>, StoreError> {
        self.search_topk_upto(q_emb, k, u32::MAX)
    }

    /// Exact top-k restricted to documents that had arrived by
    /// `max_session`.
    pub fn search_topk_upto(
        &self,
        q_emb: &Embedding,
        k: usize,
        max_session: u32,
    ) -> Result<Vec<(DocId, f64)>, StoreError> {
        let scored = self
            .records
            .iter()
            .filter(|(_, d)| d.session_added <= max_session)
            .map(|(id, d)| Ok((id.clone(), geometry::dot(q_emb, &d.embedding)?)));
        brute_force_topk(scored, k)
    }

    /// Fingerprint of the embeddings stored for one arrival session, in
    /// document-id order; byte-level, so any drift in a frozen embedding
    /// changes the digest.
    pub fn session_digest(&self, session: u32) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for (id, doc) in &self.records {
            if doc.session_added != session {
                continue;
            }
            hash = math::fnv1a64_seeded(hash, id.as_str().as_bytes());
            for v in doc.embedding.as_slice() {
                hash = math::fnv1a64_seeded(hash, &v.to_le_bytes());
            }
        }
        hash
    }
}

/// Shared ranking helper: descending score, ties by ascending document id,
/// truncated to `k`. Also used for transient evaluation indexes that never
/// touch a store.
pub fn brute_force_topk<I>(scored: I, k: usize) -> Result<Vec<(DocId, f64)>, StoreError>
where
    I: IntoIterator<Item = Result<(DocId, f64), StoreError>>,
{
    let mut all: Vec<(DocId, f64)> = scored.into_iter().collect::<Result<_, _>>()?;
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::featurize;
    use alloc::format;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats(text: &str, f: u32) -> FeatureVector {
        featurize(&crate::lexical::tokenize(text), f)
    }

    fn session_docs(prefix: &str, n: usize, f: u32) -> Vec<(DocId, FeatureVector)> {
        (0..n)
            .map(|i| {
                (
                    DocId::new(format!("{prefix}{i:03}")),
                    feats(&format!("{prefix} token{i} shared"), f),
                )
            })
            .collect()
    }

    #[test]
    fn fresh_store_reports_zeros() {
        let store = EmbeddingStore::new();
        assert_eq!(store.cost_report().embed_ops(), 0);
        assert_eq!(store.cost_report().docs_stored(), 0);
        assert!(store.cost_report().sessions().is_empty());
    }

    #[test]
    fn compat_upsert_counts_only_new_docs() {
        let params = EncoderParams::init(64, 8, false, 1);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 5, 64), &params, IndexMode::Compat)
            .unwrap();
        store
            .upsert_session(1, &session_docs("b", 5, 64), &params, IndexMode::Compat)
            .unwrap();
        assert_eq!(store.cost_report().embed_ops(), 10);
        assert_eq!(store.len(), 10);
    }

    #[test]
    fn rebuild_upsert_reencodes_everything() {
        let params = EncoderParams::init(64, 8, false, 1);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 5, 64), &params, IndexMode::Rebuild)
            .unwrap();
        store
            .upsert_session(1, &session_docs("b", 3, 64), &params, IndexMode::Rebuild)
            .unwrap();
        // 5 + (5 + 3)
        assert_eq!(store.cost_report().embed_ops(), 13);
        for (_, doc) in store.records() {
            assert_eq!(doc.model_version, 1);
        }
        let added: Vec<u32> = store.records().map(|(_, d)| d.session_added).collect();
        assert_eq!(added.iter().filter(|s| **s == 0).count(), 5);
        assert_eq!(added.iter().filter(|s| **s == 1).count(), 3);
    }

    #[test]
    fn compat_overwrite_is_rejected() {
        let params = EncoderParams::init(64, 8, false, 1);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 2, 64), &params, IndexMode::Compat)
            .unwrap();
        let err = store
            .upsert_session(1, &session_docs("a", 2, 64), &params, IndexMode::Compat)
            .unwrap_err();
        assert!(matches!(err, StoreError::CompatOverwrite(_)));
    }

    #[test]
    fn empty_session_changes_nothing_but_reports() {
        let params = EncoderParams::init(64, 8, false, 1);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 4, 64), &params, IndexMode::Compat)
            .unwrap();
        let ops = store.cost_report().embed_ops();
        store
            .upsert_session(1, &[], &params, IndexMode::Compat)
            .unwrap();
        assert_eq!(store.cost_report().embed_ops(), ops);
        assert_eq!(store.len(), 4);
    }

    #[test]
    fn ledger_reproduces_published_session_accounting() {
        // four arrival sizes, compat vs rebuild
        let sizes = [2_816_720u64, 654_266, 670_026, 1_405_225];
        let mut compat = CostLedger::new();
        let mut rebuild = CostLedger::new();
        for (t, n) in sizes.iter().enumerate() {
            compat.record_session(t as u32, *n, IndexMode::Compat);
            rebuild.record_session(t as u32, *n, IndexMode::Rebuild);
        }
        assert_eq!(compat.upcoming_ops(), 2_729_517);
        assert_eq!(rebuild.upcoming_ops(), 13_158_235);
    }

    #[test]
    fn search_full_ranking_and_ties() {
        let params = EncoderParams::init(32, 4, false, 3);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("x", 6, 32), &params, IndexMode::Compat)
            .unwrap();
        let q = Embedding::zeros(4);
        // zero query: all scores 0, order by doc id
        let hits = store.search_topk(&q, 10).unwrap();
        assert_eq!(hits.len(), 6);
        for w in hits.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
        assert!(hits.iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn search_matches_exhaustive_sort_oracle() {
        let params = EncoderParams::init(64, 8, false, 9);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("r", 10, 64), &params, IndexMode::Compat)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Embedding::new((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let hits = store.search_topk(&q, 4).unwrap();

        let mut oracle: Vec<(DocId, f64)> = store
            .records()
            .map(|(id, d)| (id.clone(), geometry::dot(&q, &d.embedding).unwrap()))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        oracle.truncate(4);
        assert_eq!(hits, oracle);
    }

    #[test]
    fn search_upto_filters_by_arrival_session() {
        let params = EncoderParams::init(32, 4, false, 3);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 3, 32), &params, IndexMode::Compat)
            .unwrap();
        store
            .upsert_session(1, &session_docs("b", 3, 32), &params, IndexMode::Compat)
            .unwrap();
        let q = Embedding::zeros(4);
        assert_eq!(store.search_topk_upto(&q, 10, 0).unwrap().len(), 3);
        assert_eq!(store.search_topk_upto(&q, 10, 1).unwrap().len(), 6);
    }

    #[test]
    fn compat_embeddings_are_immutable_across_sessions() {
        let f = 64;
        let mut params = EncoderParams::init(f, 8, false, 7);
        let mut store = EmbeddingStore::new();
        store
            .upsert_session(0, &session_docs("a", 5, f), &params, IndexMode::Compat)
            .unwrap();
        let digest0 = store.session_digest(0);
        let before: Vec<Vec<f64>> = store
            .records()
            .map(|(_, d)| d.embedding.as_slice().to_vec())
            .collect();

        // training happens between sessions
        let mut grads = crate::encoder::Gradients::new(8);
        grads
            .document
            .accumulate(&feats("a token1 shared", f), &[1.0; 8], 1.0);
        params.sgd_step(&grads, 0.5).unwrap();
        store
            .upsert_session(1, &session_docs("b", 5, f), &params, IndexMode::Compat)
            .unwrap();

        assert_eq!(store.session_digest(0), digest0);
        let after: Vec<Vec<f64>> = store
            .records()
            .filter(|(_, d)| d.session_added == 0)
            .map(|(_, d)| d.embedding.as_slice().to_vec())
            .collect();
        assert_eq!(before, after);

        // a rebuild, by contrast, rewrites them
        store
            .upsert_session(2, &[], &params, IndexMode::Rebuild)
            .unwrap();
        assert_ne!(store.session_digest(0), digest0);
    }
}
