//! Per-query replay memory with reservoir fill and diversity-driven
//! updates.
//!
//! Each training query owns up to `capacity` slots holding historical
//! support negatives together with the embedding in force when they were
//! stored (or last refreshed). During the initial session slots fill by
//! classic reservoir sampling over the mined negatives. At the end of every
//! later session the buffer is rescored against randomly sampled anchor
//! entries: temporary candidates with the highest anchor diversity replace
//! the stored entries with the lowest, and a replacement is skipped when
//! the candidate would not strictly improve on the entry it evicts. The
//! temporary memory is emptied afterwards.
//!
//! Whether diversity runs on the stored (frozen) embeddings or on fresh
//! re-encodings follows the same compatibility rule everywhere, expressed
//! by [`MemoryView`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderParams, FeatureVector, Tower};
use crate::geometry::{self, Embedding, GeometryError};
use crate::{DocId, QueryId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("no memory slots for query {0}")]
    UnknownQuery(QueryId),
}

/// One stored negative: document id, hashed features for re-encoding, the
/// frozen embedding, and the session in which it entered the buffer.
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub doc_id: DocId,
    pub features: FeatureVector,
    pub embedding: Embedding,
    pub session_stored: u32,
}

/// Source of embeddings for diversity scoring: stored frozen vectors when
/// learning is backward-compatible, fresh encodings otherwise.
#[derive(Clone, Copy)]
pub enum MemoryView<'a> {
    Frozen,
    Reencode(&'a EncoderParams),
}

impl MemoryView<'_> {
    fn embedding_of(&self, entry: &MemoryEntry) -> Result<Embedding, MemoryError> {
        match self {
            MemoryView::Frozen => Ok(entry.embedding.clone()),
            MemoryView::Reencode(params) => {
                Ok(params.encode(&entry.features, Tower::Document)?)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct QuerySlots {
    entries: Vec<MemoryEntry>,
    seen: u64,
}

/// Replay selection result; `short` flags a buffer smaller than the
/// requested count.
#[derive(Debug, Clone)]
pub struct ReplaySelection {
    pub entries: Vec<MemoryEntry>,
    pub short: bool,
    pub isd_evals: u64,
}

/// Outcome of one per-query memory update, for auditing the replacement
/// guarantee: min inserted diversity >= max evicted diversity.
#[derive(Debug, Clone, Default)]
pub struct UpdateOutcome {
    pub inserted: Vec<(DocId, f64)>,
    pub evicted: Vec<(DocId, f64)>,
    pub isd_evals: u64,
}

impl UpdateOutcome {
    pub fn violates_guarantee(&self) -> bool {
        let min_in = self
            .inserted
            .iter()
            .map(|(_, s)| *s)
            .fold(f64::INFINITY, f64::min);
        let max_out = self
            .evicted
            .iter()
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        !self.inserted.is_empty() && !self.evicted.is_empty() && min_in < max_out
    }
}

/// Bounded per-query slots of stored negatives.
#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    slots: BTreeMap<QueryId, QuerySlots>,
    capacity: usize,
    anchor_count: usize,
    replace_count: usize,
}

impl MemoryBuffer {
    /// Buffer with `capacity` slots per query; anchor and replacement
    /// counts default to a third of the capacity.
    pub fn new(capacity: usize) -> Self {
        let third = (capacity / 3).max(1);
        Self::with_update_params(capacity, third, third)
    }

    pub fn with_update_params(capacity: usize, anchor_count: usize, replace_count: usize) -> Self {
        Self {
            slots: BTreeMap::new(),
            capacity,
            anchor_count,
            replace_count,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_count
    }

    pub fn replace_count(&self) -> usize {
        self.replace_count
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryId> {
        self.slots.keys()
    }

    pub fn entries(&self, query: &QueryId) -> &[MemoryEntry] {
        self.slots.get(query).map_or(&[], |s| &s.entries)
    }

    pub fn len(&self, query: &QueryId) -> usize {
        self.entries(query).len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(|s| s.entries.is_empty())
    }

    pub fn seen(&self, query: &QueryId) -> u64 {
        self.slots.get(query).map_or(0, |s| s.seen)
    }

    /// Restores one query's slots from persisted state.
    pub fn restore(&mut self, query: QueryId, entries: Vec<MemoryEntry>, seen: u64) {
        self.slots.insert(query, QuerySlots { entries, seen });
    }

    /// Refreshes stored embeddings in place; used when the embeddings in
    /// force change at a session boundary.
    pub fn refresh_embeddings(
        &mut self,
        session: u32,
        params: &EncoderParams,
    ) -> Result<(), MemoryError> {
        for slots in self.slots.values_mut() {
            for e in &mut slots.entries {
                if e.session_stored == session {
                    e.embedding = params.encode(&e.features, Tower::Document)?;
                }
            }
        }
        Ok(())
    }

    /// Classic reservoir sampling over a candidate stream: the first
    /// `capacity` distinct documents are kept, the i-th thereafter replaces
    /// a uniformly random slot with probability `capacity / i`. Documents
    /// already in the buffer are skipped without consuming randomness, so
    /// slots never hold duplicates. Repeated calls continue the same
    /// stream; the seed only drives this call's random choices.
    pub fn reservoir_fill<I>(&mut self, query: &QueryId, stream: I, seed: u64)
    where
        I: IntoIterator<Item = MemoryEntry>,
    {
        let capacity = self.capacity;
        let slots = self.slots.entry(query.clone()).or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in stream {
            if slots.entries.iter().any(|e| e.doc_id == entry.doc_id) {
                continue;
            }
            slots.seen += 1;
            if slots.entries.len() < capacity {
                slots.entries.push(entry);
            } else {
                let j = rng.gen_range(0..slots.seen);
                if (j as usize) < capacity {
                    slots.entries[j as usize] = entry;
                }
            }
        }
    }

    /// Replay selection: the `n` stored entries with the maximum diversity
    /// against the freshly selected new negatives, ties broken by ascending
    /// document id. A buffer smaller than `n` returns everything with the
    /// `short` flag set.
    pub fn select_replay(
        &self,
        query: &QueryId,
        new_negatives: &[Embedding],
        q_emb: &Embedding,
        n: usize,
        view: MemoryView<'_>,
    ) -> Result<ReplaySelection, MemoryError> {
        let entries = self.entries(query);
        if entries.is_empty() || n == 0 {
            return Ok(ReplaySelection {
                entries: Vec::new(),
                short: n > 0,
                isd_evals: 0,
            });
        }
        let mut scored: Vec<(f64, &MemoryEntry)> = Vec::with_capacity(entries.len());
        let mut isd_evals = 0;
        for e in entries {
            let emb = view.embedding_of(e)?;
            let s = geometry::isd(&emb, new_negatives, q_emb)?;
            isd_evals += 1;
            scored.push((s, e));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
        let short = scored.len() < n;
        Ok(ReplaySelection {
            entries: scored
                .into_iter()
                .take(n)
                .map(|(_, e)| e.clone())
                .collect(),
            short,
            isd_evals,
        })
    }

    /// End-of-session update for one query: sample anchors from the stored
    /// entries, score every non-anchor entry and every candidate by
    /// diversity against the anchors, then replace up to `replace_count`
    /// lowest-diversity entries with the highest-diversity candidates.
    /// Anchors are the fixed reference frame and are never evicted. A
    /// candidate that would not strictly improve on the entry it replaces
    /// is skipped.
    pub fn update_query(
        &mut self,
        query: &QueryId,
        candidates: Vec<MemoryEntry>,
        q_emb: &Embedding,
        view: MemoryView<'_>,
        seed: u64,
    ) -> Result<UpdateOutcome, MemoryError> {
        let mut outcome = UpdateOutcome::default();
        let mut seen_ids: BTreeSet<DocId> = self
            .entries(query)
            .iter()
            .map(|e| e.doc_id.clone())
            .collect();
        let mut fresh: Vec<MemoryEntry> = Vec::new();
        for c in candidates {
            if seen_ids.insert(c.doc_id.clone()) {
                fresh.push(c);
            }
        }
        if fresh.is_empty() {
            return Ok(outcome);
        }
        let anchor_count = self.anchor_count;
        let replace_count = self.replace_count;
        // replacement-only update: an empty buffer has nothing to evict
        let Some(slots) = self.slots.get_mut(query) else {
            return Ok(outcome);
        };
        if slots.entries.is_empty() {
            return Ok(outcome);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = anchor_count.min(slots.entries.len());
        let mut indices: Vec<usize> = (0..slots.entries.len()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        let anchor_idx: BTreeSet<usize> = indices[..k].iter().copied().collect();
        let anchors: Vec<Embedding> = anchor_idx
            .iter()
            .map(|&i| view.embedding_of(&slots.entries[i]))
            .collect::<Result<_, _>>()?;

        // lowest-diversity stored entries first (anchors excluded)
        let mut evictable: Vec<(f64, usize)> = Vec::new();
        for (i, e) in slots.entries.iter().enumerate() {
            if anchor_idx.contains(&i) {
                continue;
            }
            let emb = view.embedding_of(e)?;
            let s = geometry::isd(&emb, &anchors, q_emb)?;
            outcome.isd_evals += 1;
            evictable.push((s, i));
        }
        evictable.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| slots.entries[a.1].doc_id.cmp(&slots.entries[b.1].doc_id))
        });

        // highest-diversity candidates first
        let mut incoming: Vec<(f64, MemoryEntry)> = Vec::new();
        for c in fresh {
            let emb = view.embedding_of(&c)?;
            let s = geometry::isd(&emb, &anchors, q_emb)?;
            outcome.isd_evals += 1;
            incoming.push((s, c));
        }
        incoming.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));

        let n3 = replace_count.min(evictable.len()).min(incoming.len());
        for ((cand_isd, cand), (entry_isd, slot)) in
            incoming.into_iter().zip(evictable.into_iter()).take(n3)
        {
            if cand_isd <= entry_isd {
                break; // sorted pairing; later pairs cannot improve either
            }
            let inserted_id = cand.doc_id.clone();
            let old = core::mem::replace(&mut slots.entries[slot], cand);
            outcome.evicted.push((old.doc_id, entry_isd));
            outcome.inserted.push((inserted_id, cand_isd));
        }
        Ok(outcome)
    }
}

/// Temporary per-session memory accumulating the selected new negatives as
/// update candidates; drained and emptied by the session-end update.
#[derive(Debug, Clone, Default)]
pub struct TempMemory {
    pending: BTreeMap<QueryId, Vec<MemoryEntry>>,
}

impl TempMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, query: &QueryId, entry: MemoryEntry) {
        let list = self.pending.entry(query.clone()).or_default();
        if !list.iter().any(|e| e.doc_id == entry.doc_id) {
            list.push(entry);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pending.values().all(Vec::is_empty)
    }

    pub fn candidate_count(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (QueryId, Vec<MemoryEntry>)> {
        core::mem::take(&mut self.pending).into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn entry(id: &str, emb: &[f64]) -> MemoryEntry {
        MemoryEntry {
            doc_id: DocId::new(id),
            features: FeatureVector::empty(),
            embedding: Embedding::new(emb.to_vec()).unwrap(),
            session_stored: 0,
        }
    }

    fn qid() -> QueryId {
        QueryId::new("q0")
    }

    #[test]
    fn reservoir_keeps_whole_stream_below_capacity() {
        let mut buf = MemoryBuffer::new(10);
        let stream: Vec<MemoryEntry> =
            (0..7).map(|i| entry(&format!("d{i}"), &[i as f64])).collect();
        buf.reservoir_fill(&qid(), stream, 1);
        assert_eq!(buf.len(&qid()), 7);
        assert_eq!(buf.seen(&qid()), 7);
    }

    #[test]
    fn reservoir_is_deterministic_under_seed() {
        let stream = || (0..50).map(|i| entry(&format!("d{i}"), &[i as f64]));
        let mut a = MemoryBuffer::new(5);
        let mut b = MemoryBuffer::new(5);
        a.reservoir_fill(&qid(), stream(), 99);
        b.reservoir_fill(&qid(), stream(), 99);
        let ids = |buf: &MemoryBuffer| -> Vec<DocId> {
            buf.entries(&qid()).iter().map(|e| e.doc_id.clone()).collect()
        };
        assert_eq!(ids(&a), ids(&b));
        let mut c = MemoryBuffer::new(5);
        c.reservoir_fill(&qid(), stream(), 100);
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn reservoir_skips_duplicates() {
        let mut buf = MemoryBuffer::new(4);
        buf.reservoir_fill(&qid(), (0..3).map(|i| entry(&format!("d{i}"), &[0.0])), 5);
        buf.reservoir_fill(&qid(), (0..3).map(|i| entry(&format!("d{i}"), &[0.0])), 6);
        assert_eq!(buf.len(&qid()), 3);
        assert_eq!(buf.seen(&qid()), 3);
    }

    #[test]
    fn reservoir_inclusion_is_roughly_uniform() {
        // small version of the acceptance check: 100-item stream, 10 slots
        let n = 10usize;
        let total = 100usize;
        let trials = 2000usize;
        let mut hits = vec![0u32; total];
        for t in 0..trials {
            let mut buf = MemoryBuffer::new(n);
            buf.reservoir_fill(
                &qid(),
                (0..total).map(|i| entry(&format!("d{i:03}"), &[i as f64])),
                t as u64,
            );
            for e in buf.entries(&qid()) {
                let idx: usize = e.doc_id.as_str()[1..].parse().unwrap();
                hits[idx] += 1;
            }
        }
        let p = n as f64 / total as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        for (i, h) in hits.iter().enumerate() {
            let freq = f64::from(*h) / trials as f64;
            assert!(
                (freq - p).abs() < 5.0 * sigma,
                "item {i}: freq {freq} vs expected {p}"
            );
        }
    }

    #[test]
    fn select_replay_returns_all_when_n_covers_buffer() {
        let mut buf = MemoryBuffer::new(5);
        buf.reservoir_fill(
            &qid(),
            (0..3).map(|i| entry(&format!("d{i}"), &[0.0, i as f64])),
            0,
        );
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let d_new = [Embedding::new(vec![0.0, 0.0]).unwrap()];
        let sel = buf
            .select_replay(&qid(), &d_new, &q, 3, MemoryView::Frozen)
            .unwrap();
        assert_eq!(sel.entries.len(), 3);
        assert!(!sel.short);
    }

    #[test]
    fn select_replay_orders_by_perpendicular_diversity() {
        let mut buf = MemoryBuffer::new(5);
        // q = (1, 0): second component is the perpendicular part
        for (id, perp) in [("a", 1.0), ("b", 5.0), ("c", 2.0)] {
            buf.reservoir_fill(&qid(), core::iter::once(entry(id, &[0.0, perp])), 0);
        }
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let d_new = [Embedding::new(vec![3.0, 0.0]).unwrap()];
        let sel = buf
            .select_replay(&qid(), &d_new, &q, 2, MemoryView::Frozen)
            .unwrap();
        let ids: Vec<&str> = sel.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
    }

    #[test]
    fn select_replay_short_buffer_returns_all_with_flag() {
        let mut buf = MemoryBuffer::new(5);
        buf.reservoir_fill(&qid(), core::iter::once(entry("only", &[0.0, 1.0])), 0);
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let d_new = [Embedding::new(vec![0.0, 0.0]).unwrap()];
        let sel = buf
            .select_replay(&qid(), &d_new, &q, 2, MemoryView::Frozen)
            .unwrap();
        assert_eq!(sel.entries.len(), 1);
        assert!(sel.short);
    }

    #[test]
    fn update_with_empty_temp_is_noop() {
        let mut buf = MemoryBuffer::new(3);
        buf.reservoir_fill(
            &qid(),
            (0..3).map(|i| entry(&format!("d{i}"), &[0.0, i as f64])),
            0,
        );
        let before: Vec<DocId> = buf.entries(&qid()).iter().map(|e| e.doc_id.clone()).collect();
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let out = buf
            .update_query(&qid(), vec![], &q, MemoryView::Frozen, 7)
            .unwrap();
        assert!(out.inserted.is_empty() && out.evicted.is_empty());
        let after: Vec<DocId> = buf.entries(&qid()).iter().map(|e| e.doc_id.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn update_replaces_lowest_diversity_entry() {
        // entries at increasing perpendicular offsets, the candidate far
        // beyond all of them: whichever entry anchors, the candidate wins
        let mut buf = MemoryBuffer::with_update_params(3, 1, 1);
        buf.reservoir_fill(
            &qid(),
            [
                entry("d0", &[0.0, 0.1]),
                entry("d1", &[0.0, 0.5]),
                entry("d2", &[0.0, 0.9]),
            ],
            0,
        );
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let candidate = entry("far", &[0.0, 10.0]);
        let out = buf
            .update_query(&qid(), vec![candidate], &q, MemoryView::Frozen, 3)
            .unwrap();
        assert_eq!(out.inserted.len(), 1);
        assert_eq!(out.inserted[0].0, DocId::new("far"));
        assert_eq!(out.evicted.len(), 1);
        assert!(!out.violates_guarantee());
        assert!(buf
            .entries(&qid())
            .iter()
            .any(|e| e.doc_id == DocId::new("far")));
        assert_eq!(buf.len(&qid()), 3);
    }

    #[test]
    fn update_skips_candidates_that_do_not_improve() {
        let mut buf = MemoryBuffer::with_update_params(3, 1, 2);
        buf.reservoir_fill(
            &qid(),
            [
                entry("d0", &[0.0, 2.0]),
                entry("d1", &[0.0, 4.0]),
                entry("d2", &[0.0, 6.0]),
            ],
            0,
        );
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        // candidate hugging the middle: lower diversity than the extremes
        let out = buf
            .update_query(
                &qid(),
                vec![entry("near", &[0.0, 3.9])],
                &q,
                MemoryView::Frozen,
                11,
            )
            .unwrap();
        assert!(out.inserted.len() <= 1);
        assert!(!out.violates_guarantee());
    }

    #[test]
    fn update_never_duplicates_or_overflows() {
        let mut buf = MemoryBuffer::with_update_params(4, 1, 2);
        buf.reservoir_fill(
            &qid(),
            (0..4).map(|i| entry(&format!("d{i}"), &[0.0, i as f64])),
            0,
        );
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        // one candidate duplicates a stored id, one is fresh
        let out = buf
            .update_query(
                &qid(),
                vec![entry("d2", &[0.0, 50.0]), entry("new", &[0.0, 40.0])],
                &q,
                MemoryView::Frozen,
                5,
            )
            .unwrap();
        assert_eq!(buf.len(&qid()), 4);
        let ids: BTreeSet<&str> = buf.entries(&qid()).iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids.len(), 4);
        assert!(!out.violates_guarantee());
    }

    #[test]
    fn update_guarantee_holds_across_random_rounds() {
        use rand::Rng;
        let q = Embedding::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut buf = MemoryBuffer::new(9);
        buf.reservoir_fill(
            &qid(),
            (0..9)
                .map(|i| {
                    entry(
                        &format!("seed{i}"),
                        &[0.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    )
                })
                .collect::<Vec<_>>(),
            0,
        );
        for round in 0..20 {
            let candidates: Vec<MemoryEntry> = (0..4)
                .map(|i| {
                    entry(
                        &format!("r{round}c{i}"),
                        &[0.0, rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    )
                })
                .collect();
            let out = buf
                .update_query(&qid(), candidates, &q, MemoryView::Frozen, round)
                .unwrap();
            assert!(!out.violates_guarantee(), "round {round}");
            assert_eq!(buf.len(&qid()), 9);
        }
    }

    #[test]
    fn temp_memory_dedups_and_drains() {
        let mut temp = TempMemory::new();
        temp.push(&qid(), entry("a", &[0.0]));
        temp.push(&qid(), entry("a", &[0.0]));
        temp.push(&qid(), entry("b", &[0.0]));
        assert_eq!(temp.candidate_count(), 2);
        let drained: Vec<_> = temp.drain().collect();
        assert_eq!(drained.len(), 1);
        assert_eq!(drained[0].1.len(), 2);
        assert!(temp.is_empty());
    }
}
