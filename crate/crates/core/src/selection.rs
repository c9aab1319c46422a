//! Support-negative selection from newly arrived data.
//!
//! Each training step first narrows a session's documents to a BM25
//! candidate pool (with a seeded upsample so selection never scans the
//! whole collection), then picks the negatives that jointly maximize
//! `alpha * PSS + (1 - alpha) * ISD`: high positive-sample superiority
//! steers away from unlabeled positives, high diversity away from
//! redundant picks. Candidate embeddings always come from the latest model.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{self, Embedding, GeometryError};
use crate::lexical::InvertedIndex;
use crate::DocId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid selection config: {0}")]
    InvalidConfig(&'static str),
}

/// Knobs for one selection step.
#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    /// Mixing weight of the superiority criterion; 1 is pure PSS, 0 pure
    /// diversity.
    pub alpha: f64,
    /// Number of new negatives picked per step.
    pub n_new: usize,
    /// BM25 hits considered before upsampling.
    pub pool_size: usize,
    /// The upsampled pool holds `upsample_factor * n_new` candidates.
    pub upsample_factor: usize,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SelectionError::InvalidConfig("alpha outside [0, 1]"));
        }
        if self.n_new == 0 {
            return Err(SelectionError::InvalidConfig("n_new must be at least 1"));
        }
        if self.pool_size < self.upsample_factor * self.n_new {
            return Err(SelectionError::InvalidConfig(
                "pool_size smaller than upsample_factor * n_new",
            ));
        }
        Ok(())
    }
}

/// BM25-filtered, seeded-upsampled candidate pool for one query, restricted
/// to `session_docs` with the query's labeled positives excluded. Returned
/// ids are sorted ascending; an empty result means the caller skips the
/// query this step.
pub fn candidate_pool(
    index: &InvertedIndex,
    query_tokens: &[alloc::string::String],
    session_docs: &BTreeSet<DocId>,
    labeled_positives: &BTreeSet<DocId>,
    cfg: &SelectionConfig,
    seed: u64,
) -> Vec<DocId> {
    let hits = index.bm25_topk_filtered(query_tokens, cfg.pool_size, |id| {
        session_docs.contains(id) && !labeled_positives.contains(id)
    });
    let target = cfg.upsample_factor * cfg.n_new;
    let mut ids: Vec<DocId> = hits.into_iter().map(|(id, _)| id).collect();
    if ids.len() > target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // partial Fisher-Yates: the first `target` positions become a
        // uniform sample without replacement
        for i in 0..target {
            let j = rng.gen_range(i..ids.len());
            ids.swap(i, j);
        }
        ids.truncate(target);
    }
    ids.sort();
    ids
}

/// Indices of the selected negatives plus bookkeeping for instrumentation.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// Indices into the candidate pool, in selection-score order.
    pub selected: Vec<usize>,
    /// Set when the pool was smaller than the requested count.
    pub short: bool,
    pub pss_evals: u64,
    pub isd_evals: u64,
}

/// Picks the `n_new` pool members maximizing the mixed criterion
/// `alpha * PSS(d, d_pos; q) + (1 - alpha) * ISD(d, pool; q)`, where
/// diversity is measured against the whole pool (the self term contributes
/// zero). Ties break by ascending document id. Criteria with zero weight
/// are not evaluated at all, so the degenerate settings reduce to sorting
/// by the remaining one.
pub fn select_new_negatives(
    pool: &[(DocId, Embedding)],
    q_emb: &Embedding,
    d_pos: &Embedding,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome, SelectionError> {
    cfg.validate()?;
    let mut pss_evals = 0;
    let mut isd_evals = 0;
    let pool_embs: Vec<Embedding> = pool.iter().map(|(_, e)| e.clone()).collect();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for (i, (_, emb)) in pool.iter().enumerate() {
        let mut score = 0.0;
        if cfg.alpha > 0.0 {
            score += cfg.alpha * geometry::pss(emb, d_pos, q_emb)?;
            pss_evals += 1;
        }
        if cfg.alpha < 1.0 {
            score += (1.0 - cfg.alpha) * geometry::isd(emb, &pool_embs, q_emb)?;
            isd_evals += 1;
        }
        scored.push((score, i));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pool[a.1].0.cmp(&pool[b.1].0))
    });
    let short = scored.len() < cfg.n_new;
    Ok(SelectionOutcome {
        selected: scored.into_iter().take(cfg.n_new).map(|(_, i)| i).collect(),
        short,
        pss_evals,
        isd_evals,
    })
}
