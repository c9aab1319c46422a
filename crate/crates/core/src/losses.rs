//! Training objectives with analytic gradients and a finite-difference
//! checker.
//!
//! Four losses cover the update modes:
//!
//! - [`contrastive_loss`]: softmax cross-entropy over the positive plus all
//!   negatives, everything re-encoded live (no compatibility).
//! - [`rank_loss_compat`]: same listwise shape, but the positive and memory
//!   negatives keep their frozen embeddings; only the query tower and the
//!   new negatives' document rows learn.
//! - [`embed_align_loss`]: pointwise L2 pull of the document tower toward
//!   the frozen embeddings of previously indexed documents.
//! - [`rank_align_loss`]: KL divergence between the ranking distribution
//!   induced by the frozen-old/live-new scores and the all-live one.
//!   Gradients flow through both distributions (bidirectional supervision);
//!   a detach toggle exists to block the reference side's live scores.
//!
//! [`total_compat_loss`] combines the compatible ranking loss with an
//! alignment term weighted by lambda, sharing one normalizer computation.
//! All softmaxes subtract the max score before exponentiation.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderParams, FeatureVector, Gradients, Tower};
use crate::geometry::{Embedding, GeometryError};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frozen embedding missing for candidate {0}")]
    MissingFrozenEmbedding(usize),
    #[error("instance mode does not allow this loss")]
    ModeMismatch,
    #[error("non-finite loss or score")]
    NonFinite,
    #[error("finite-difference epsilon {0} outside [1e-6, 1e-3]")]
    InvalidEpsilon(f64),
}

/// Whether frozen embeddings of previous documents are in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompatMode {
    NoCompat,
    Compat,
}

/// One candidate document: features for live encoding plus the frozen
/// embedding from the index when one exists.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub features: FeatureVector,
    pub frozen: Option<Embedding>,
}

impl Candidate {
    pub fn live(features: FeatureVector) -> Self {
        Self {
            features,
            frozen: None,
        }
    }

    pub fn with_frozen(features: FeatureVector, frozen: Embedding) -> Self {
        Self {
            features,
            frozen: Some(frozen),
        }
    }
}

/// One training step's inputs: the query, its labeled positive, freshly
/// selected new negatives (always re-encoded), and replayed memory
/// negatives (frozen embeddings present in compat mode).
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub query: FeatureVector,
    pub positive: Candidate,
    pub new_negatives: Vec<Candidate>,
    pub memory_negatives: Vec<Candidate>,
    pub mode: CompatMode,
}

impl TrainingInstance {
    fn candidate_count(&self) -> usize {
        1 + self.new_negatives.len() + self.memory_negatives.len()
    }
}

/// Selects which alignment term accompanies the compatible ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignKind {
    None,
    Embedding,
    Ranking,
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda: f64,
    pub align: AlignKind,
    /// Blocks gradient flow through the reference distribution's live
    /// new-document scores in the ranking alignment.
    pub detach_reference: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            align: AlignKind::Ranking,
            detach_reference: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
}

/// Candidates in canonical order: positive, new negatives, memory
/// negatives. `new` marks the live-only (new-data) positions.
struct Prepared<'a> {
    e_q: Embedding,
    feats: Vec<&'a FeatureVector>,
    live: Vec<Embedding>,
    frozen: Vec<Option<&'a Embedding>>,
    new: Vec<bool>,
    dim: usize,
}

impl<'a> Prepared<'a> {
    fn build(inst: &'a TrainingInstance, params: &EncoderParams) -> Result<Self, LossError> {
        let e_q = params.encode(&inst.query, Tower::Query)?;
        let mut feats = Vec::with_capacity(inst.candidate_count());
        let mut frozen = Vec::with_capacity(inst.candidate_count());
        let mut new = Vec::with_capacity(inst.candidate_count());
        feats.push(&inst.positive.features);
        frozen.push(inst.positive.frozen.as_ref());
        new.push(false);
        for c in &inst.new_negatives {
            feats.push(&c.features);
            frozen.push(c.frozen.as_ref());
            new.push(true);
        }
        for c in &inst.memory_negatives {
            feats.push(&c.features);
            frozen.push(c.frozen.as_ref());
            new.push(false);
        }
        let live = feats
            .iter()
            .map(|f| params.encode(f, Tower::Document))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            e_q,
            feats,
            live,
            frozen,
            new,
            dim: params.dim() as usize,
        })
    }

    fn len(&self) -> usize {
        self.feats.len()
    }

    /// Live score of candidate `i`.
    fn live_score(&self, i: usize) -> Result<f64, LossError> {
        Ok(crate::geometry::dot(&self.e_q, &self.live[i])?)
    }

    /// Score under the compat convention: frozen embedding for old
    /// documents, live encoding for new ones.
    fn ref_score(&self, i: usize) -> Result<f64, LossError> {
        if self.new[i] {
            self.live_score(i)
        } else {
            let frozen = self.frozen[i].ok_or(LossError::MissingFrozenEmbedding(i))?;
            Ok(crate::geometry::dot(&self.e_q, frozen)?)
        }
    }

    /// The document-side vector that multiplies `e_q` in the compat score.
    fn ref_vector(&self, i: usize) -> &Embedding {
        if self.new[i] {
            &self.live[i]
        } else {
            self.frozen[i].expect("checked by ref_score")
        }
    }

    fn check_finite(scores: &[f64]) -> Result<(), LossError> {
        if scores.iter().any(|s| !s.is_finite()) {
            Err(LossError::NonFinite)
        } else {
            Ok(())
        }
    }
}

fn axpy(acc: &mut [f64], scale: f64, v: &Embedding) {
    for (a, x) in acc.iter_mut().zip(v.as_slice()) {
        *a += scale * x;
    }
}

/// Standard contrastive objective: negative log-softmax of the positive's
/// live score over all candidates. In-batch negatives are omitted.
pub fn contrastive_loss(
    inst: &TrainingInstance,
    params: &EncoderParams,
) -> Result<LossOutput, LossError> {
    if inst.mode != CompatMode::NoCompat {
        return Err(LossError::ModeMismatch);
    }
    let p = Prepared::build(inst, params)?;
    let scores: Vec<f64> = (0..p.len())
        .map(|i| p.live_score(i))
        .collect::<Result<_, _>>()?;
    Prepared::check_finite(&scores)?;
    let lp = math::log_softmax(&scores);
    let loss = -lp[0];
    if !loss.is_finite() {
        return Err(LossError::NonFinite);
    }

    let mut grads = Gradients::new(p.dim);
    let mut g_q = vec![0.0; p.dim];
    for i in 0..p.len() {
        let dscore = math::exp(lp[i]) - if i == 0 { 1.0 } else { 0.0 };
        axpy(&mut g_q, dscore, &p.live[i]);
        grads.document.accumulate(p.feats[i], p.e_q.as_slice(), dscore);
    }
    grads.query.accumulate(&inst.query, &g_q, 1.0);
    Ok(LossOutput { loss, grads })
}

/// Compatible ranking loss: the positive and memory negatives keep their
/// frozen embeddings inside the softmax, new negatives are scored live.
/// Gradients reach the query tower through every term but the document
/// tower only through the new negatives.
pub fn rank_loss_compat(
    inst: &TrainingInstance,
    params: &EncoderParams,
) -> Result<LossOutput, LossError> {
    if inst.mode != CompatMode::Compat {
        return Err(LossError::ModeMismatch);
    }
    let p = Prepared::build(inst, params)?;
    rank_loss_prepared(inst, &p)
}

fn rank_loss_prepared(
    inst: &TrainingInstance,
    p: &Prepared<'_>,
) -> Result<LossOutput, LossError> {
    let scores: Vec<f64> = (0..p.len())
        .map(|i| p.ref_score(i))
        .collect::<Result<_, _>>()?;
    Prepared::check_finite(&scores)?;
    let lp = math::log_softmax(&scores);
    let loss = -lp[0];
    if !loss.is_finite() {
        return Err(LossError::NonFinite);
    }

    let mut grads = Gradients::new(p.dim);
    let mut g_q = vec![0.0; p.dim];
    for i in 0..p.len() {
        let dscore = math::exp(lp[i]) - if i == 0 { 1.0 } else { 0.0 };
        axpy(&mut g_q, dscore, p.ref_vector(i));
        if p.new[i] {
            grads.document.accumulate(p.feats[i], p.e_q.as_slice(), dscore);
        }
    }
    grads.query.accumulate(&inst.query, &g_q, 1.0);
    Ok(LossOutput { loss, grads })
}

/// Pointwise alignment: half squared L2 distance between the live document
/// encodings of previously indexed candidates and their frozen embeddings.
/// Gradients reach the document tower only.
pub fn embed_align_loss(
    inst: &TrainingInstance,
    params: &EncoderParams,
) -> Result<LossOutput, LossError> {
    if inst.mode != CompatMode::Compat {
        return Err(LossError::ModeMismatch);
    }
    let p = Prepared::build(inst, params)?;
    embed_align_prepared(&p)
}

fn embed_align_prepared(p: &Prepared<'_>) -> Result<LossOutput, LossError> {
    let mut grads = Gradients::new(p.dim);
    let mut loss = 0.0;
    for i in 0..p.len() {
        if p.new[i] {
            continue;
        }
        let frozen = p.frozen[i].ok_or(LossError::MissingFrozenEmbedding(i))?;
        let diff: Vec<f64> = p.live[i]
            .as_slice()
            .iter()
            .zip(frozen.as_slice())
            .map(|(l, f)| l - f)
            .collect();
        loss += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        grads.document.accumulate(p.feats[i], &diff, 1.0);
    }
    if !loss.is_finite() {
        return Err(LossError::NonFinite);
    }
    Ok(LossOutput { loss, grads })
}

/// Listwise alignment: `KL(p || p')` between the ranking distribution with
/// frozen old documents (`p`) and the all-live distribution (`p'`),
/// computed in log space. Both distributions carry gradients unless
/// `detach_reference` blocks the reference side's live new-document scores.
pub fn rank_align_loss(
    inst: &TrainingInstance,
    params: &EncoderParams,
    detach_reference: bool,
) -> Result<LossOutput, LossError> {
    if inst.mode != CompatMode::Compat {
        return Err(LossError::ModeMismatch);
    }
    let p = Prepared::build(inst, params)?;
    rank_align_prepared(inst, &p, detach_reference)
}

fn rank_align_prepared(
    inst: &TrainingInstance,
    p: &Prepared<'_>,
    detach_reference: bool,
) -> Result<LossOutput, LossError> {
    let ref_scores: Vec<f64> = (0..p.len())
        .map(|i| p.ref_score(i))
        .collect::<Result<_, _>>()?;
    let live_scores: Vec<f64> = (0..p.len())
        .map(|i| p.live_score(i))
        .collect::<Result<_, _>>()?;
    Prepared::check_finite(&ref_scores)?;
    Prepared::check_finite(&live_scores)?;

    let lp_ref = math::log_softmax(&ref_scores);
    let lp_live = math::log_softmax(&live_scores);
    let probs_ref: Vec<f64> = lp_ref.iter().map(|&l| math::exp(l)).collect();
    let kl: f64 = (0..p.len())
        .map(|i| probs_ref[i] * (lp_ref[i] - lp_live[i]))
        .sum();
    if !kl.is_finite() {
        return Err(LossError::NonFinite);
    }

    let mut grads = Gradients::new(p.dim);
    let mut g_q = vec![0.0; p.dim];
    for i in 0..p.len() {
        // d KL / d ref_score_i = p_i * ((log p_i - log p'_i) - KL)
        let d_ref = if detach_reference && p.new[i] {
            0.0
        } else {
            probs_ref[i] * ((lp_ref[i] - lp_live[i]) - kl)
        };
        // d KL / d live_score_i = p'_i - p_i
        let d_live = math::exp(lp_live[i]) - probs_ref[i];

        if d_ref != 0.0 {
            axpy(&mut g_q, d_ref, p.ref_vector(i));
            if p.new[i] {
                grads.document.accumulate(p.feats[i], p.e_q.as_slice(), d_ref);
            }
        }
        axpy(&mut g_q, d_live, &p.live[i]);
        grads.document.accumulate(p.feats[i], p.e_q.as_slice(), d_live);
    }
    grads.query.accumulate(&inst.query, &g_q, 1.0);
    Ok(LossOutput { loss: kl, grads })
}

/// Overall compatible objective: the ranking loss plus `lambda` times the
/// configured alignment term. Reference scores and their normalizer are
/// computed once and shared between the ranking loss and the ranking
/// alignment.
pub fn total_compat_loss(
    inst: &TrainingInstance,
    params: &EncoderParams,
    cfg: &LossConfig,
) -> Result<LossOutput, LossError> {
    if inst.mode != CompatMode::Compat {
        return Err(LossError::ModeMismatch);
    }
    let p = Prepared::build(inst, params)?;
    let mut out = rank_loss_prepared(inst, &p)?;
    let align = match cfg.align {
        AlignKind::None => None,
        AlignKind::Embedding => Some(embed_align_prepared(&p)?),
        AlignKind::Ranking => Some(rank_align_prepared(inst, &p, cfg.detach_reference)?),
    };
    if let Some(mut align) = align {
        out.loss += cfg.lambda * align.loss;
        align.grads.scale(cfg.lambda);
        out.grads.add(&align.grads);
    }
    Ok(out)
}

/// Central finite differences over every weight row reachable from the
/// instance's features (both towers), reporting the maximum relative error
/// against the analytic gradients. Rows outside the analytic support are
/// probed too, so spurious gradient flow is caught.
pub fn finite_diff_check<F>(
    loss_fn: F,
    inst: &TrainingInstance,
    params: &EncoderParams,
    epsilon: f64,
) -> Result<f64, LossError>
where
    F: Fn(&TrainingInstance, &EncoderParams) -> Result<LossOutput, LossError>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let analytic = loss_fn(inst, params)?;
    let dim = params.dim() as usize;

    let mut query_rows: Vec<u32> = inst.query.iter().map(|(i, _)| i).collect();
    query_rows.sort_unstable();
    query_rows.dedup();
    let mut doc_rows: Vec<u32> = Vec::new();
    let all_feats = core::iter::once(&inst.positive.features)
        .chain(inst.new_negatives.iter().map(|c| &c.features))
        .chain(inst.memory_negatives.iter().map(|c| &c.features));
    for f in all_feats {
        doc_rows.extend(f.iter().map(|(i, _)| i));
    }
    doc_rows.sort_unstable();
    doc_rows.dedup();

    let mut max_rel: f64 = 0.0;
    let mut probe = |tower: Tower, rows: &[u32]| -> Result<(), LossError> {
        for &row in rows {
            for col in 0..dim {
                let plus = params.with_nudged_weight(tower, row, col, epsilon);
                let minus = params.with_nudged_weight(tower, row, col, -epsilon);
                let fd = (loss_fn(inst, &plus)?.loss - loss_fn(inst, &minus)?.loss)
                    / (2.0 * epsilon);
                let a = if params.shared() {
                    analytic.grads.query.entry(row, col) + analytic.grads.document.entry(row, col)
                } else {
                    match tower {
                        Tower::Query => analytic.grads.query.entry(row, col),
                        Tower::Document => analytic.grads.document.entry(row, col),
                    }
                };
                let rel = math::abs(a - fd) / math::abs(a).max(math::abs(fd)).max(1e-4);
                max_rel = max_rel.max(rel);
            }
        }
        Ok(())
    };
    probe(Tower::Query, &query_rows)?;
    probe(Tower::Document, &doc_rows)?;
    Ok(max_rel)
}
