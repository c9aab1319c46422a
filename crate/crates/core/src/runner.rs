//! Session orchestration: the full lifelong update loop for every method
//! and baseline, plus evaluation into performance matrices.
//!
//! A run trains the initial model on the labeled session-0 pairs, then
//! processes each upcoming unlabeled session with the configured method:
//! candidate filtering, negative selection, one gradient step per training
//! pair, a memory update at the session boundary, an index upsert (compat
//! or rebuild), and evaluation of every test split seen so far. Forward
//! transfer cells are filled after the stream ends by transiently
//! re-embedding the needed collections under earlier snapshots; those
//! encodes never touch the cost ledger.
//!
//! Everything is driven by one root seed: per-purpose sub-seeds are
//! derived by hashing, so runs are reproducible bit-for-bit and per-query
//! randomness does not depend on iteration order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::benchmark::{BenchmarkError, QuerySet, SessionStream};
use crate::encoder::{featurize, EncoderError, EncoderParams, FeatureVector, Tower};
use crate::geometry::{Embedding, GeometryError};
use crate::lexical::{InvertedIndex, LexicalError};
use crate::losses::{
    self, AlignKind, Candidate, CompatMode, LossConfig, LossError, TrainingInstance,
};
use crate::math;
use crate::memory::{MemoryBuffer, MemoryEntry, MemoryError, MemoryView, TempMemory};
use crate::metrics::{LifelongSummary, MetricKind, MetricSpec, MetricsError, PerfMatrix};
use crate::selection::{self, SelectionConfig, SelectionError};
use crate::store::{EmbeddingStore, IndexMode, StoreError, StoredDoc};
use crate::{DocId, QueryId};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("labeled positive {0} is not indexed")]
    UnindexedPositive(DocId),
}

/// Update strategies: the three compatible variants, the no-compat
/// variant, the naive baselines, and experience replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    L2rVanilla,
    L2rEmb,
    L2rRank,
    L2rNoCompat,
    Initial,
    IncreTrain,
    Retrain,
    Er,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "l2r_vanilla" => Method::L2rVanilla,
            "l2r_emb" => Method::L2rEmb,
            "l2r_rank" => Method::L2rRank,
            "l2r_nocompat" | "l2r" => Method::L2rNoCompat,
            "initial" => Method::Initial,
            "incre_train" => Method::IncreTrain,
            "retrain" => Method::Retrain,
            "er" => Method::Er,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::L2rVanilla => "l2r_vanilla",
            Method::L2rEmb => "l2r_emb",
            Method::L2rRank => "l2r_rank",
            Method::L2rNoCompat => "l2r_nocompat",
            Method::Initial => "initial",
            Method::IncreTrain => "incre_train",
            Method::Retrain => "retrain",
            Method::Er => "er",
        }
    }

    pub fn all() -> &'static [Method] {
        &[
            Method::L2rVanilla,
            Method::L2rEmb,
            Method::L2rRank,
            Method::L2rNoCompat,
            Method::Initial,
            Method::IncreTrain,
            Method::Retrain,
            Method::Er,
        ]
    }

    fn diversity_selection(&self) -> bool {
        matches!(
            self,
            Method::L2rVanilla | Method::L2rEmb | Method::L2rRank | Method::L2rNoCompat
        )
    }

    fn uses_memory(&self) -> bool {
        self.diversity_selection() || *self == Method::Er
    }

    /// Compatible representation learning: frozen embeddings stay valid,
    /// only new documents are encoded into the index.
    fn compat(&self, compat_baseline: bool) -> bool {
        match self {
            Method::L2rVanilla | Method::L2rEmb | Method::L2rRank | Method::Initial => true,
            Method::L2rNoCompat | Method::Retrain => false,
            Method::IncreTrain | Method::Er => compat_baseline,
        }
    }

    fn index_mode(&self, compat_baseline: bool) -> IndexMode {
        if self.compat(compat_baseline) {
            IndexMode::Compat
        } else {
            IndexMode::Rebuild
        }
    }

    /// Alignment used in compat mode; baselines are equipped with the
    /// embedding alignment when run under the compatibility constraint.
    fn align_kind(&self) -> AlignKind {
        match self {
            Method::L2rVanilla => AlignKind::None,
            Method::L2rEmb => AlignKind::Embedding,
            Method::L2rRank => AlignKind::Ranking,
            Method::IncreTrain | Method::Er => AlignKind::Embedding,
            Method::L2rNoCompat | Method::Initial | Method::Retrain => AlignKind::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    /// Runs the ER / incremental baselines under the backward-compatible
    /// constraint (frozen index plus embedding alignment).
    pub compat_baseline: bool,
    pub dim: u32,
    pub feature_dim: u32,
    pub alpha: f64,
    pub lambda: f64,
    /// Memory slots per query (n).
    pub buffer_capacity: usize,
    /// Anchor documents sampled per memory update; defaults to a third of
    /// the capacity.
    pub anchor_count: Option<usize>,
    /// Entries replaced per memory update; same default.
    pub replace_count: Option<usize>,
    /// New negatives per step (n1).
    pub n_new: usize,
    /// Memory negatives per step (n2).
    pub n_mem: usize,
    pub lr_initial: f64,
    pub lr_upcoming: f64,
    pub epochs_initial: u32,
    pub epochs_upcoming: u32,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    /// BM25 hits considered in the initial session.
    pub pool_initial: usize,
    /// BM25 hits considered in upcoming sessions.
    pub pool_upcoming: usize,
    pub upsample_factor: usize,
    pub shared_towers: bool,
    pub detach_reference: bool,
    pub seed: u64,
    pub metrics: Vec<MetricSpec>,
    pub primary_metric: usize,
    pub eval_fwt: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::L2rRank,
            compat_baseline: false,
            dim: 32,
            feature_dim: 2048,
            alpha: 0.6,
            lambda: 1.0,
            buffer_capacity: 30,
            anchor_count: None,
            replace_count: None,
            n_new: 3,
            n_mem: 2,
            lr_initial: 5.0,
            lr_upcoming: 1.0,
            epochs_initial: 8,
            epochs_upcoming: 1,
            bm25_k1: 0.8,
            bm25_b: 0.72,
            pool_initial: 500,
            pool_upcoming: 200,
            upsample_factor: 2,
            shared_towers: false,
            detach_reference: false,
            seed: 42,
            metrics: alloc::vec![
                MetricSpec::new(MetricKind::Success, 10),
                MetricSpec::new(MetricKind::Recall, 100),
                MetricSpec::new(MetricKind::Mrr, 10),
            ],
            primary_metric: 0,
            eval_fwt: true,
        }
    }
}

impl RunConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::InvalidConfig(String::from(m)));
        if self.dim == 0 || self.feature_dim == 0 {
            return bad("dim and feature_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha outside [0, 1]");
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if self.n_new == 0 {
            return bad("n_new must be at least 1");
        }
        if self.n_mem > self.buffer_capacity {
            return bad("n_mem exceeds buffer capacity");
        }
        if self.upsample_factor == 0 {
            return bad("upsample_factor must be at least 1");
        }
        let widest = self.upsample_factor * (self.n_new + self.n_mem);
        if self.pool_initial < widest || self.pool_upcoming < self.upsample_factor * self.n_new {
            return bad("BM25 pool sizes too small for the upsampled selection");
        }
        if self.metrics.is_empty() || self.primary_metric >= self.metrics.len() {
            return bad("metrics empty or primary_metric out of range");
        }
        if self.metrics.iter().any(|m| m.cutoff == 0) {
            return bad("metric cutoffs must be at least 1");
        }
        Ok(())
    }

    fn memory_buffer(&self) -> MemoryBuffer {
        let third = (self.buffer_capacity / 3).max(1);
        MemoryBuffer::with_update_params(
            self.buffer_capacity,
            self.anchor_count.unwrap_or(third),
            self.replace_count.unwrap_or(third),
        )
    }

    fn max_cutoff(&self) -> usize {
        self.metrics.iter().map(|m| m.cutoff).max().unwrap_or(10)
    }
}

/// Per-run instrumentation.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub steps: u64,
    pub skipped_queries: u64,
    pub short_selections: u64,
    pub short_replays: u64,
    pub pss_evals: u64,
    pub isd_evals: u64,
    pub memory_update_violations: u64,
    pub memory_updates: u64,
    pub excluded_eval_queries: u64,
    /// Per-step losses of the first initial-session epoch, in step order.
    pub initial_losses: Vec<f64>,
    /// Mean training loss per session.
    pub session_mean_loss: Vec<f64>,
    /// Dev-split primary metric after each session.
    pub dev_primary: Vec<f64>,
}

/// Matrices, summaries, and accounting for one finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub matrices: Vec<PerfMatrix>,
    /// One summary per session per metric, indexed `[metric][t]`.
    pub summaries: Vec<Vec<LifelongSummary>>,
    pub cost: crate::store::CostLedger,
    pub stats: RunStats,
}

impl RunReport {
    pub fn primary(&self, cfg: &RunConfig) -> &PerfMatrix {
        &self.matrices[cfg.primary_metric]
    }

    /// Final average performance on the primary metric.
    pub fn primary_ap(&self, cfg: &RunConfig) -> f64 {
        let t = self.matrices[cfg.primary_metric].t_max();
        self.summaries[cfg.primary_metric][t].ap
    }
}

/// Everything a run leaves behind.
pub struct RunOutput {
    pub report: RunReport,
    /// Parameter snapshot after each session, `snapshots[t]` being the
    /// model in force after session `t`.
    pub snapshots: Vec<EncoderParams>,
    pub params: EncoderParams,
    pub memory: MemoryBuffer,
    pub store: EmbeddingStore,
}

fn sub_seed(root: u64, label: &str, a: u64, b: u64) -> u64 {
    let mut h = math::fnv1a64_seeded(root ^ 0x51ed_270b_9f4c_1d37, label.as_bytes());
    h = math::fnv1a64_seeded(h, &a.to_le_bytes());
    math::fnv1a64_seeded(h, &b.to_le_bytes())
}

fn query_seed(root: u64, label: &str, session: u32, epoch: u32, q: &QueryId) -> u64 {
    let base = sub_seed(root, label, u64::from(session), u64::from(epoch));
    math::fnv1a64_seeded(base, q.as_str().as_bytes())
}

/// One labeled training query prepared for fast reuse; each step samples
/// one of its relevant documents as the positive.
struct TrainQuery {
    id: QueryId,
    tokens: Vec<String>,
    features: FeatureVector,
    positives: Vec<DocId>,
    labeled: BTreeSet<DocId>,
}

impl TrainQuery {
    fn sample_positive(&self, rng: &mut ChaCha8Rng) -> &DocId {
        &self.positives[rng.gen_range(0..self.positives.len())]
    }
}

struct State<'a> {
    cfg: &'a RunConfig,
    stream: &'a SessionStream,
    params: EncoderParams,
    memory: MemoryBuffer,
    temp: TempMemory,
    store: EmbeddingStore,
    lex: InvertedIndex,
    snapshots: Vec<EncoderParams>,
    stats: RunStats,
    train: Vec<TrainQuery>,
    doc_features: BTreeMap<DocId, FeatureVector>,
    session_docs: Vec<BTreeSet<DocId>>,
    matrices: Vec<PerfMatrix>,
}

impl<'a> State<'a> {
    fn new(stream: &'a SessionStream, cfg: &'a RunConfig) -> Result<Self, RunError> {
        let t_max = stream.t_max();
        let params = EncoderParams::init(
            cfg.feature_dim,
            cfg.dim,
            cfg.shared_towers,
            sub_seed(cfg.seed, "init", 0, 0),
        );
        let train = stream
            .train_set()
            .queries
            .iter()
            .map(|q| {
                let labeled = stream.train_set().qrels[&q.id].clone();
                TrainQuery {
                    features: featurize(&q.tokens, cfg.feature_dim),
                    tokens: q.tokens.clone(),
                    id: q.id.clone(),
                    positives: labeled.iter().cloned().collect(),
                    labeled,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            stream,
            params,
            memory: cfg.memory_buffer(),
            temp: TempMemory::new(),
            store: EmbeddingStore::new(),
            lex: InvertedIndex::new(cfg.bm25_k1, cfg.bm25_b),
            snapshots: Vec::new(),
            stats: RunStats::default(),
            train,
            doc_features: BTreeMap::new(),
            session_docs: Vec::new(),
            matrices: cfg
                .metrics
                .iter()
                .map(|spec| PerfMatrix::new(t_max, *spec))
                .collect(),
        })
    }

    fn ingest_session(&mut self, t: usize) -> Result<(), RunError> {
        let session = self.stream.session(t);
        let batch: Vec<(DocId, Vec<String>)> = session
            .documents
            .iter()
            .map(|d| (d.id.clone(), d.tokens.clone()))
            .collect();
        self.lex.add_documents(&batch)?;
        let mut ids = BTreeSet::new();
        for d in &session.documents {
            self.doc_features
                .insert(d.id.clone(), featurize(&d.tokens, self.cfg.feature_dim));
            ids.insert(d.id.clone());
        }
        self.session_docs.push(ids);
        Ok(())
    }

    fn allowed_docs(&self, t: usize, cumulative: bool) -> BTreeSet<DocId> {
        if cumulative {
            self.session_docs[..=t]
                .iter()
                .flat_map(|s| s.iter().cloned())
                .collect()
        } else {
            self.session_docs[t].clone()
        }
    }

    fn memory_entry(&self, id: &DocId, session: u32) -> Result<MemoryEntry, RunError> {
        let features = self.doc_features[id].clone();
        let embedding = self.params.encode(&features, Tower::Document)?;
        Ok(MemoryEntry {
            doc_id: id.clone(),
            features,
            embedding,
            session_stored: session,
        })
    }

    /// Contrastive training on BM25-mined negatives, shared by the initial
    /// session and the from-scratch retrain baseline. Fills the reservoir
    /// memory when `fill_memory` is set.
    fn train_from_scratch(
        &mut self,
        session: u32,
        allowed: &BTreeSet<DocId>,
        fill_memory: bool,
        log_first_epoch: bool,
    ) -> Result<(), RunError> {
        let cfg = self.cfg;
        let sel_cfg = SelectionConfig {
            alpha: cfg.alpha,
            n_new: cfg.n_new + cfg.n_mem,
            pool_size: cfg.pool_initial,
            upsample_factor: cfg.upsample_factor,
        };
        let mut losses_this_session = Vec::new();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        for epoch in 0..cfg.epochs_initial {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                cfg.seed,
                "shuffle-scratch",
                u64::from(session),
                u64::from(epoch),
            ));
            order.shuffle(&mut rng);
            for &qi in &order {
                let q = &self.train[qi];
                let pool = selection::candidate_pool(
                    &self.lex,
                    &q.tokens,
                    allowed,
                    &q.labeled,
                    &sel_cfg,
                    query_seed(cfg.seed, "pool-scratch", session, epoch, &q.id),
                );
                if pool.is_empty() {
                    if epoch == 0 {
                        self.stats.skipped_queries += 1;
                    }
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(query_seed(
                    cfg.seed,
                    "negs-scratch",
                    session,
                    epoch,
                    &q.id,
                ));
                let positive = q.sample_positive(&mut rng).clone();
                let count = sel_cfg.n_new.min(pool.len());
                let negatives: Vec<DocId> = sample_distinct(&pool, count, &mut rng);
                let inst = TrainingInstance {
                    query: q.features.clone(),
                    positive: Candidate::live(self.doc_features[&positive].clone()),
                    new_negatives: negatives
                        .iter()
                        .map(|d| Candidate::live(self.doc_features[d].clone()))
                        .collect(),
                    memory_negatives: Vec::new(),
                    mode: CompatMode::NoCompat,
                };
                let out = losses::contrastive_loss(&inst, &self.params)?;
                self.params.sgd_step(&out.grads, cfg.lr_initial)?;
                self.stats.steps += 1;
                losses_this_session.push(out.loss);
                if log_first_epoch && epoch == 0 {
                    self.stats.initial_losses.push(out.loss);
                }
                if fill_memory {
                    let entries: Vec<MemoryEntry> = negatives
                        .iter()
                        .map(|d| self.memory_entry(d, session))
                        .collect::<Result<_, _>>()?;
                    self.memory.reservoir_fill(
                        &q.id,
                        entries,
                        query_seed(cfg.seed, "reservoir", session, epoch, &q.id),
                    );
                }
            }
        }
        self.stats.session_mean_loss.push(mean(&losses_this_session));
        if fill_memory {
            // stored embeddings track the model that will index this session
            self.memory.refresh_embeddings(session, &self.params)?;
        }
        Ok(())
    }

    /// One unlabeled session under the configured method.
    fn train_session(&mut self, t: u32) -> Result<(), RunError> {
        let cfg = self.cfg;
        let method = cfg.method;
        let compat = method.compat(cfg.compat_baseline);
        let diverse = method.diversity_selection();
        let replay = method.uses_memory();
        // the incremental baseline draws its whole negative budget from
        // the new data
        let n_new_eff = if replay { cfg.n_new } else { cfg.n_new + cfg.n_mem };
        let sel_cfg = SelectionConfig {
            alpha: cfg.alpha,
            n_new: n_new_eff,
            pool_size: cfg.pool_upcoming,
            upsample_factor: cfg.upsample_factor,
        };
        let allowed = self.allowed_docs(t as usize, false);
        let loss_cfg = LossConfig {
            lambda: cfg.lambda,
            align: method.align_kind(),
            detach_reference: cfg.detach_reference,
        };

        let mut losses_this_session = Vec::new();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        for epoch in 0..cfg.epochs_upcoming {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                cfg.seed,
                "shuffle",
                u64::from(t),
                u64::from(epoch),
            ));
            order.shuffle(&mut rng);
            for &qi in &order {
                let q = &self.train[qi];
                let pool_ids = selection::candidate_pool(
                    &self.lex,
                    &q.tokens,
                    &allowed,
                    &q.labeled,
                    &sel_cfg,
                    query_seed(cfg.seed, "pool", t, epoch, &q.id),
                );
                if pool_ids.is_empty() {
                    if epoch == 0 {
                        self.stats.skipped_queries += 1;
                    }
                    continue;
                }

                // embeddings from the latest model
                let q_emb = self.params.encode(&q.features, Tower::Query)?;
                let positive = {
                    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(
                        cfg.seed, "pos", t, epoch, &q.id,
                    ));
                    q.sample_positive(&mut rng).clone()
                };
                let new_ids: Vec<DocId> = if diverse {
                    let pool: Vec<(DocId, Embedding)> = pool_ids
                        .iter()
                        .map(|id| {
                            Ok((
                                id.clone(),
                                self.params
                                    .encode(&self.doc_features[id], Tower::Document)?,
                            ))
                        })
                        .collect::<Result<_, RunError>>()?;
                    let d_pos = self
                        .params
                        .encode(&self.doc_features[&positive], Tower::Document)?;
                    let out = selection::select_new_negatives(&pool, &q_emb, &d_pos, &sel_cfg)?;
                    self.stats.pss_evals += out.pss_evals;
                    self.stats.isd_evals += out.isd_evals;
                    if out.short {
                        self.stats.short_selections += 1;
                    }
                    out.selected.iter().map(|&i| pool[i].0.clone()).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(
                        cfg.seed, "randsel", t, epoch, &q.id,
                    ));
                    let count = n_new_eff.min(pool_ids.len());
                    if pool_ids.len() < n_new_eff {
                        self.stats.short_selections += 1;
                    }
                    sample_distinct(&pool_ids, count, &mut rng)
                };

                // replay negatives from the memory buffer
                let mem_entries: Vec<MemoryEntry> = if replay && cfg.n_mem > 0 {
                    if diverse {
                        let new_embs: Vec<Embedding> = new_ids
                            .iter()
                            .map(|id| {
                                self.params
                                    .encode(&self.doc_features[id], Tower::Document)
                            })
                            .collect::<Result<_, _>>()?;
                        let view = if compat {
                            MemoryView::Frozen
                        } else {
                            MemoryView::Reencode(&self.params)
                        };
                        let sel = self.memory.select_replay(
                            &q.id,
                            &new_embs,
                            &q_emb,
                            cfg.n_mem,
                            view,
                        )?;
                        self.stats.isd_evals += sel.isd_evals;
                        if sel.short {
                            self.stats.short_replays += 1;
                        }
                        sel.entries
                    } else {
                        let entries = self.memory.entries(&q.id);
                        if entries.len() < cfg.n_mem {
                            self.stats.short_replays += 1;
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(
                            cfg.seed, "randmem", t, epoch, &q.id,
                        ));
                        let idx: Vec<usize> = (0..entries.len()).collect();
                        sample_distinct(&idx, cfg.n_mem.min(entries.len()), &mut rng)
                            .into_iter()
                            .map(|i| entries[i].clone())
                            .collect()
                    }
                } else {
                    Vec::new()
                };

                let inst = self.build_instance(q, &positive, &new_ids, &mem_entries, compat)?;
                let out = if compat {
                    losses::total_compat_loss(&inst, &self.params, &loss_cfg)?
                } else {
                    losses::contrastive_loss(&inst, &self.params)?
                };
                self.params.sgd_step(&out.grads, cfg.lr_upcoming)?;
                self.stats.steps += 1;
                losses_this_session.push(out.loss);

                // remember this step's picks as memory-update candidates
                if diverse {
                    for id in &new_ids {
                        let entry = self.memory_entry(id, t)?;
                        self.temp.push(&q.id, entry);
                    }
                } else if method == Method::Er {
                    let entries: Vec<MemoryEntry> = new_ids
                        .iter()
                        .map(|d| self.memory_entry(d, t))
                        .collect::<Result<_, _>>()?;
                    self.memory.reservoir_fill(
                        &q.id,
                        entries,
                        query_seed(cfg.seed, "reservoir", t, epoch, &q.id),
                    );
                }
            }
        }
        self.stats.session_mean_loss.push(mean(&losses_this_session));

        // deferred memory update, then empty the temporary buffer
        if diverse {
            let drained: Vec<(QueryId, Vec<MemoryEntry>)> = self.temp.drain().collect();
            let view_params = self.params.clone();
            for (qid, mut candidates) in drained {
                for c in &mut candidates {
                    // candidates enter with the embedding their session's
                    // index will hold
                    c.embedding = view_params.encode(&c.features, Tower::Document)?;
                }
                let q = self
                    .train
                    .iter()
                    .find(|tq| tq.id == qid)
                    .expect("temp memory only holds training queries");
                let q_emb = view_params.encode(&q.features, Tower::Query)?;
                let view = if compat {
                    MemoryView::Frozen
                } else {
                    MemoryView::Reencode(&view_params)
                };
                let outcome = self.memory.update_query(
                    &qid,
                    candidates,
                    &q_emb,
                    view,
                    query_seed(cfg.seed, "anchor", t, 0, &qid),
                )?;
                self.stats.isd_evals += outcome.isd_evals;
                self.stats.memory_updates += 1;
                if outcome.violates_guarantee() {
                    self.stats.memory_update_violations += 1;
                }
            }
        } else if method == Method::Er {
            self.memory.refresh_embeddings(t, &self.params)?;
        }
        Ok(())
    }

    fn build_instance(
        &self,
        q: &TrainQuery,
        positive_id: &DocId,
        new_ids: &[DocId],
        mem_entries: &[MemoryEntry],
        compat: bool,
    ) -> Result<TrainingInstance, RunError> {
        let pos_features = self.doc_features[positive_id].clone();
        let positive = if compat {
            let stored = self
                .store
                .get(positive_id)
                .ok_or_else(|| RunError::UnindexedPositive(positive_id.clone()))?;
            Candidate::with_frozen(pos_features, stored.embedding.clone())
        } else {
            Candidate::live(pos_features)
        };
        let new_negatives = new_ids
            .iter()
            .map(|d| Candidate::live(self.doc_features[d].clone()))
            .collect();
        let memory_negatives = mem_entries
            .iter()
            .map(|e| {
                if compat {
                    Candidate::with_frozen(e.features.clone(), e.embedding.clone())
                } else {
                    Candidate::live(e.features.clone())
                }
            })
            .collect();
        Ok(TrainingInstance {
            query: q.features.clone(),
            positive,
            new_negatives,
            memory_negatives,
            mode: if compat {
                CompatMode::Compat
            } else {
                CompatMode::NoCompat
            },
        })
    }

    fn upsert_session(&mut self, t: u32) -> Result<(), RunError> {
        let mode = self.cfg.method.index_mode(self.cfg.compat_baseline);
        let docs: Vec<(DocId, FeatureVector)> = self
            .stream
            .session(t as usize)
            .documents
            .iter()
            .map(|d| (d.id.clone(), self.doc_features[&d.id].clone()))
            .collect();
        self.store.upsert_session(t, &docs, &self.params, mode)?;
        Ok(())
    }

    /// Fills `p[model_t][j]` for every `j <= model_t` with the current
    /// parameters and store, and records the dev-split primary metric.
    fn evaluate_after_session(&mut self, model_t: usize) -> Result<(), RunError> {
        for j in 0..=model_t {
            let values = evaluate_set(
                &self.params,
                &self.store,
                &self.stream.session(j).test,
                j as u32,
                self.cfg,
                &mut self.stats.excluded_eval_queries,
            )?;
            if let Some(values) = values {
                for (m, v) in values.iter().enumerate() {
                    self.matrices[m].set(model_t, j, *v)?;
                }
            }
        }
        let dev = evaluate_set(
            &self.params,
            &self.store,
            &self.stream.session(model_t).dev,
            model_t as u32,
            self.cfg,
            &mut self.stats.excluded_eval_queries,
        )?;
        self.stats
            .dev_primary
            .push(dev.map_or(0.0, |v| v[self.cfg.primary_metric]));
        Ok(())
    }

    /// Forward-transfer cells `p[i][j]`, `1 <= i < j`: evaluate snapshot
    /// `i` on session `j`'s test queries over the collection up to `j`,
    /// transiently embedding everything under snapshot `i`. These encodes
    /// bypass the store and are excluded from the cost ledger.
    fn evaluate_forward_transfer(&mut self) -> Result<(), RunError> {
        let t_max = self.stream.t_max();
        for j in 2..=t_max {
            for i in 1..j {
                let snap = &self.snapshots[i];
                let mut transient = EmbeddingStore::new();
                for (t, ids) in self.session_docs.iter().enumerate().take(j + 1) {
                    for id in ids {
                        let features = self.doc_features[id].clone();
                        let embedding = snap.encode(&features, Tower::Document)?;
                        transient.restore(
                            id.clone(),
                            StoredDoc {
                                features,
                                embedding,
                                model_version: i as u32,
                                session_added: t as u32,
                            },
                        );
                    }
                }
                let values = evaluate_set(
                    snap,
                    &transient,
                    &self.stream.session(j).test,
                    j as u32,
                    self.cfg,
                    &mut self.stats.excluded_eval_queries,
                )?;
                if let Some(values) = values {
                    for (m, v) in values.iter().enumerate() {
                        self.matrices[m].set(i, j, *v)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Uniform sample without replacement preserving determinism; returns
/// clones in sampled order.
fn sample_distinct<T: Clone>(pool: &[T], count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let count = count.min(pool.len());
    for i in 0..count {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..count].iter().map(|&i| pool[i].clone()).collect()
}

/// Macro-averaged metric values for one query set, or `None` when no query
/// is eligible. Relevance judgments are restricted to documents that have
/// arrived by `max_session`; queries left without relevant documents are
/// excluded and counted.
fn evaluate_set(
    params: &EncoderParams,
    store: &EmbeddingStore,
    set: &QuerySet,
    max_session: u32,
    cfg: &RunConfig,
    excluded: &mut u64,
) -> Result<Option<Vec<f64>>, RunError> {
    if set.queries.is_empty() {
        return Ok(None);
    }
    let k = cfg.max_cutoff();
    let mut sums = alloc::vec![0.0; cfg.metrics.len()];
    let mut counted = 0usize;
    for q in &set.queries {
        let relevant: BTreeSet<DocId> = set.qrels[&q.id]
            .iter()
            .filter(|d| {
                store
                    .get(d)
                    .is_some_and(|doc| doc.session_added <= max_session)
            })
            .cloned()
            .collect();
        if relevant.is_empty() {
            *excluded += 1;
            continue;
        }
        let q_emb = params.encode(&featurize(&q.tokens, cfg.feature_dim), Tower::Query)?;
        let ranking: Vec<DocId> = store
            .search_topk_upto(&q_emb, k, max_session)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        for (m, spec) in cfg.metrics.iter().enumerate() {
            sums[m] += crate::metrics::rank_metric(spec.kind, spec.cutoff, &ranking, &relevant)?;
        }
        counted += 1;
    }
    if counted == 0 {
        return Ok(None);
    }
    Ok(Some(sums.into_iter().map(|s| s / counted as f64).collect()))
}

/// Runs the whole stream under one method and returns matrices, summaries,
/// cost accounting, and the final state.
pub fn run_stream(stream: &SessionStream, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    stream.validate()?;
    let mut state = State::new(stream, cfg)?;
    let t_max = stream.t_max();

    // session 0: labeled training, memory fill, first index
    state.ingest_session(0)?;
    let allowed0 = state.allowed_docs(0, true);
    if cfg.epochs_initial > 0 {
        state.train_from_scratch(0, &allowed0, true, true)?;
    } else {
        state.stats.session_mean_loss.push(0.0);
    }
    state.upsert_session(0)?;
    state.params.set_version(0)?;
    state.snapshots.push(state.params.clone());
    state.evaluate_after_session(0)?;
    info!(
        "session 0 [{}]: mean loss {:.4}, dev {:.4}",
        cfg.method.name(),
        state.stats.session_mean_loss[0],
        state.stats.dev_primary[0]
    );

    for t in 1..=t_max {
        state.ingest_session(t)?;
        match cfg.method {
            Method::Initial => {
                state.stats.session_mean_loss.push(0.0);
            }
            Method::Retrain => {
                state.params = EncoderParams::init(
                    cfg.feature_dim,
                    cfg.dim,
                    cfg.shared_towers,
                    sub_seed(cfg.seed, "reinit", t as u64, 0),
                );
                let allowed = state.allowed_docs(t, true);
                state.train_from_scratch(t as u32, &allowed, false, false)?;
            }
            _ => state.train_session(t as u32)?,
        }
        state.upsert_session(t as u32)?;
        state.params.set_version(t as u32)?;
        state.snapshots.push(state.params.clone());
        state.evaluate_after_session(t)?;
        debug!(
            "session {t} [{}]: mean loss {:.4}",
            cfg.method.name(),
            state.stats.session_mean_loss[t]
        );
    }

    if cfg.eval_fwt && t_max >= 2 {
        state.evaluate_forward_transfer()?;
    }

    let summaries = state
        .matrices
        .iter()
        .map(|m| (0..=t_max).map(|t| m.lifelong_summary(t)).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    let report = RunReport {
        matrices: state.matrices,
        summaries,
        cost: state.store.cost_report().clone(),
        stats: state.stats,
    };
    info!(
        "run [{}] done: primary AP {:.4}",
        cfg.method.name(),
        report.primary_ap(cfg)
    );
    Ok(RunOutput {
        report,
        snapshots: state.snapshots,
        params: state.params,
        memory: state.memory,
        store: state.store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{generate_synthetic_stream, GeneratorConfig};
    use once_cell::sync::Lazy;

    /// Tiny stream shared by the runner tests; big enough to exercise the
    /// whole pipeline, small enough to stay fast.
    static TINY_STREAM: Lazy<SessionStream> = Lazy::new(|| {
        let cfg = GeneratorConfig {
            domains: 3,
            common_domains: 1,
            docs_per_domain: 150,
            clusters_per_domain: 3,
            cluster_vocab: 12,
            background_vocab: 50,
            doc_len: 12,
            query_len: 4,
            train_queries_per_domain: 10,
            dev_queries_per_session: 5,
            test_queries_per_session: 8,
            sessions: 2,
            paraphrases_per_query: 1,
            ..GeneratorConfig::default()
        };
        generate_synthetic_stream(&cfg, 1234).unwrap()
    });

    fn tiny_cfg(method: Method) -> RunConfig {
        RunConfig {
            method,
            feature_dim: 512,
            dim: 16,
            epochs_initial: 2,
            epochs_upcoming: 1,
            pool_initial: 50,
            pool_upcoming: 30,
            buffer_capacity: 9,
            seed: 7,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization_but_populates_store() {
        let mut cfg = tiny_cfg(Method::Initial);
        cfg.epochs_initial = 0;
        let out = run_stream(&TINY_STREAM, &cfg).unwrap();
        let fresh = EncoderParams::init(
            cfg.feature_dim,
            cfg.dim,
            cfg.shared_towers,
            sub_seed(cfg.seed, "init", 0, 0),
        );
        assert_eq!(
            out.snapshots[0].weights(Tower::Query),
            fresh.weights(Tower::Query)
        );
        assert_eq!(out.store.len(), TINY_STREAM.total_docs());
    }

    #[test]
    fn initial_method_never_updates_parameters() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::Initial)).unwrap();
        for snap in &out.snapshots[1..] {
            assert_eq!(
                snap.weights(Tower::Query),
                out.snapshots[0].weights(Tower::Query)
            );
            assert_eq!(
                snap.weights(Tower::Document),
                out.snapshots[0].weights(Tower::Document)
            );
        }
        // compat accounting: every doc encoded exactly once
        assert_eq!(
            out.report.cost.embed_ops(),
            TINY_STREAM.total_docs() as u64
        );
    }

    #[test]
    fn initial_session_losses_trend_downward() {
        let mut cfg = tiny_cfg(Method::L2rRank);
        cfg.epochs_initial = 2;
        let out = run_stream(&TINY_STREAM, &cfg).unwrap();
        let losses = &out.report.stats.initial_losses;
        assert!(losses.len() >= 20);
        // windowed means over the first epoch decrease most of the time
        let w = (losses.len() / 6).max(2);
        let means: Vec<f64> = losses.chunks(w).map(|c| mean(c)).collect();
        let drops = means.windows(2).filter(|p| p[1] < p[0]).count();
        assert!(
            drops as f64 >= 0.8 * (means.len() - 1) as f64,
            "means {means:?}"
        );
    }

    #[test]
    fn memory_fills_to_min_of_capacity_and_seen() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        let mut checked = 0;
        for q in TINY_STREAM.train_set().queries.iter() {
            let seen = out.memory.seen(&q.id);
            let len = out.memory.len(&q.id);
            if seen > 0 {
                assert!(len <= out.memory.capacity());
                assert_eq!(len as u64, seen.min(out.memory.capacity() as u64));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn compat_method_never_rewrites_old_embeddings() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        // every session-0 record must still carry model_version 0
        for (_, doc) in out.store.records() {
            assert_eq!(doc.model_version, doc.session_added);
        }
        // compat accounting
        assert_eq!(
            out.report.cost.embed_ops(),
            TINY_STREAM.total_docs() as u64
        );
    }

    #[test]
    fn rebuild_methods_reencode_cumulatively() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::Retrain)).unwrap();
        let sizes: Vec<u64> = TINY_STREAM
            .sessions
            .iter()
            .map(|s| s.documents.len() as u64)
            .collect();
        let mut expect = 0;
        let mut cum = 0;
        for n in &sizes {
            cum += n;
            expect += cum;
        }
        assert_eq!(out.report.cost.embed_ops(), expect);
        let t_max = TINY_STREAM.t_max() as u32;
        for (_, doc) in out.store.records() {
            assert_eq!(doc.model_version, t_max);
        }
    }

    #[test]
    fn er_never_evaluates_selection_criteria() {
        let mut cfg = tiny_cfg(Method::Er);
        cfg.compat_baseline = true;
        let out = run_stream(&TINY_STREAM, &cfg).unwrap();
        assert_eq!(out.report.stats.pss_evals, 0);
        assert_eq!(out.report.stats.isd_evals, 0);
        assert!(out.report.stats.steps > 0);
    }

    #[test]
    fn diverse_methods_do_evaluate_selection_criteria() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        assert!(out.report.stats.pss_evals > 0);
        assert!(out.report.stats.isd_evals > 0);
        assert_eq!(out.report.stats.memory_update_violations, 0);
    }

    #[test]
    fn same_seed_reproduces_matrices_exactly() {
        let a = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        let b = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        assert_eq!(a.report.matrices, b.report.matrices);
        let mut cfg = tiny_cfg(Method::L2rRank);
        cfg.seed = 8;
        let c = run_stream(&TINY_STREAM, &cfg).unwrap();
        assert_ne!(a.report.matrices, c.report.matrices);
    }

    #[test]
    fn single_session_stream_reports_only_p0() {
        let gen = GeneratorConfig {
            domains: 3,
            common_domains: 2,
            docs_per_domain: 60,
            clusters_per_domain: 2,
            cluster_vocab: 8,
            background_vocab: 30,
            doc_len: 10,
            query_len: 3,
            train_queries_per_domain: 4,
            dev_queries_per_session: 2,
            test_queries_per_session: 4,
            sessions: 1,
            paraphrases_per_query: 0,
            ..GeneratorConfig::default()
        };
        let stream = generate_synthetic_stream(&gen, 5).unwrap();
        let mut cfg = tiny_cfg(Method::L2rRank);
        cfg.pool_initial = 40;
        cfg.pool_upcoming = 30;
        let out = run_stream(&stream, &cfg).unwrap();
        let m = out.report.primary(&cfg);
        assert!(m.get(0, 0).is_some());
        assert!(m.get(1, 1).is_some());
        // no forward-transfer cells exist for T = 1
        assert!(out.report.summaries[0][1].fwt.is_none());
    }

    #[test]
    fn perf_matrix_lower_triangle_and_fwt_cells_are_filled() {
        let out = run_stream(&TINY_STREAM, &tiny_cfg(Method::L2rRank)).unwrap();
        let m = out.report.primary(&tiny_cfg(Method::L2rRank));
        for i in 0..=2usize {
            for j in 0..=i {
                assert!(m.get(i, j).is_some(), "missing ({i}, {j})");
            }
        }
        assert!(m.get(1, 2).is_some());
        let s = &out.report.summaries[0][2];
        assert!(s.fwt.is_some());
        assert!(s.forget.is_some());
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::all() {
            assert_eq!(Method::parse(m.name()), Some(*m));
        }
        assert_eq!(Method::parse("nope"), None);
    }

    #[test]
    fn config_validation_rejects_bad_pools() {
        let mut cfg = tiny_cfg(Method::L2rRank);
        cfg.pool_upcoming = 2;
        assert!(matches!(
            run_stream(&TINY_STREAM, &cfg),
            Err(RunError::InvalidConfig(_))
        ));
    }
}
