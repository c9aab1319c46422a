//! Toy dual encoder: hashed bag-of-tokens features through a trainable
//! linear map per tower, scored by dot product.
//!
//! Each token hashes to one of `feature_dim` slots with a +/-1 sign from a
//! second hash; the resulting sparse vector is L2-normalized and encoded as
//! `W^T x`. Query and document towers hold separate weight copies
//! initialized identically (a shared-weights flag exists for ablation).
//! Training is plain SGD on sparse row gradients, which keeps every update
//! auditable.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Embedding, GeometryError};
use crate::math;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncoderError {
    #[error("feature index {index} out of range (feature_dim {feature_dim})")]
    IndexOutOfRange { index: u32, feature_dim: u32 },
    #[error("embedding dimension {got} does not match encoder dimension {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("feature indices must be strictly increasing")]
    UnsortedFeatures,
    #[error("non-finite feature weight")]
    NonFiniteWeight,
    #[error("version tag must be non-decreasing ({current} -> {proposed})")]
    VersionRegression { current: u32, proposed: u32 },
}

/// Sparse feature vector with strictly increasing, unique indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self, EncoderError> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(EncoderError::UnsortedFeatures);
            }
        }
        if entries.iter().any(|(_, w)| !w.is_finite()) {
            return Err(EncoderError::NonFiniteWeight);
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|(i, _)| *i)
    }
}

const SIGN_HASH_BASIS: u64 = 0x9e37_79b9_7f4a_7c15;

/// Hashes tokens into a signed, L2-normalized sparse vector. Colliding
/// tokens have their signed weights summed; exact cancellations drop out.
pub fn featurize(tokens: &[impl AsRef<str>], feature_dim: u32) -> FeatureVector {
    assert!(feature_dim >= 1, "feature_dim must be at least 1");
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in tokens {
        let bytes = tok.as_ref().as_bytes();
        let index = (math::fnv1a64(bytes) % u64::from(feature_dim)) as u32;
        let sign = if math::fnv1a64_seeded(SIGN_HASH_BASIS, bytes) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        *acc.entry(index).or_insert(0.0) += sign;
    }
    let entries: Vec<(u32, f64)> = acc.into_iter().filter(|(_, w)| *w != 0.0).collect();
    let norm = math::sqrt(entries.iter().map(|(_, w)| w * w).sum());
    let entries = if norm > 0.0 {
        entries.into_iter().map(|(i, w)| (i, w / norm)).collect()
    } else {
        entries
    };
    FeatureVector { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Query,
    Document,
}

/// Gradient with respect to one tower's weight matrix, stored as sparse
/// rows (only rows reachable from input features are ever touched).
#[derive(Debug, Clone)]
pub struct TowerGrad {
    dim: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl TowerGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    /// Accumulates `scale * x_i * g` into each row `i` of the feature
    /// vector's support.
    pub fn accumulate(&mut self, x: &FeatureVector, g: &[f64], scale: f64) {
        debug_assert_eq!(g.len(), self.dim);
        if scale == 0.0 {
            return;
        }
        for (i, w) in x.iter() {
            let row = self.rows.entry(i).or_insert_with(|| vec![0.0; self.dim]);
            let f = w * scale;
            for (r, gv) in row.iter_mut().zip(g) {
                *r += f * gv;
            }
        }
    }

    pub fn add(&mut self, other: &TowerGrad) {
        debug_assert_eq!(self.dim, other.dim);
        for (i, src) in &other.rows {
            let row = self.rows.entry(*i).or_insert_with(|| vec![0.0; self.dim]);
            for (r, s) in row.iter_mut().zip(src) {
                *r += s;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for row in self.rows.values_mut() {
            for v in row {
                *v *= c;
            }
        }
    }

    pub fn row(&self, index: u32) -> Option<&[f64]> {
        self.rows.get(&index).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(i, r)| (*i, r.as_slice()))
    }

    pub fn entry(&self, row: u32, col: usize) -> f64 {
        self.rows.get(&row).map_or(0.0, |r| r[col])
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Gradients for both towers of one parameter snapshot.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub query: TowerGrad,
    pub document: TowerGrad,
}

impl Gradients {
    pub fn new(dim: usize) -> Self {
        Self {
            query: TowerGrad::new(dim),
            document: TowerGrad::new(dim),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.query.add(&other.query);
        self.document.add(&other.document);
    }

    pub fn scale(&mut self, c: f64) {
        self.query.scale(c);
        self.document.scale(c);
    }
}

/// Trainable encoder parameters: one `feature_dim x dim` weight matrix per
/// tower (or a single shared matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    feature_dim: u32,
    dim: u32,
    shared: bool,
    version_tag: u32,
    query_w: Vec<f64>,
    doc_w: Vec<f64>,
}

impl EncoderParams {
    /// Seeded initialization, i.i.d. uniform in `[-1/sqrt(F), 1/sqrt(F)]`.
    /// With split towers both start from identical copies.
    pub fn init(feature_dim: u32, dim: u32, shared: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / math::sqrt(f64::from(feature_dim));
        let dist = Uniform::new_inclusive(-bound, bound);
        let n = feature_dim as usize * dim as usize;
        let query_w: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let doc_w = if shared { Vec::new() } else { query_w.clone() };
        Self {
            feature_dim,
            dim,
            shared,
            version_tag: 0,
            query_w,
            doc_w,
        }
    }

    pub fn from_raw(
        feature_dim: u32,
        dim: u32,
        shared: bool,
        version_tag: u32,
        query_w: Vec<f64>,
        doc_w: Vec<f64>,
    ) -> Result<Self, EncoderError> {
        let n = feature_dim as usize * dim as usize;
        if query_w.len() != n || (!shared && doc_w.len() != n) || (shared && !doc_w.is_empty()) {
            return Err(EncoderError::DimMismatch {
                got: query_w.len(),
                want: n,
            });
        }
        if query_w.iter().chain(doc_w.iter()).any(|w| !w.is_finite()) {
            return Err(EncoderError::NonFiniteWeight);
        }
        Ok(Self {
            feature_dim,
            dim,
            shared,
            version_tag,
            query_w,
            doc_w,
        })
    }

    pub fn feature_dim(&self) -> u32 {
        self.feature_dim
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn version_tag(&self) -> u32 {
        self.version_tag
    }

    pub fn set_version(&mut self, session: u32) -> Result<(), EncoderError> {
        if session < self.version_tag {
            return Err(EncoderError::VersionRegression {
                current: self.version_tag,
                proposed: session,
            });
        }
        self.version_tag = session;
        Ok(())
    }

    pub fn weights(&self, tower: Tower) -> &[f64] {
        match tower {
            Tower::Query => &self.query_w,
            Tower::Document => {
                if self.shared {
                    &self.query_w
                } else {
                    &self.doc_w
                }
            }
        }
    }

    fn weights_mut(&mut self, tower: Tower) -> &mut Vec<f64> {
        match tower {
            Tower::Query => &mut self.query_w,
            Tower::Document => {
                if self.shared {
                    &mut self.query_w
                } else {
                    &mut self.doc_w
                }
            }
        }
    }

    /// `W^T x` for the chosen tower; linear in `x`.
    pub fn encode(&self, x: &FeatureVector, tower: Tower) -> Result<Embedding, EncoderError> {
        if let Some(max) = x.max_index() {
            if max >= self.feature_dim {
                return Err(EncoderError::IndexOutOfRange {
                    index: max,
                    feature_dim: self.feature_dim,
                });
            }
        }
        let dim = self.dim as usize;
        let w = self.weights(tower);
        let mut out = vec![0.0; dim];
        for (i, weight) in x.iter() {
            let row = &w[i as usize * dim..(i as usize + 1) * dim];
            for (o, r) in out.iter_mut().zip(row) {
                *o += weight * r;
            }
        }
        Embedding::new(out).map_err(|_| EncoderError::NonFiniteWeight)
    }

    /// Parameter gradient of a loss given its gradient with respect to the
    /// produced embedding: `dL/dW[i,:] = x_i * grad` on `x`'s support.
    pub fn encode_backward(
        &self,
        x: &FeatureVector,
        _tower: Tower,
        grad_wrt_embedding: &Embedding,
    ) -> Result<TowerGrad, EncoderError> {
        if grad_wrt_embedding.dim() != self.dim as usize {
            return Err(EncoderError::DimMismatch {
                got: grad_wrt_embedding.dim(),
                want: self.dim as usize,
            });
        }
        if let Some(max) = x.max_index() {
            if max >= self.feature_dim {
                return Err(EncoderError::IndexOutOfRange {
                    index: max,
                    feature_dim: self.feature_dim,
                });
            }
        }
        let mut grad = TowerGrad::new(self.dim as usize);
        grad.accumulate(x, grad_wrt_embedding.as_slice(), 1.0);
        Ok(grad)
    }

    /// One SGD step: `W -= lr * grad` on each touched row. With shared
    /// towers both gradient halves apply to the single matrix.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<(), EncoderError> {
        self.apply_tower(&grads.query, Tower::Query, lr)?;
        self.apply_tower(&grads.document, Tower::Document, lr)?;
        Ok(())
    }

    fn apply_tower(&mut self, grad: &TowerGrad, tower: Tower, lr: f64) -> Result<(), EncoderError> {
        let dim = self.dim as usize;
        let feature_dim = self.feature_dim;
        let w = self.weights_mut(tower);
        for (i, row) in grad.rows() {
            if i >= feature_dim {
                return Err(EncoderError::IndexOutOfRange {
                    index: i,
                    feature_dim,
                });
            }
            let dst = &mut w[i as usize * dim..(i as usize + 1) * dim];
            for (d, g) in dst.iter_mut().zip(row) {
                *d -= lr * g;
            }
        }
        Ok(())
    }

    /// Copy with a single weight entry shifted by `delta`; used by the
    /// finite-difference checker.
    pub fn with_nudged_weight(&self, tower: Tower, row: u32, col: usize, delta: f64) -> Self {
        let mut out = self.clone();
        let dim = out.dim as usize;
        out.weights_mut(tower)[row as usize * dim + col] += delta;
        out
    }
}

/// Relevance score of a (query, document) embedding pair: plain dot
/// product.
pub fn score(q_emb: &Embedding, d_emb: &Embedding) -> Result<f64, GeometryError> {
    crate::geometry::dot(q_emb, d_emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::{String, ToString};

    fn tokens(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn featurize_empty_text_is_empty() {
        assert!(featurize(&tokens(&[]), 16).is_empty());
    }

    #[test]
    fn featurize_folds_duplicates_to_unit_weight() {
        let v = featurize(&tokens(&["a", "a"]), 64);
        assert_eq!(v.len(), 1);
        let (_, w) = v.iter().next().unwrap();
        assert!((w.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_sums_signed_weights_on_collision() {
        // Under feature_dim = 1 every token collides into slot 0.
        let same_sign = |t: &str| math::fnv1a64_seeded(SIGN_HASH_BASIS, t.as_bytes()) & 1;
        let (a, b) = ("alpha", "beta");
        let v = featurize(&[a, b], 1);
        if same_sign(a) == same_sign(b) {
            assert_eq!(v.len(), 1);
            let (_, w) = v.iter().next().unwrap();
            assert!((w.abs() - 1.0).abs() < 1e-12); // |2|/|2| after normalization
        } else {
            assert!(v.is_empty()); // +1 and -1 cancel exactly
        }
    }

    #[test]
    fn featurize_is_normalized() {
        let v = featurize(&tokens(&["x", "y", "z", "w"]), 1024);
        let norm: f64 = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    fn unit_feature(i: u32) -> FeatureVector {
        FeatureVector::new(vec![(i, 1.0)]).unwrap()
    }

    #[test]
    fn encode_empty_is_zero() {
        let params = EncoderParams::init(8, 4, false, 7);
        let e = params.encode(&FeatureVector::empty(), Tower::Query).unwrap();
        assert_eq!(e.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn encode_unit_feature_reads_row() {
        let params = EncoderParams::init(8, 4, false, 7);
        let e = params.encode(&unit_feature(3), Tower::Document).unwrap();
        let dim = params.dim() as usize;
        assert_eq!(e.as_slice(), &params.weights(Tower::Document)[3 * dim..4 * dim]);
    }

    #[test]
    fn encode_is_homogeneous() {
        let params = EncoderParams::init(32, 6, false, 11);
        let x = featurize(&tokens(&["p", "q", "r"]), 32);
        let scaled = FeatureVector::new(x.iter().map(|(i, w)| (i, 2.5 * w)).collect()).unwrap();
        let e = params.encode(&x, Tower::Query).unwrap();
        let es = params.encode(&scaled, Tower::Query).unwrap();
        for (a, b) in e.as_slice().iter().zip(es.as_slice()) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_out_of_range_indices() {
        let params = EncoderParams::init(4, 2, false, 0);
        let err = params.encode(&unit_feature(4), Tower::Query).unwrap_err();
        assert_eq!(
            err,
            EncoderError::IndexOutOfRange {
                index: 4,
                feature_dim: 4
            }
        );
    }

    #[test]
    fn score_examples() {
        let a = Embedding::new(vec![1.0, 0.0]).unwrap();
        let b = Embedding::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(score(&a, &b).unwrap(), 0.0);
        let c = Embedding::new(vec![1.0, 2.0]).unwrap();
        let d = Embedding::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(score(&c, &d).unwrap(), 11.0);
        assert_eq!(score(&c, &d).unwrap(), score(&d, &c).unwrap());
        let e = Embedding::new(vec![1.0]).unwrap();
        assert!(score(&c, &e).is_err());
    }

    #[test]
    fn backward_zero_grad_is_empty() {
        let params = EncoderParams::init(8, 3, false, 1);
        let x = featurize(&tokens(&["a", "b"]), 8);
        let g = params
            .encode_backward(&x, Tower::Document, &Embedding::zeros(3))
            .unwrap();
        for (_, row) in g.rows() {
            assert!(row.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn backward_unit_feature_scatters_grad_to_one_row() {
        let params = EncoderParams::init(8, 3, false, 1);
        let g_emb = Embedding::new(vec![0.5, -1.0, 2.0]).unwrap();
        let g = params
            .encode_backward(&unit_feature(5), Tower::Document, &g_emb)
            .unwrap();
        assert_eq!(g.rows().count(), 1);
        assert_eq!(g.row(5).unwrap(), g_emb.as_slice());
    }

    #[test]
    fn backward_matches_finite_differences_of_score() {
        let params = EncoderParams::init(16, 4, false, 3);
        let x = featurize(&tokens(&["tok1", "tok2", "tok3"]), 16);
        let v = Embedding::new(vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let analytic = params.encode_backward(&x, Tower::Document, &v).unwrap();
        let eps = 1e-6;
        for (i, _) in x.iter() {
            for col in 0..4 {
                let plus = params.with_nudged_weight(Tower::Document, i, col, eps);
                let minus = params.with_nudged_weight(Tower::Document, i, col, -eps);
                let f = |p: &EncoderParams| {
                    score(&p.encode(&x, Tower::Document).unwrap(), &v).unwrap()
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
                let a = analytic.entry(i, col);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-6, "row {i} col {col}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn encode_is_linear_in_features() {
        let params = EncoderParams::init(32, 5, false, 9);
        let x = featurize(&tokens(&["u", "v"]), 32);
        let y = featurize(&tokens(&["w", "z", "u"]), 32);
        let (a, b) = (1.7, -0.4);
        let mut combined: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, w) in x.iter() {
            *combined.entry(i).or_insert(0.0) += a * w;
        }
        for (i, w) in y.iter() {
            *combined.entry(i).or_insert(0.0) += b * w;
        }
        let combo = FeatureVector::new(combined.into_iter().collect()).unwrap();
        let lhs = params.encode(&combo, Tower::Query).unwrap();
        let ex = params.encode(&x, Tower::Query).unwrap();
        let ey = params.encode(&y, Tower::Query).unwrap();
        for ((l, xz), yz) in lhs.as_slice().iter().zip(ex.as_slice()).zip(ey.as_slice()) {
            assert!((l - (a * xz + b * yz)).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_init_is_deterministic_and_split_towers_start_identical() {
        let p1 = EncoderParams::init(64, 8, false, 42);
        let p2 = EncoderParams::init(64, 8, false, 42);
        assert_eq!(p1, p2);
        assert_eq!(p1.weights(Tower::Query), p1.weights(Tower::Document));
        let p3 = EncoderParams::init(64, 8, false, 43);
        assert_ne!(p1, p3);
    }

    #[test]
    fn version_tag_is_monotone() {
        let mut p = EncoderParams::init(4, 2, false, 0);
        p.set_version(2).unwrap();
        assert_eq!(p.version_tag(), 2);
        assert!(p.set_version(1).is_err());
    }

    #[test]
    fn sgd_step_moves_only_touched_rows() {
        let mut p = EncoderParams::init(8, 2, false, 5);
        let before = p.weights(Tower::Document).to_vec();
        let mut grads = Gradients::new(2);
        grads
            .document
            .accumulate(&unit_feature(3), &[1.0, -2.0], 1.0);
        p.sgd_step(&grads, 0.1).unwrap();
        let after = p.weights(Tower::Document);
        assert!((after[6] - (before[6] - 0.1)).abs() < 1e-15);
        assert!((after[7] - (before[7] + 0.2)).abs() < 1e-15);
        for i in 0..6 {
            assert_eq!(after[i], before[i]);
        }
    }
}
