//! Vector projections and the PSS/ISD selection criteria.
//!
//! Every selection decision decomposes a document embedding into the
//! component parallel to the query embedding (information related to the
//! query) and the component orthogonal to it (everything else). Positive
//! sample superiority ([`pss`]) compares parallel components against the
//! labeled positive; inter sample diversity ([`isd`]) measures spread among
//! orthogonal components.
//!
//! All geometry is computed in double precision so that selection argmaxes
//! are stable across platforms.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate query embedding (zero norm)")]
    DegenerateQuery,
    #[error("ISD undefined on empty set")]
    EmptyReferenceSet,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
}

/// Dense embedding vector; the unit of all geometric and scoring math.
///
/// Components are finite by construction. Within one run every embedding
/// has the same dimension; mixed-dimension operations return
/// [`GeometryError::DimMismatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, GeometryError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    /// Consumes the embedding, returning the raw component vector.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Dot product with a dimension check.
pub fn dot(a: &Embedding, b: &Embedding) -> Result<f64, GeometryError> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum())
}

fn nonzero_query_norm(q: &Embedding) -> Result<f64, GeometryError> {
    let n = q.norm();
    if n == 0.0 {
        Err(GeometryError::DegenerateQuery)
    } else {
        Ok(n)
    }
}

/// Signed scalar projection of `d` onto `q`: `(q . d) / |q|`.
///
/// The parallel component of `d` is `scalar_proj(d, q) * q / |q|` and the
/// orthogonal component is the remainder.
pub fn scalar_proj(d: &Embedding, q: &Embedding) -> Result<f64, GeometryError> {
    let norm = nonzero_query_norm(q)?;
    Ok(dot(d, q)? / norm)
}

/// Projection of `d` onto the direction of `q`.
pub fn proj_parallel(d: &Embedding, q: &Embedding) -> Result<Embedding, GeometryError> {
    let norm = nonzero_query_norm(q)?;
    let coeff = dot(d, q)? / (norm * norm);
    Ok(Embedding {
        values: q.values.iter().map(|v| coeff * v).collect(),
    })
}

/// Component of `d` orthogonal to `q`: `d - proj_parallel(d, q)`.
pub fn proj_perp(d: &Embedding, q: &Embedding) -> Result<Embedding, GeometryError> {
    let par = proj_parallel(d, q)?;
    Ok(Embedding {
        values: d
            .values
            .iter()
            .zip(&par.values)
            .map(|(x, p)| x - p)
            .collect(),
    })
}

fn sign(x: f64) -> f64 {
    // sign(0) := +1 keeps the criterion continuous at 0 and deterministic.
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Positive sample superiority of the labeled positive `d_pos` over
/// candidate `d` for query `q`.
///
/// With `a = scalar_proj(d_pos, q)` and `b = scalar_proj(d, q)` this is
/// `sign(a) * (a - b)`: the parallel components differ by `(a - b) * q_hat`,
/// so the sign test "same direction as the positive's parallel part" reduces
/// to the sign of `(a - b) * a` and the norm to `|a - b|`.
///
/// Higher values mean `d` is less likely an unlabeled positive.
pub fn pss(d: &Embedding, d_pos: &Embedding, q: &Embedding) -> Result<f64, GeometryError> {
    let a = scalar_proj(d_pos, q)?;
    let b = scalar_proj(d, q)?;
    Ok(sign(a) * (a - b))
}

/// Squared distance between the orthogonal components of `a` and `b`
/// relative to `q`, without materializing the projections: the parallel
/// part of the difference is removed via Pythagoras.
fn perp_dist_sq(a: &Embedding, b: &Embedding, q: &Embedding, q_norm: f64) -> f64 {
    let mut diff_sq = 0.0;
    let mut diff_dot_q = 0.0;
    for ((x, y), qi) in a.values.iter().zip(&b.values).zip(&q.values) {
        let d = x - y;
        diff_sq += d * d;
        diff_dot_q += d * qi;
    }
    let parallel = diff_dot_q / q_norm;
    (diff_sq - parallel * parallel).max(0.0)
}

/// Inter sample diversity of `d` relative to `others` for query `q`: the
/// mean distance between `d`'s orthogonal component and each member's.
///
/// Only orthogonal components matter; adding any multiple of `q` to `d` or
/// to members of `others` leaves the value unchanged.
pub fn isd(d: &Embedding, others: &[Embedding], q: &Embedding) -> Result<f64, GeometryError> {
    if others.is_empty() {
        return Err(GeometryError::EmptyReferenceSet);
    }
    let q_norm = nonzero_query_norm(q)?;
    let mut total = 0.0;
    for other in others {
        if other.dim() != d.dim() {
            return Err(GeometryError::DimMismatch {
                left: d.dim(),
                right: other.dim(),
            });
        }
        total += math::sqrt(perp_dist_sq(d, other, q, q_norm));
    }
    Ok(total / others.len() as f64)
}
