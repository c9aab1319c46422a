//! Retrieval metrics and lifelong-learning summaries.
//!
//! `p[i][j]` is the retrieval performance on session `j`'s test queries
//! over the collection accumulated by session `j`, measured after learning
//! session `i`. The lower triangle plus diagonal feed session performance,
//! average performance, and forgetting; upper cells (model `i` evaluated on
//! a later session `j`) feed forward transfer.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::DocId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("relevant set is empty; query must be excluded upstream")]
    EmptyRelevantSet,
    #[error("ranking contains duplicate document {0}")]
    DuplicateInRanking(DocId),
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("perf matrix cell ({0}, {1}) not populated")]
    MissingCell(usize, usize),
    #[error("metric value {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Per-query rank metric kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Recall,
    Success,
    Mrr,
}

impl MetricKind {
    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::Recall => "r",
            MetricKind::Success => "s",
            MetricKind::Mrr => "mrr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recall" | "r" => Some(MetricKind::Recall),
            "success" | "s" => Some(MetricKind::Success),
            "mrr" => Some(MetricKind::Mrr),
            _ => None,
        }
    }
}

/// One metric at one cutoff, e.g. success at 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub cutoff: usize,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, cutoff: usize) -> Self {
        Self { kind, cutoff }
    }

    pub fn name(&self) -> String {
        alloc::format!("{}@{}", self.kind.label(), self.cutoff)
    }
}

/// Single-query rank metric over a duplicate-free ranking.
pub fn rank_metric(
    kind: MetricKind,
    cutoff: usize,
    ranking: &[DocId],
    relevant: &BTreeSet<DocId>,
) -> Result<f64, MetricsError> {
    if cutoff == 0 {
        return Err(MetricsError::ZeroCutoff);
    }
    if relevant.is_empty() {
        return Err(MetricsError::EmptyRelevantSet);
    }
    let mut seen = BTreeSet::new();
    for id in ranking {
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateInRanking(id.clone()));
        }
    }
    let top = ranking.iter().take(cutoff);
    Ok(match kind {
        MetricKind::Recall => {
            let hits = top.filter(|id| relevant.contains(*id)).count();
            hits as f64 / relevant.len() as f64
        }
        MetricKind::Success => {
            if top.into_iter().any(|id| relevant.contains(id)) {
                1.0
            } else {
                0.0
            }
        }
        MetricKind::Mrr => top
            .enumerate()
            .find(|(_, id)| relevant.contains(*id))
            .map_or(0.0, |(rank, _)| 1.0 / (rank + 1) as f64),
    })
}

/// Performance grid `p[i][j]` for sessions `0..=t_max`, tagged with the
/// metric it holds. Cells are filled as evaluations run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfMatrix {
    spec: MetricSpec,
    size: usize,
    cells: Vec<Option<f64>>,
}

impl PerfMatrix {
    pub fn new(t_max: usize, spec: MetricSpec) -> Self {
        let size = t_max + 1;
        Self {
            spec,
            size,
            cells: alloc::vec![None; size * size],
        }
    }

    pub fn spec(&self) -> MetricSpec {
        self.spec
    }

    /// Highest session index (`T`).
    pub fn t_max(&self) -> usize {
        self.size - 1
    }

    pub fn set(&mut self, model: usize, session: usize, value: f64) -> Result<(), MetricsError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::OutOfRange(value));
        }
        let size = self.size;
        self.cells[model * size + session] = Some(value);
        Ok(())
    }

    pub fn get(&self, model: usize, session: usize) -> Option<f64> {
        self.cells[model * self.size + session]
    }

    fn require(&self, model: usize, session: usize) -> Result<f64, MetricsError> {
        self.get(model, session)
            .ok_or(MetricsError::MissingCell(model, session))
    }

    pub fn filled_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |i| {
            (0..self.size).filter_map(move |j| self.get(i, j).map(|v| (i, j, v)))
        })
    }

    /// Lifelong summary after learning session `t`.
    ///
    /// - `p_t`: diagonal cell `p[t][t]`.
    /// - `ap`: mean of `p[1][1] ..= p[t][t]` (0 when `t` is 0).
    /// - `forget`: mean over earlier sessions `j < t` of the gap between
    ///   the best historical performance on `j` and the current one;
    ///   negative values mean the model improved on old sessions.
    /// - `fwt`: mean of `p[i][j]` over pairs `1 <= i < j <= t`, available
    ///   once every such cell is populated (requires `t >= 2`).
    pub fn lifelong_summary(&self, t: usize) -> Result<LifelongSummary, MetricsError> {
        let p_t = self.require(t, t)?;
        let ap = if t == 0 {
            0.0
        } else {
            (1..=t).map(|i| self.require(i, i)).sum::<Result<f64, _>>()? / t as f64
        };
        let forget = if t == 0 {
            None
        } else {
            // best historical performance on session j counts models that
            // have learned it (l >= j), so only the lower triangle is needed
            let mut total = 0.0;
            for j in 0..t {
                let current = self.require(t, j)?;
                let mut best = f64::NEG_INFINITY;
                for l in j..t {
                    best = best.max(self.require(l, j)?);
                }
                total += best - current;
            }
            Some(total / t as f64)
        };
        let fwt = if t < 2 {
            None
        } else {
            let mut cells = Vec::new();
            for j in 2..=t {
                for i in 1..j {
                    cells.push(self.get(i, j));
                }
            }
            if cells.iter().all(Option::is_some) {
                let total: f64 = cells.iter().map(|c| c.unwrap()).sum();
                Some(total / cells.len() as f64)
            } else {
                None
            }
        };
        Ok(LifelongSummary {
            session: t,
            p_t,
            ap,
            forget,
            fwt,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifelongSummary {
    pub session: usize,
    pub p_t: f64,
    pub ap: f64,
    pub forget: Option<f64>,
    pub fwt: Option<f64>,
}
