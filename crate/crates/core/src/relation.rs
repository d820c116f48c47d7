//! Deep metric heads and class prediction.
//!
//! The GRU head reads the M comparison rows in query order and scores the
//! pair from its last state; the FC head scores each row independently and
//! average-pools, so it is permutation-invariant by construction.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use crate::params::{add_affine, AffineIdx, AffineNodes, ParamSet};
use crate::recurrent::{add_gru, run_unidirectional, GruIdx, GruNodes};
use rand::Rng;

/// Relation head for sequence comparisons: uni-GRU over comparison rows plus
/// a single-neuron FC layer.
#[derive(Debug, Clone, Copy)]
pub struct GruHeadIdx {
    pub gru: GruIdx,
    pub fc: AffineIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct GruHeadNodes {
    pub gru: GruNodes,
    pub fc: AffineNodes,
}

pub fn add_gru_head(
    ps: &mut ParamSet,
    prefix: &str,
    w_in: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> GruHeadIdx {
    let gru = add_gru(ps, &format!("{prefix}.gru"), w_in, hidden, rng);
    let fc = add_affine(ps, &format!("{prefix}.fc"), hidden, 1, rng);
    GruHeadIdx { gru, fc }
}

impl GruHeadIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> GruHeadNodes {
        GruHeadNodes {
            gru: self.gru.nodes(bound),
            fc: self.fc.nodes(bound),
        }
    }
}

/// Scores an `M x w` comparison matrix: GRU over the rows, FC on the last
/// state. Returns a `1 x 1` node.
pub fn fsl_relation_score(g: &mut Graph, cmp: NodeId, p: &GruHeadNodes) -> Result<NodeId> {
    let m = g.shape(cmp).0;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        rows.push(g.row(cmp, i)?);
    }
    let out = run_unidirectional(g, &rows, &p.gru, None)?;
    g.affine(out.last, p.fc.w, p.fc.b)
}

/// Relation head without temporal structure: two FC layers applied per row,
/// mean-pooled to a scalar. Also used by the single-comparison ablations.
#[derive(Debug, Clone, Copy)]
pub struct FcHeadIdx {
    pub fc1: AffineIdx,
    pub fc2: AffineIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct FcHeadNodes {
    pub fc1: AffineNodes,
    pub fc2: AffineNodes,
}

pub fn add_fc_head(
    ps: &mut ParamSet,
    prefix: &str,
    w_in: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> FcHeadIdx {
    let fc1 = add_affine(ps, &format!("{prefix}.fc1"), w_in, hidden, rng);
    let fc2 = add_affine(ps, &format!("{prefix}.fc2"), hidden, 1, rng);
    FcHeadIdx { fc1, fc2 }
}

impl FcHeadIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> FcHeadNodes {
        FcHeadNodes {
            fc1: self.fc1.nodes(bound),
            fc2: self.fc2.nodes(bound),
        }
    }
}

/// Scores an `M x w` comparison matrix: per-row scalar through
/// relu(fc1) -> fc2, then the mean over rows. Returns a `1 x 1` node.
pub fn zsl_relation_score(g: &mut Graph, cmp: NodeId, p: &FcHeadNodes) -> Result<NodeId> {
    let h1 = g.affine(cmp, p.fc1.w, p.fc1.b)?;
    let a1 = g.relu(h1);
    let scores = g.affine(a1, p.fc2.w, p.fc2.b)?;
    Ok(g.mean_rows(scores))
}

/// Raw pair scores and everything derived from them for one episode query.
#[derive(Debug, Clone)]
pub struct RelationScores {
    /// `C x K` raw relation scores, one per (class, shot).
    pub raw: Matrix,
    /// Shot-averaged score per class.
    pub class_scores: Vec<f64>,
    /// Per-pair sigmoid of the raw scores (the quantity trained by the loss).
    pub train_probs: Matrix,
    /// Softmax of the class scores.
    pub class_probs: Vec<f64>,
    /// Argmax of `class_scores`; ties break toward the lowest index.
    pub predicted: usize,
}

/// Averages raw scores over shots, squashes and predicts.
pub fn aggregate_and_predict(raw: &Matrix) -> Result<RelationScores> {
    let (c, k) = raw.shape();
    if c < 2 {
        return Err(TarnError::Contract(format!(
            "aggregate_and_predict requires at least 2 classes, got {c}"
        )));
    }
    let class_scores: Vec<f64> = (0..c)
        .map(|ci| raw.row(ci).iter().sum::<f64>() / k as f64)
        .collect();
    let train_probs = raw.map(|v| 1.0 / (1.0 + (-v).exp()));
    let mx = class_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = class_scores.iter().map(|&s| (s - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let class_probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let predicted = class_scores
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0;
    Ok(RelationScores {
        raw: raw.clone(),
        class_scores,
        train_probs,
        class_probs,
        predicted,
    })
}
