//! Segment-wise visual embedding and class-wise semantic embedding.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use crate::params::{add_affine, AffineIdx, AffineNodes, ParamSet};
use crate::recurrent::{add_gru, run_bidirectional, run_unidirectional, GruIdx, GruNodes};
use rand::Rng;

/// Visual embedder: a bidirectional GRU for the full model, a unidirectional
/// one for the single-vector ablation.
#[derive(Debug, Clone, Copy)]
pub struct VisualEmbedderIdx {
    pub fwd: GruIdx,
    pub bwd: Option<GruIdx>,
    pub d_in: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct VisualEmbedderNodes {
    pub fwd: GruNodes,
    pub bwd: Option<GruNodes>,
    pub d_in: usize,
}

pub fn add_visual_embedder(
    ps: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    bidirectional: bool,
    rng: &mut impl Rng,
) -> VisualEmbedderIdx {
    let fwd = add_gru(ps, &format!("{prefix}.fwd"), d_in, hidden, rng);
    let bwd = bidirectional.then(|| add_gru(ps, &format!("{prefix}.bwd"), d_in, hidden, rng));
    VisualEmbedderIdx {
        fwd,
        bwd,
        d_in,
        hidden,
    }
}

impl VisualEmbedderIdx {
    /// Embedding width: `2 * hidden` bidirectional, `hidden` otherwise.
    pub fn out_width(&self) -> usize {
        if self.bwd.is_some() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn nodes(&self, bound: &[NodeId]) -> VisualEmbedderNodes {
        VisualEmbedderNodes {
            fwd: self.fwd.nodes(bound),
            bwd: self.bwd.as_ref().map(|b| b.nodes(bound)),
            d_in: self.d_in,
        }
    }
}

fn feature_rows(g: &mut Graph, features: &Matrix) -> Vec<NodeId> {
    (0..features.rows())
        .map(|r| g.constant(features.row_matrix(r)))
        .collect()
}

fn check_d_in(op: &'static str, features: &Matrix, d_in: usize) -> Result<()> {
    if features.cols() != d_in {
        return Err(TarnError::shape(op, features.shape(), (features.rows(), d_in)));
    }
    Ok(())
}

/// Embeds an `N x d_in` segment-feature matrix into `N x 2h` rows, one
/// bidirectional GRU output per segment.
pub fn embed_video(
    g: &mut Graph,
    features: &Matrix,
    p: &VisualEmbedderNodes,
) -> Result<NodeId> {
    check_d_in("embed_video", features, p.d_in)?;
    let bwd = p.bwd.as_ref().ok_or_else(|| {
        TarnError::Contract("embed_video requires a bidirectional embedder".into())
    })?;
    let rows = feature_rows(g, features);
    Ok(run_bidirectional(g, &rows, &p.fwd, bwd)?.stacked)
}

/// Single-vector ablation: the last step of a unidirectional GRU, `1 x h`.
pub fn embed_video_single(
    g: &mut Graph,
    features: &Matrix,
    p: &VisualEmbedderNodes,
) -> Result<NodeId> {
    check_d_in("embed_video_single", features, p.d_in)?;
    if p.bwd.is_some() {
        return Err(TarnError::Contract(
            "embed_video_single requires a unidirectional embedder".into(),
        ));
    }
    let rows = feature_rows(g, features);
    Ok(run_unidirectional(g, &rows, &p.fwd, None)?.last)
}

/// Semantic embedder: two stacked FC layers, relu after the first.
#[derive(Debug, Clone, Copy)]
pub struct SemanticEmbedderIdx {
    pub fc1: AffineIdx,
    pub fc2: AffineIdx,
    pub d_sem: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SemanticEmbedderNodes {
    pub fc1: AffineNodes,
    pub fc2: AffineNodes,
    pub d_sem: usize,
}

pub fn add_semantic_embedder(
    ps: &mut ParamSet,
    prefix: &str,
    d_sem: usize,
    hidden: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> SemanticEmbedderIdx {
    let fc1 = add_affine(ps, &format!("{prefix}.fc1"), d_sem, hidden, rng);
    let fc2 = add_affine(ps, &format!("{prefix}.fc2"), hidden, d_out, rng);
    SemanticEmbedderIdx {
        fc1,
        fc2,
        d_sem,
        d_out,
    }
}

impl SemanticEmbedderIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> SemanticEmbedderNodes {
        SemanticEmbedderNodes {
            fc1: self.fc1.nodes(bound),
            fc2: self.fc2.nodes(bound),
            d_sem: self.d_sem,
        }
    }
}

/// Embeds a `1 x d_sem` class vector into a `1 x d` row matching the visual
/// embedding width.
pub fn embed_semantic(
    g: &mut Graph,
    vec: &Matrix,
    p: &SemanticEmbedderNodes,
) -> Result<NodeId> {
    if vec.rows() != 1 || vec.cols() != p.d_sem {
        return Err(TarnError::shape("embed_semantic", vec.shape(), (1, p.d_sem)));
    }
    let x = g.constant(vec.clone());
    let h1 = g.affine(x, p.fc1.w, p.fc1.b)?;
    let a1 = g.relu(h1);
    g.affine(a1, p.fc2.w, p.fc2.b)
}
