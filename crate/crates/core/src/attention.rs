//! Segment-by-segment attention.
//!
//! `align` computes `A = softmax((S W + e_N (x) b) Q^T)` and `H = A^T S`.
//! The softmax normalizes over the N sample segments for each fixed query
//! segment (column-wise on the `N x M` logit matrix), so each row of `H` is a
//! convex combination of the rows of `S` and `H` always has exactly M rows.
//!
//! Note that the bias contributes `b . q_m` to every row of logit column m,
//! a per-column constant the softmax cancels: `b` has an identically zero
//! gradient under this normalization axis. It stays a parameter to keep the
//! layer's published form.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Result, TarnError};
use crate::params::{glorot_uniform, ParamSet, PId};
use rand::Rng;

/// Parameter indices of the attention layer (`w`: d x d, `b`: 1 x d).
#[derive(Debug, Clone, Copy)]
pub struct AttnIdx {
    pub w: PId,
    pub b: PId,
    pub d: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnNodes {
    pub w: NodeId,
    pub b: NodeId,
}

pub fn add_attention(ps: &mut ParamSet, prefix: &str, d: usize, rng: &mut impl Rng) -> AttnIdx {
    let w = ps.add(format!("{prefix}.w"), glorot_uniform(d, d, rng));
    let b = ps.add(format!("{prefix}.b"), glorot_uniform(1, d, rng));
    AttnIdx { w, b, d }
}

impl AttnIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> AttnNodes {
        AttnNodes {
            w: bound[self.w.0],
            b: bound[self.b.0],
        }
    }
}

/// Aligns sample rows `s` (`N x d`) to query rows `q` (`M x d`).
///
/// Returns the attention weights `A` (`N x M`, every column sums to 1) and
/// the aligned sample `H` (`M x d`).
pub fn align(g: &mut Graph, s: NodeId, q: NodeId, p: &AttnNodes) -> Result<(NodeId, NodeId)> {
    let (_, ds) = g.shape(s);
    let (_, dq) = g.shape(q);
    if ds != dq {
        return Err(TarnError::shape("align", g.shape(s), g.shape(q)));
    }
    let sw = g.matmul(s, p.w)?;
    let swb = g.add_row(sw, p.b)?;
    let qt = g.transpose(q);
    let logits = g.matmul(swb, qt)?;
    let a = g.softmax_cols(logits);
    let at = g.transpose(a);
    let h = g.matmul(at, s)?;
    Ok((a, h))
}
