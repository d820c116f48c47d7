//! Flat, ordered storage for named learnable matrices.
//!
//! Models register every tensor here at construction; the optimizer, the
//! checkpoint writer and the gradient checker all iterate in registration
//! order, which keeps updates, files and reports deterministic.

use crate::autodiff::{Graph, NodeId};
use crate::matrix::Matrix;
use rand::Rng;

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PId(pub usize);

/// Ordered set of named parameter matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    mats: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, m: Matrix) -> PId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.mats.push(m);
        PId(self.mats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn name(&self, id: PId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mat(&self, id: PId) -> &Matrix {
        &self.mats[id.0]
    }

    pub fn mat_mut(&mut self, id: PId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn mats_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.mats.iter())
    }

    pub fn total_entries(&self) -> usize {
        self.mats.iter().map(Matrix::len).sum()
    }

    /// Binds every parameter into `g` as a gradient-bearing leaf, in order.
    pub fn bind_all(&self, g: &mut Graph) -> Vec<NodeId> {
        self.mats.iter().map(|m| g.param(m.clone())).collect()
    }
}

/// Parameter indices of one fully-connected layer (`w`: d_in x d_out,
/// `b`: 1 x d_out).
#[derive(Debug, Clone, Copy)]
pub struct AffineIdx {
    pub w: PId,
    pub b: PId,
    pub d_in: usize,
    pub d_out: usize,
}

/// Graph bindings of one fully-connected layer.
#[derive(Debug, Clone, Copy)]
pub struct AffineNodes {
    pub w: NodeId,
    pub b: NodeId,
}

pub fn add_affine(
    ps: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> AffineIdx {
    let w = ps.add(format!("{prefix}.w"), glorot_uniform(d_in, d_out, rng));
    let b = ps.add(format!("{prefix}.b"), glorot_uniform(1, d_out, rng));
    AffineIdx { w, b, d_in, d_out }
}

pub fn add_affine_zeros(ps: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize) -> AffineIdx {
    let w = ps.add(format!("{prefix}.w"), Matrix::zeros(d_in, d_out));
    let b = ps.add(format!("{prefix}.b"), Matrix::zeros(1, d_out));
    AffineIdx { w, b, d_in, d_out }
}

impl AffineIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> AffineNodes {
        AffineNodes {
            w: bound[self.w.0],
            b: bound[self.b.0],
        }
    }
}

/// Glorot-uniform initialization: entries drawn from
/// U(-l, l) with l = sqrt(6 / (fan_in + fan_out)), fan_in = rows,
/// fan_out = cols.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect(),
    )
}
