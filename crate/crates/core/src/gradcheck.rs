//! Central-difference gradient verification.
//!
//! The numeric side is deliberately independent of the graph: it only needs a
//! closure mapping parameter matrices to a scalar loss, which it probes entry
//! by entry with symmetric perturbations.

use crate::error::{Result, TarnError};
use crate::matrix::Matrix;

/// Relative error with a floor so near-zero pairs compare absolutely.
///
/// The floor must sit above central-difference rounding noise
/// (eps * |loss| / 2h, about 1e-11 per unit of loss at h = 1e-5): a
/// parameter whose true gradient is exactly zero still reads back FD noise
/// at that scale, and dividing noise by a tighter floor would flag it.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-4)
}

/// Worst relative error between two same-shape gradient matrices.
pub fn max_rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Numeric gradients of `loss` with respect to every entry of every input,
/// via central differences with step `h`.
pub fn central_diff(
    inputs: &[Matrix],
    mut loss: impl FnMut(&[Matrix]) -> Result<f64>,
    h: f64,
) -> Result<Vec<Matrix>> {
    let mut work: Vec<Matrix> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let (rows, cols) = inputs[t].shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let up = loss(&work)?;
            work[t].data_mut()[i] = orig - h;
            let down = loss(&work)?;
            work[t].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Outcome of checking one named tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
}

/// Per-tensor comparison of analytic against central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.threshold)
    }

    pub fn failing(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_err >= self.threshold)
            .collect()
    }

    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares caller-supplied analytic gradients with central differences of
/// `loss` over the same tensors.
pub fn check_gradients(
    names: &[String],
    values: &[Matrix],
    analytic: &[Matrix],
    loss: impl FnMut(&[Matrix]) -> Result<f64>,
    h: f64,
    threshold: f64,
) -> Result<GradcheckReport> {
    if names.len() != values.len() || values.len() != analytic.len() {
        return Err(TarnError::Contract(
            "check_gradients: names/values/analytic length mismatch".into(),
        ));
    }
    let numeric = central_diff(values, loss, h)?;
    let tensors = names
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(name, (a, n))| TensorCheck {
            name: name.clone(),
            max_rel_err: max_rel_err(a, n),
        })
        .collect();
    Ok(GradcheckReport { tensors, threshold })
}
