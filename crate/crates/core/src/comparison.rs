//! Per-segment comparison layer.
//!
//! Row m of the output compares query segment `q_m` with its aligned sample
//! segment `h_m` under one of five measures. Subt is the squared elementwise
//! difference, which keeps it symmetric in (q, h).

use crate::autodiff::{Graph, NodeId};
use crate::error::{Result, TarnError};
use crate::params::{add_affine, AffineIdx, AffineNodes, ParamSet};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The five comparison measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Mult,
    Subt,
    Nn,
    SubMultNn,
    EucCos,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::Mult,
        Measure::Subt,
        Measure::Nn,
        Measure::SubMultNn,
        Measure::EucCos,
    ];

    pub fn uses_nn(self) -> bool {
        matches!(self, Measure::Nn | Measure::SubMultNn)
    }

    /// Width of one comparison row for segment width `d`.
    pub fn output_width(self, d: usize, nn_hidden: usize) -> usize {
        match self {
            Measure::Mult | Measure::Subt => d,
            Measure::Nn | Measure::SubMultNn => nn_hidden,
            Measure::EucCos => 2,
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Measure::Mult => "mult",
            Measure::Subt => "subt",
            Measure::Nn => "nn",
            Measure::SubMultNn => "sub-mult-nn",
            Measure::EucCos => "euc-cos",
        };
        f.write_str(name)
    }
}

/// Comparison layer: the measure plus projection weights when it needs them.
#[derive(Debug, Clone, Copy)]
pub struct CmpIdx {
    pub measure: Measure,
    pub nn: Option<AffineIdx>,
}

#[derive(Debug, Clone, Copy)]
pub struct CmpNodes {
    pub measure: Measure,
    pub nn: Option<AffineNodes>,
}

pub fn add_comparison(
    ps: &mut ParamSet,
    prefix: &str,
    measure: Measure,
    d: usize,
    nn_hidden: usize,
    rng: &mut impl Rng,
) -> CmpIdx {
    let nn = measure
        .uses_nn()
        .then(|| add_affine(ps, &format!("{prefix}.nn"), 2 * d, nn_hidden, rng));
    CmpIdx { measure, nn }
}

impl CmpIdx {
    pub fn nodes(&self, bound: &[NodeId]) -> CmpNodes {
        CmpNodes {
            measure: self.measure,
            nn: self.nn.as_ref().map(|a| a.nodes(bound)),
        }
    }
}

/// Compares `q` and `h` (both `M x d`) row by row; returns `M x w`.
pub fn compare(g: &mut Graph, q: NodeId, h: NodeId, p: &CmpNodes) -> Result<NodeId> {
    if g.shape(q) != g.shape(h) {
        return Err(TarnError::shape("compare", g.shape(q), g.shape(h)));
    }
    match p.measure {
        Measure::Mult => g.mul(q, h),
        Measure::Subt => {
            let d = g.sub(q, h)?;
            Ok(g.square(d))
        }
        Measure::Nn => {
            let nn = nn_nodes(p)?;
            let cat = g.concat_cols(q, h)?;
            let aff = g.affine(cat, nn.w, nn.b)?;
            Ok(g.relu(aff))
        }
        Measure::SubMultNn => {
            let nn = nn_nodes(p)?;
            let diff = g.sub(q, h)?;
            let sq = g.square(diff);
            let prod = g.mul(q, h)?;
            let cat = g.concat_cols(sq, prod)?;
            let aff = g.affine(cat, nn.w, nn.b)?;
            Ok(g.relu(aff))
        }
        Measure::EucCos => {
            let m = g.shape(q).0;
            let mut rows = Vec::with_capacity(m);
            for i in 0..m {
                let qi = g.row(q, i)?;
                let hi = g.row(h, i)?;
                let dist = g.l2_rowpair(qi, hi)?;
                let cos = g.cosine_rowpair(qi, hi)?;
                rows.push(g.concat_cols(dist, cos)?);
            }
            g.stack_rows(&rows)
        }
    }
}

fn nn_nodes(p: &CmpNodes) -> Result<AffineNodes> {
    p.nn.ok_or_else(|| {
        TarnError::Contract("comparison measure requires projection weights".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn compare_values(q: &Matrix, h: &Matrix, measure: Measure, seed: u64) -> (Matrix, ParamSet, CmpIdx) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = add_comparison(&mut ps, "cmp", measure, q.cols(), 4, &mut rng);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let qn = g.constant(q.clone());
        let hn = g.constant(h.clone());
        let out = compare(&mut g, qn, hn, &p).unwrap();
        (g.value(out).clone(), ps, idx)
    }

    /// Independent scalar-loop oracle for all five measures.
    fn oracle(q: &[f64], h: &[f64], measure: Measure, ps: &ParamSet, idx: &CmpIdx) -> Vec<f64> {
        match measure {
            Measure::Mult => q.iter().zip(h).map(|(a, b)| a * b).collect(),
            Measure::Subt => q.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).collect(),
            Measure::Nn | Measure::SubMultNn => {
                let nn = idx.nn.unwrap();
                let w = ps.mat(nn.w);
                let b = ps.mat(nn.b);
                let cat: Vec<f64> = match measure {
                    Measure::Nn => q.iter().chain(h).copied().collect(),
                    _ => q
                        .iter()
                        .zip(h)
                        .map(|(a, c)| (a - c) * (a - c))
                        .chain(q.iter().zip(h).map(|(a, c)| a * c))
                        .collect(),
                };
                (0..w.cols())
                    .map(|j| {
                        let mut s = b.get(0, j);
                        for (i, v) in cat.iter().enumerate() {
                            s += v * w.get(i, j);
                        }
                        s.max(0.0)
                    })
                    .collect()
            }
            Measure::EucCos => {
                let dist = q
                    .iter()
                    .zip(h)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dot: f64 = q.iter().zip(h).map(|(a, b)| a * b).sum();
                let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nh = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = if nq == 0.0 || nh == 0.0 {
                    0.0
                } else {
                    dot / (nq * nh)
                };
                vec![dist, cos]
            }
        }
    }

    #[test]
    fn euccos_of_identical_rows() {
        let q = Matrix::from_rows(&[vec![1.0, 2.0, -0.5]]);
        let (v, _, _) = compare_values(&q, &q, Measure::EucCos, 1);
        assert_eq!(v.get(0, 0), 0.0);
        assert!((v.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euccos_orthogonal_unit_rows() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let h = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let (v, _, _) = compare_values(&q, &h, Measure::EucCos, 2);
        assert!((v.get(0, 0) - 2.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(v.get(0, 1), 0.0);
    }

    #[test]
    fn subt_and_mult_hand_arithmetic() {
        let q = Matrix::from_rows(&[vec![2.0, 3.0]]);
        let h = Matrix::from_rows(&[vec![4.0, 5.0]]);
        let (vs, _, _) = compare_values(&q, &h, Measure::Subt, 3);
        assert_eq!(vs.data(), &[4.0, 4.0]);
        let (vm, _, _) = compare_values(&q, &h, Measure::Mult, 4);
        assert_eq!(vm.data(), &[8.0, 15.0]);
    }

    #[test]
    fn all_measures_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, measure) in Measure::ALL.into_iter().enumerate() {
            for trial in 0..10 {
                let m = rng.random_range(1..4);
                let q = rand_matrix(&mut rng, m, 5);
                let h = rand_matrix(&mut rng, m, 5);
                let (v, ps, idx) = compare_values(&q, &h, measure, 500 + 10 * k as u64 + trial);
                for row in 0..m {
                    let expect = oracle(q.row(row), h.row(row), measure, &ps, &idx);
                    assert_eq!(v.cols(), expect.len());
                    for (a, e) in v.row(row).iter().zip(&expect) {
                        assert!((a - e).abs() < 1e-12, "{measure} row {row}");
                    }
                }
            }
        }
    }

    #[test]
    fn mult_and_subt_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = rand_matrix(&mut rng, 3, 4);
        let h = rand_matrix(&mut rng, 3, 4);
        for measure in [Measure::Mult, Measure::Subt] {
            let (a, _, _) = compare_values(&q, &h, measure, 60);
            let (b, _, _) = compare_values(&h, &q, measure, 60);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn euccos_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let q = rand_matrix(&mut rng, 4, 6);
            let h = rand_matrix(&mut rng, 4, 6);
            let (v, _, _) = compare_values(&q, &h, Measure::EucCos, 700 + trial);
            for r in 0..4 {
                assert!(v.get(r, 0) >= 0.0);
                assert!(v.get(r, 1) >= -1.0 - 1e-12 && v.get(r, 1) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let idx = add_comparison(&mut ps, "cmp", Measure::Mult, 3, 4, &mut rng);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let q = g.constant(Matrix::zeros(2, 3));
        let h = g.constant(Matrix::zeros(3, 3));
        assert!(matches!(
            compare(&mut g, q, h, &p),
            Err(TarnError::Shape { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences_for_every_measure() {
        use crate::gradcheck::{central_diff, max_rel_err};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for measure in Measure::ALL {
            let mut ps = ParamSet::new();
            let idx = add_comparison(&mut ps, "cmp", measure, 3, 4, &mut rng);
            let q0 = rand_matrix(&mut rng, 2, 3);
            let h0 = rand_matrix(&mut rng, 2, 3);
            // inputs: q, h, then any nn weights
            let mut inputs = vec![q0, h0];
            inputs.extend(ps.mats().iter().cloned());

            let run = |mats: &[Matrix]| -> crate::error::Result<(Graph, Vec<NodeId>, NodeId)> {
                let mut g = Graph::new();
                let ids: Vec<NodeId> = mats.iter().map(|m| g.param(m.clone())).collect();
                let nn = idx.nn.map(|_| AffineNodes { w: ids[2], b: ids[3] });
                let p = CmpNodes {
                    measure,
                    nn,
                };
                let out = compare(&mut g, ids[0], ids[1], &p)?;
                let sq = g.square(out);
                let loss = g.sum(sq);
                Ok((g, ids, loss))
            };

            let (mut g, ids, loss) = run(&inputs).unwrap();
            g.backward(loss).unwrap();
            let numeric = central_diff(
                &inputs,
                |mats| {
                    let (g, _, loss) = run(mats)?;
                    Ok(g.value(loss).item())
                },
                1e-5,
            )
            .unwrap();
            for (i, num) in numeric.iter().enumerate() {
                let err = max_rel_err(&g.grad_or_zeros(ids[i]), num);
                assert!(err < 1e-4, "{measure} input {i} rel err {err:.3e}");
            }
        }
    }
}
