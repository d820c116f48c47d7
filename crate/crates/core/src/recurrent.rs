//! GRU cell and sequence runners.
//!
//! Conventions pinned for this crate: the reset gate scales the previous
//! state before the recurrent matmul (original formulation), and the new
//! state is `(1 - z) * h_prev + z * h_cand`. The initial state is zero.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use crate::params::{glorot_uniform, ParamSet, PId};
use rand::Rng;

/// Parameter-set indices of one GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruIdx {
    pub wz: PId,
    pub uz: PId,
    pub bz: PId,
    pub wr: PId,
    pub ur: PId,
    pub br: PId,
    pub wh: PId,
    pub uh: PId,
    pub bh: PId,
    pub d_in: usize,
    pub hidden: usize,
}

/// Graph bindings of one GRU cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
    pub hidden: usize,
}

fn add_gru_with(
    ps: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    mut init: impl FnMut(usize, usize) -> Matrix,
) -> GruIdx {
    let wz = ps.add(format!("{prefix}.wz"), init(d_in, hidden));
    let uz = ps.add(format!("{prefix}.uz"), init(hidden, hidden));
    let bz = ps.add(format!("{prefix}.bz"), init(1, hidden));
    let wr = ps.add(format!("{prefix}.wr"), init(d_in, hidden));
    let ur = ps.add(format!("{prefix}.ur"), init(hidden, hidden));
    let br = ps.add(format!("{prefix}.br"), init(1, hidden));
    let wh = ps.add(format!("{prefix}.wh"), init(d_in, hidden));
    let uh = ps.add(format!("{prefix}.uh"), init(hidden, hidden));
    let bh = ps.add(format!("{prefix}.bh"), init(1, hidden));
    GruIdx {
        wz,
        uz,
        bz,
        wr,
        ur,
        br,
        wh,
        uh,
        bh,
        d_in,
        hidden,
    }
}

/// Registers Glorot-initialized GRU weights under `prefix.*`.
pub fn add_gru(
    ps: &mut ParamSet,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> GruIdx {
    add_gru_with(ps, prefix, d_in, hidden, |r, c| glorot_uniform(r, c, rng))
}

/// Registers zero-valued GRU weights (test fixtures).
pub fn add_gru_zeros(ps: &mut ParamSet, prefix: &str, d_in: usize, hidden: usize) -> GruIdx {
    add_gru_with(ps, prefix, d_in, hidden, Matrix::zeros)
}

impl GruIdx {
    /// Picks this cell's nodes out of a full [`ParamSet::bind_all`] result.
    pub fn nodes(&self, bound: &[NodeId]) -> GruNodes {
        GruNodes {
            wz: bound[self.wz.0],
            uz: bound[self.uz.0],
            bz: bound[self.bz.0],
            wr: bound[self.wr.0],
            ur: bound[self.ur.0],
            br: bound[self.br.0],
            wh: bound[self.wh.0],
            uh: bound[self.uh.0],
            bh: bound[self.bh.0],
            hidden: self.hidden,
        }
    }
}

/// One GRU step: `x` is `1 x d_in`, `h_prev` is `1 x h`; returns `1 x h`.
pub fn gru_cell(g: &mut Graph, x: NodeId, h_prev: NodeId, p: &GruNodes) -> Result<NodeId> {
    let xz = g.matmul(x, p.wz)?;
    let hz = g.matmul(h_prev, p.uz)?;
    let zi = g.add(xz, hz)?;
    let zb = g.add(zi, p.bz)?;
    let z = g.sigmoid(zb);

    let xr = g.matmul(x, p.wr)?;
    let hr = g.matmul(h_prev, p.ur)?;
    let ri = g.add(xr, hr)?;
    let rb = g.add(ri, p.br)?;
    let r = g.sigmoid(rb);

    let rh = g.mul(r, h_prev)?;
    let xc = g.matmul(x, p.wh)?;
    let hc = g.matmul(rh, p.uh)?;
    let ci = g.add(xc, hc)?;
    let cb = g.add(ci, p.bh)?;
    let cand = g.tanh(cb);

    let ones = g.constant(Matrix::ones(1, p.hidden));
    let keep = g.sub(ones, z)?;
    let old = g.mul(keep, h_prev)?;
    let new = g.mul(z, cand)?;
    g.add(old, new)
}

/// Outputs of a sequence run: one node per step, plus the stacked matrix and
/// the final step.
pub struct SeqOut {
    pub steps: Vec<NodeId>,
    pub stacked: NodeId,
    pub last: NodeId,
}

/// Runs the cell over `rows` left to right. `h0` defaults to zeros.
pub fn run_unidirectional(
    g: &mut Graph,
    rows: &[NodeId],
    p: &GruNodes,
    h0: Option<NodeId>,
) -> Result<SeqOut> {
    if rows.is_empty() {
        return Err(TarnError::Contract("empty sequence".into()));
    }
    let mut h = match h0 {
        Some(h) => h,
        None => g.constant(Matrix::zeros(1, p.hidden)),
    };
    let mut steps = Vec::with_capacity(rows.len());
    for &x in rows {
        h = gru_cell(g, x, h, p)?;
        steps.push(h);
    }
    let stacked = g.stack_rows(&steps)?;
    Ok(SeqOut {
        last: *steps.last().unwrap(),
        steps,
        stacked,
    })
}

/// Runs two cells over the sequence, one per direction, and concatenates per
/// step; output width is `2 * hidden`.
pub fn run_bidirectional(
    g: &mut Graph,
    rows: &[NodeId],
    p_fwd: &GruNodes,
    p_bwd: &GruNodes,
) -> Result<SeqOut> {
    if rows.is_empty() {
        return Err(TarnError::Contract("empty sequence".into()));
    }
    let fwd = run_unidirectional(g, rows, p_fwd, None)?;
    let reversed: Vec<NodeId> = rows.iter().rev().copied().collect();
    let bwd_rev = run_unidirectional(g, &reversed, p_bwd, None)?;

    let t_len = rows.len();
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let b = bwd_rev.steps[t_len - 1 - t];
        steps.push(g.concat_cols(fwd.steps[t], b)?);
    }
    let stacked = g.stack_rows(&steps)?;
    Ok(SeqOut {
        last: *steps.last().unwrap(),
        steps,
        stacked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn setup(d_in: usize, hidden: usize, seed: u64) -> (ParamSet, GruIdx) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = add_gru(&mut ps, "gru", d_in, hidden, &mut rng);
        (ps, idx)
    }

    /// Scalar-loop oracle for one GRU step, independent of the graph.
    fn cell_oracle(ps: &ParamSet, idx: &GruIdx, x: &Matrix, h_prev: &Matrix) -> Vec<f64> {
        let h = idx.hidden;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let lin = |w: &Matrix, u: &Matrix, b: &Matrix, j: usize| {
            let mut s = b.get(0, j);
            for i in 0..idx.d_in {
                s += x.get(0, i) * w.get(i, j);
            }
            for i in 0..h {
                s += h_prev.get(0, i) * u.get(i, j);
            }
            s
        };
        let mut out = vec![0.0; h];
        let mut r = vec![0.0; h];
        let mut z = vec![0.0; h];
        for j in 0..h {
            z[j] = sig(lin(ps.mat(idx.wz), ps.mat(idx.uz), ps.mat(idx.bz), j));
            r[j] = sig(lin(ps.mat(idx.wr), ps.mat(idx.ur), ps.mat(idx.br), j));
        }
        for j in 0..h {
            let mut s = ps.mat(idx.bh).get(0, j);
            for i in 0..idx.d_in {
                s += x.get(0, i) * ps.mat(idx.wh).get(i, j);
            }
            for i in 0..h {
                s += r[i] * h_prev.get(0, i) * ps.mat(idx.uh).get(i, j);
            }
            let cand = s.tanh();
            out[j] = (1.0 - z[j]) * h_prev.get(0, j) + z[j] * cand;
        }
        out
    }

    #[test]
    fn zero_params_fixed_point() {
        let mut ps = ParamSet::new();
        let idx = add_gru_zeros(&mut ps, "gru", 3, 2);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let x = g.constant(Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]));
        let h0 = g.constant(Matrix::zeros(1, 2));
        let h = gru_cell(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn closed_update_gate_keeps_previous_state() {
        // zero weights, strongly negative update bias: z ~ 0 so h ~ h_prev.
        let mut ps = ParamSet::new();
        let idx = add_gru_zeros(&mut ps, "gru", 2, 2);
        *ps.mat_mut(idx.bz) = Matrix::from_rows(&[vec![-40.0, -40.0]]);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let x = g.constant(Matrix::from_rows(&[vec![3.0, -1.0]]));
        let h_prev = g.constant(Matrix::from_rows(&[vec![0.7, -0.3]]));
        let h = gru_cell(&mut g, x, h_prev, &p).unwrap();
        for (a, b) in g.value(h).data().iter().zip(g.value(h_prev).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let (ps, idx) = setup(3, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = rand_matrix(&mut rng, 1, 3);
        let h_prev = rand_matrix(&mut rng, 1, 2);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let xn = g.constant(x.clone());
        let hn = g.constant(h_prev.clone());
        let h = gru_cell(&mut g, xn, hn, &p).unwrap();
        let expect = cell_oracle(&ps, &idx, &x, &h_prev);
        for (a, e) in g.value(h).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn unidirectional_single_step_equals_cell() {
        let (ps, idx) = setup(3, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let x = rand_matrix(&mut rng, 1, 3);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let xn = g.constant(x.clone());
        let out = run_unidirectional(&mut g, &[xn], &p, None).unwrap();
        let h0 = g.constant(Matrix::zeros(1, 2));
        let xc = g.constant(x);
        let cell = gru_cell(&mut g, xc, h0, &p).unwrap();
        assert_eq!(g.value(out.last).data(), g.value(cell).data());
    }

    #[test]
    fn unidirectional_matches_unrolled_cells() {
        let (ps, idx) = setup(3, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let xs: Vec<Matrix> = (0..3).map(|_| rand_matrix(&mut rng, 1, 3)).collect();
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let rows: Vec<NodeId> = xs.iter().map(|m| g.constant(m.clone())).collect();
        let out = run_unidirectional(&mut g, &rows, &p, None).unwrap();

        let mut h = g.constant(Matrix::zeros(1, 4));
        for m in &xs {
            let x = g.constant(m.clone());
            h = gru_cell(&mut g, x, h, &p).unwrap();
        }
        for (a, b) in g.value(out.last).data().iter().zip(g.value(h).data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.shape(out.stacked), (3, 4));
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let (ps, idx) = setup(3, 2, 8);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        assert!(matches!(
            run_unidirectional(&mut g, &[], &p, None),
            Err(TarnError::Contract(_))
        ));
        assert!(matches!(
            run_bidirectional(&mut g, &[], &p, &p),
            Err(TarnError::Contract(_))
        ));
    }

    #[test]
    fn bidirectional_single_step_concatenates_both_directions() {
        let (mut ps, idx_f) = setup(3, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let idx_b = add_gru(&mut ps, "bwd", 3, 2, &mut rng);
        let x = rand_matrix(&mut rng, 1, 3);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let pf = idx_f.nodes(&bound);
        let pb = idx_b.nodes(&bound);
        let xn = g.constant(x.clone());
        let out = run_bidirectional(&mut g, &[xn], &pf, &pb).unwrap();
        let h0 = g.constant(Matrix::zeros(1, 2));
        let xc = g.constant(x);
        let f = gru_cell(&mut g, xc, h0, &pf).unwrap();
        let b = gru_cell(&mut g, xc, h0, &pb).unwrap();
        let fv = g.value(f).data().to_vec();
        let bv = g.value(b).data().to_vec();
        let expect: Vec<f64> = fv.into_iter().chain(bv).collect();
        assert_eq!(g.value(out.last).data(), &expect[..]);
        assert_eq!(g.shape(out.stacked), (1, 4));
    }

    #[test]
    fn palindrome_with_shared_params_is_time_reversal_symmetric() {
        // p_fwd == p_bwd on a palindromic sequence: reversing time swaps the
        // two halves of the feature axis.
        let (ps, idx) = setup(2, 3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let a = rand_matrix(&mut rng, 1, 2);
        let b = rand_matrix(&mut rng, 1, 2);
        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let an = g.constant(a.clone());
        let bn = g.constant(b);
        let a2 = g.constant(a);
        let out = run_bidirectional(&mut g, &[an, bn, a2], &p, &p).unwrap();
        let v = g.value(out.stacked);
        let (t_len, width) = v.shape();
        let h = width / 2;
        for t in 0..t_len {
            for j in 0..h {
                let fwd = v.get(t, j);
                let bwd_mirror = v.get(t_len - 1 - t, h + j);
                assert!((fwd - bwd_mirror).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_state_bounded_by_one_from_zero_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let (ps, idx) = setup(3, 4, 200 + trial);
            let t_len = rng.random_range(1..8);
            let mut g = Graph::new();
            let bound = ps.bind_all(&mut g);
            let p = idx.nodes(&bound);
            let rows: Vec<NodeId> = (0..t_len)
                .map(|_| {
                    let m = rand_matrix(&mut rng, 1, 3).map(|v| v * 5.0);
                    g.constant(m)
                })
                .collect();
            let out = run_unidirectional(&mut g, &rows, &p, None).unwrap();
            let max = g
                .value(out.stacked)
                .data()
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(max <= 1.0 + 1e-12, "|h| = {max} escapes the unit bound");
        }
    }

    #[test]
    fn five_step_unroll_gradients_match_finite_differences() {
        let (ps, idx) = setup(2, 3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        let xs: Vec<Matrix> = (0..5).map(|_| rand_matrix(&mut rng, 1, 2)).collect();

        let loss_of = |mats: &[Matrix]| -> crate::error::Result<f64> {
            let mut ps2 = ParamSet::new();
            let idx2 = add_gru_zeros(&mut ps2, "gru", 2, 3);
            for (i, m) in mats.iter().enumerate() {
                *ps2.mat_mut(PId(i)) = m.clone();
            }
            let _ = idx2;
            let mut g = Graph::new();
            let bound = ps2.bind_all(&mut g);
            let p = idx2.nodes(&bound);
            let rows: Vec<NodeId> = xs.iter().map(|m| g.constant(m.clone())).collect();
            let out = run_unidirectional(&mut g, &rows, &p, None)?;
            let sq = g.square(out.stacked);
            let loss = g.sum(sq);
            Ok(g.value(loss).item())
        };

        let mut g = Graph::new();
        let bound = ps.bind_all(&mut g);
        let p = idx.nodes(&bound);
        let rows: Vec<NodeId> = xs.iter().map(|m| g.constant(m.clone())).collect();
        let out = run_unidirectional(&mut g, &rows, &p, None).unwrap();
        let sq = g.square(out.stacked);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();

        let numeric = central_diff(ps.mats(), loss_of, 1e-5).unwrap();
        for (i, num) in numeric.iter().enumerate() {
            let ana = g.grad_or_zeros(bound[i]);
            let err = max_rel_err(&ana, num);
            assert!(err < 1e-4, "tensor {} rel err {err:.3e}", ps.names()[i]);
        }
    }
}
