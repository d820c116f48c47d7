//! Optimizers, gradient clipping and the learning-rate schedule.

use crate::error::{Result, TarnError};
use crate::matrix::Matrix;
use crate::params::ParamSet;
use serde::{Deserialize, Serialize};

/// Optimizer family and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn sgd_momentum_default() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state aligned with a [`ParamSet`]'s registration order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    /// SGD velocity, or Adam first moment.
    m: Vec<Matrix>,
    /// Adam second moment (unused for SGD).
    v: Vec<Matrix>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let zeros: Vec<Matrix> = params
            .mats()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let v = match kind {
            OptimizerKind::Adam { .. } => zeros.clone(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            m: zeros,
            v,
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update in place. `grads` must align with `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(TarnError::Contract(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            let p = &params.mats()[i];
            if p.shape() != g.shape() {
                return Err(TarnError::shape("optimizer_step", p.shape(), g.shape()));
            }
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for (i, g) in grads.iter().enumerate() {
                    let vel = &mut self.m[i];
                    for (v, &gv) in vel.data_mut().iter_mut().zip(g.data()) {
                        *v = momentum * *v + gv;
                    }
                    let p = params.mat_mut(crate::params::PId(i));
                    for (pv, &v) in p.data_mut().iter_mut().zip(vel.data()) {
                        *pv -= lr * v;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, g) in grads.iter().enumerate() {
                    for ((m, v), &gv) in self.m[i]
                        .data_mut()
                        .iter_mut()
                        .zip(self.v[i].data_mut())
                        .zip(g.data())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * gv;
                        *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                    }
                    let p = params.mat_mut(crate::params::PId(i));
                    for ((pv, &m), &v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(self.m[i].data())
                        .zip(self.v[i].data())
                    {
                        let m_hat = m / bc1;
                        let v_hat = v / bc2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients by `max_norm / norm` when their global L2 norm
/// exceeds `max_norm`; smaller gradients pass through untouched. Returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(scale);
        }
    }
    norm
}

/// One stage of a piecewise-constant learning-rate schedule: `lr` applies up
/// to and including episode `until`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub until: u64,
    pub lr: f64,
}

/// Piecewise-constant schedule over 1-based episode indices; past the last
/// breakpoint the final rate holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(pub Vec<LrStage>);

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule(vec![LrStage { until: u64::MAX, lr }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(TarnError::Config("empty learning-rate schedule".into()));
        }
        if self.0.windows(2).any(|w| w[0].until >= w[1].until) {
            return Err(TarnError::Config(
                "learning-rate breakpoints must increase".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, episode: u64) -> f64 {
        for stage in &self.0 {
            if episode <= stage.until {
                return stage.lr;
            }
        }
        self.0.last().expect("validated non-empty").lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PId;

    fn one_param(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("p", Matrix::scalar(v));
        ps
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut ps = one_param(0.0);
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), &ps);
        opt.step(&mut ps, &[Matrix::scalar(1.0)], 0.01).unwrap();
        let delta = ps.mat(PId(0)).item();
        assert!((delta + 0.01).abs() < 1e-9, "first Adam step was {delta}");
    }

    #[test]
    fn sgd_zero_momentum_is_vanilla_descent() {
        let mut ps = one_param(1.0);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.0 }, &ps);
        opt.step(&mut ps, &[Matrix::scalar(0.25)], 0.1).unwrap();
        assert_eq!(ps.mat(PId(0)).item(), 1.0 - 0.1 * 0.25);
    }

    #[test]
    fn first_momentum_step_equals_plain_sgd() {
        let mut a = one_param(2.0);
        let mut b = one_param(2.0);
        let g = Matrix::scalar(0.5);
        Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.9 }, &a)
            .step(&mut a, std::slice::from_ref(&g), 0.1)
            .unwrap();
        Optimizer::new(OptimizerKind::SgdMomentum { momentum: 0.0 }, &b)
            .step(&mut b, std::slice::from_ref(&g), 0.1)
            .unwrap();
        assert_eq!(a.mat(PId(0)).item(), b.mat(PId(0)).item());
    }

    #[test]
    fn momentum_steps_match_scalar_recurrence() {
        // minimize f(p) = p^2 / 2 with gradient p; three steps by hand.
        let (m, lr) = (0.9, 0.1);
        let mut p_ref = 1.0;
        let mut v_ref = 0.0;
        let mut ps = one_param(1.0);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum { momentum: m }, &ps);
        for _ in 0..3 {
            let g = ps.mat(PId(0)).item();
            opt.step(&mut ps, &[Matrix::scalar(g)], lr).unwrap();
            v_ref = m * v_ref + p_ref;
            p_ref -= lr * v_ref;
            assert!((ps.mat(PId(0)).item() - p_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_scales_by_norm_ratio() {
        // ||(1.2, 1.6)|| = 2.0; clipping at 0.5 scales by 0.25 exactly.
        let mut grads = vec![Matrix::from_rows(&[vec![1.2, 1.6]])];
        let norm = clip_global_norm(&mut grads, 0.5);
        assert_eq!(norm, 2.0);
        assert_eq!(grads[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn small_gradients_pass_through_bit_exact() {
        let src = vec![Matrix::from_rows(&[vec![0.1, -0.2, 0.05]])];
        let mut grads = src.clone();
        clip_global_norm(&mut grads, 0.5);
        assert_eq!(grads[0].data(), src[0].data());
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut ps = one_param(0.0);
        let mut opt = Optimizer::new(OptimizerKind::sgd_momentum_default(), &ps);
        assert!(matches!(
            opt.step(&mut ps, &[Matrix::zeros(2, 2)], 0.1),
            Err(TarnError::Shape { .. })
        ));
    }

    #[test]
    fn schedule_switches_exactly_at_breakpoints() {
        let s = LrSchedule(vec![
            LrStage { until: 10_000, lr: 1e-3 },
            LrStage { until: 20_000, lr: 1e-4 },
        ]);
        s.validate().unwrap();
        assert_eq!(s.lr_at(1), 1e-3);
        assert_eq!(s.lr_at(10_000), 1e-3);
        assert_eq!(s.lr_at(10_001), 1e-4);
        assert_eq!(s.lr_at(20_000), 1e-4);
        assert_eq!(s.lr_at(99_999), 1e-4);
    }
}
