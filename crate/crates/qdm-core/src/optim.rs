//! SGD and Adam over the flat parameter list.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if let OptimizerKind::Adam { beta1, beta2, eps } = *self {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::config(format!("adam {name} must be in [0, 1), got {b}")));
                }
            }
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::config(format!("adam eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Optimizer state for a fixed list of parameter tensors, addressed by
/// position. Learning rate 0 is legal and makes `apply` a no-op on the
/// weights (moments still advance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_sizes: &[usize]) -> Result<Self> {
        kind.validate()?;
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (
                param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
                param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Ok(Optimizer { kind, learning_rate, t: 0, m, v })
    }

    pub fn for_params(kind: OptimizerKind, learning_rate: f64, tensors: &[&Tensor]) -> Result<Self> {
        let sizes: Vec<usize> = tensors.iter().map(|t| t.numel()).collect();
        Self::new(kind, learning_rate, &sizes)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. `params` and `grads` must line up with the sizes this
    /// optimizer was built for.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.len() {
                return Err(Error::contract(format!(
                    "gradient length {} does not match parameter size {}",
                    g.len(),
                    p.numel()
                )));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &gi) in p.data_mut().iter_mut().zip(*g) {
                        *w -= self.learning_rate * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    return Err(Error::contract(format!(
                        "optimizer holds state for {} tensors, got {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (((w, &gi), mi), vi) in
                        p.data_mut().iter_mut().zip(*g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= self.learning_rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> Tensor {
        Tensor::vector(vec![value])
    }

    #[test]
    fn adam_single_step_matches_hand_oracle() {
        // f(w) = w^2 at w=1: g=2. m_hat = 2, v_hat = 4 after bias
        // correction, so w1 = 1 - 0.1 * 2/(2 + 1e-8) = 0.9000000005.
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), 0.1, &[1]).unwrap();
        opt.apply(&mut [&mut w], &[&[2.0]]).unwrap();
        assert!(
            (w.data()[0] - 0.9000000005).abs() < 1e-12,
            "w1 = {:.12}",
            w.data()[0]
        );
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn adam_later_steps_follow_the_moment_recursion() {
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimizerKind::adam_default(), 0.1, &[1]).unwrap();
        // Mirror the recursion with scalars to pin step 3 exactly.
        let (b1, b2, eps, lr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v, mut w_ref) = (0.0, 0.0, 1.0);
        for t in 1..=3 {
            let g = 2.0 * w_ref;
            let g_actual = 2.0 * w.data()[0];
            opt.apply(&mut [&mut w], &[&[g_actual]]).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat: f64 = v / (1.0 - b2.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            assert_eq!(w.data()[0].to_bits(), w_ref.to_bits(), "step {t}");
        }
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &[1]).unwrap();
        opt.apply(&mut [&mut w], &[&[2.0]]).unwrap();
        assert_eq!(w.data()[0], 1.0 - 0.1 * 2.0);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam_default()] {
            let mut w = Tensor::vector(vec![0.3, -1.7, 42.0]);
            let before = w.data().to_vec();
            let mut opt = Optimizer::new(kind, 0.0, &[3]).unwrap();
            opt.apply(&mut [&mut w], &[&[1.0, -2.0, 3.0]]).unwrap();
            let same = w
                .data()
                .iter()
                .zip(&before)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{kind:?} moved parameters at lr 0");
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut w = one(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &[1]).unwrap();
        assert!(opt.apply(&mut [&mut w], &[&[1.0, 2.0]]).is_err());
        assert!(opt.apply(&mut [&mut w], &[]).is_err());

        let mut adam = Optimizer::new(OptimizerKind::adam_default(), 0.1, &[1]).unwrap();
        let mut other = Tensor::vector(vec![0.0, 0.0]);
        assert!(adam.apply(&mut [&mut w, &mut other], &[&[1.0], &[1.0, 1.0]]).is_err());
    }

    #[test]
    fn bad_hyperparameters_are_config_errors() {
        assert!(Optimizer::new(
            OptimizerKind::Adam { beta1: 1.0, beta2: 0.999, eps: 1e-8 },
            0.1,
            &[1]
        )
        .is_err());
        assert!(Optimizer::new(
            OptimizerKind::Adam { beta1: 0.9, beta2: -0.1, eps: 1e-8 },
            0.1,
            &[1]
        )
        .is_err());
        assert!(Optimizer::new(
            OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 0.0 },
            0.1,
            &[1]
        )
        .is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, f64::NAN, &[1]).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, -0.1, &[1]).is_err());
    }
}
