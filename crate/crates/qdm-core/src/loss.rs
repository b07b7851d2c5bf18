//! Objective functions: contrastive, triplet, quadruplet (with per-term
//! breakdown), batched softmax cross-entropy, and the beta-combined total.
//!
//! Quadruplet distances are unsquared L2; the triplet form squares its
//! distances. Both are kept as written, the asymmetry is intentional.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Margins and weights of the quadruplet objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrupletLossConfig {
    /// Margin for the negative term.
    pub m: f64,
    /// Margin for the minority term; must exceed `m`.
    pub m2: f64,
    /// Extra pull applied to positive pairs of emphasized anchors.
    pub lambda_pos: f64,
    /// Weight of the minority term.
    pub lambda_minor: f64,
    /// Weight of the quadruplet term inside the combined objective.
    pub beta: f64,
}

impl QuadrupletLossConfig {
    /// Validated construction: margins nonnegative with `m2 > m`, both
    /// lambdas strictly above 1, beta nonnegative. Violations fail fast.
    pub fn new(m: f64, m2: f64, lambda_pos: f64, lambda_minor: f64, beta: f64) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::config(format!("margin M must be nonnegative, got {m}")));
        }
        if !m2.is_finite() || m2 <= m {
            return Err(Error::config(format!(
                "margin M2 must exceed M ({m}), got {m2}"
            )));
        }
        if !(lambda_pos > 1.0) {
            return Err(Error::config(format!(
                "lambda_pos must be greater than 1, got {lambda_pos}"
            )));
        }
        if !(lambda_minor > 1.0) {
            return Err(Error::config(format!(
                "lambda_minor must be greater than 1, got {lambda_minor}"
            )));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::config(format!("beta must be nonnegative, got {beta}")));
        }
        Ok(QuadrupletLossConfig { m, m2, lambda_pos, lambda_minor, beta })
    }

    /// Construction without the margin/lambda ordering checks. Ablation
    /// variants deliberately collapse the margins (`m2 == m`) or disable
    /// the lambdas (`== 1`), which `new` rightly rejects.
    pub fn unchecked(m: f64, m2: f64, lambda_pos: f64, lambda_minor: f64, beta: f64) -> Self {
        QuadrupletLossConfig { m, m2, lambda_pos, lambda_minor, beta }
    }

    /// The loosest bounds any variant must satisfy: everything finite,
    /// margins and beta nonnegative, lambdas at least 1. Lets ablation
    /// configs through where `new` would not.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("m2", self.m2),
            ("lambda_pos", self.lambda_pos),
            ("lambda_minor", self.lambda_minor),
            ("beta", self.beta),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("loss parameter {name} must be finite, got {v}")));
            }
        }
        if self.m < 0.0 || self.m2 < 0.0 || self.beta < 0.0 {
            return Err(Error::config("margins and beta must be nonnegative".to_string()));
        }
        if self.lambda_pos < 1.0 || self.lambda_minor < 1.0 {
            return Err(Error::config("lambdas must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// `Y*D + (1-Y)*max(0, margin - D)` with `D = ||e1 - e2||`.
pub fn contrastive_loss(
    tape: &mut Tape,
    e1: Var,
    e2: Var,
    same_class: bool,
    margin: f64,
) -> Result<Var> {
    let d = tape.euclidean_distance(e1, e2)?;
    if same_class {
        Ok(d)
    } else {
        let gap = tape.affine(d, -1.0, margin);
        Ok(tape.relu(gap))
    }
}

fn squared_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}

/// `max(0, ||a-p||^2 - ||a-n||^2 + margin)`.
pub fn triplet_loss(tape: &mut Tape, a: Var, p: Var, n: Var, margin: f64) -> Result<Var> {
    let d2_pos = squared_distance(tape, a, p)?;
    let d2_neg = squared_distance(tape, a, n)?;
    let gap = tape.sub(d2_pos, d2_neg)?;
    let hinge_arg = tape.affine(gap, 1.0, margin);
    Ok(tape.relu(hinge_arg))
}

/// One quadruplet's loss terms, all scalars on the tape.
pub struct QuadrupletTerms {
    pub l_pos: Var,
    pub l_neg: Var,
    pub l_minor: Var,
    /// `(l_pos + l_neg + l_minor) / 3`.
    pub tuple: Var,
}

/// Per-tuple quadruplet loss:
///   L_pos   = (1-gamma) D_pos + lambda_pos gamma D_pos
///   L_neg   = max(0, M - D_neg)
///   L_minor = lambda_minor max(0, M2 - D_minor)
pub fn quadruplet_terms(
    tape: &mut Tape,
    anchor: Var,
    pos: Var,
    neg: Var,
    minor: Var,
    gamma: bool,
    cfg: &QuadrupletLossConfig,
) -> Result<QuadrupletTerms> {
    let d_pos = tape.euclidean_distance(anchor, pos)?;
    let d_neg = tape.euclidean_distance(anchor, neg)?;
    let d_minor = tape.euclidean_distance(anchor, minor)?;

    let pos_weight = if gamma { cfg.lambda_pos } else { 1.0 };
    let l_pos = tape.affine(d_pos, pos_weight, 0.0);

    let neg_gap = tape.affine(d_neg, -1.0, cfg.m);
    let l_neg = tape.relu(neg_gap);

    let minor_gap = tape.affine(d_minor, -1.0, cfg.m2);
    let minor_hinge = tape.relu(minor_gap);
    let l_minor = tape.affine(minor_hinge, cfg.lambda_minor, 0.0);

    let three = tape.add_n(&[l_pos, l_neg, l_minor])?;
    let tuple = tape.affine(three, 1.0 / 3.0, 0.0);
    Ok(QuadrupletTerms { l_pos, l_neg, l_minor, tuple })
}

/// One tuple's embedding handles plus its gamma flag.
pub struct QuadrupletTuple {
    pub anchor: Var,
    pub positive: Var,
    pub negative: Var,
    pub minor: Var,
    pub gamma: bool,
}

/// Batch quadruplet loss: mean of per-tuple values, with the mean of each
/// term reported for logging and NaN diagnosis.
pub struct QuadrupletBatch {
    pub loss: Var,
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub mean_minor: f64,
}

pub fn quadruplet_loss(
    tape: &mut Tape,
    tuples: &[QuadrupletTuple],
    cfg: &QuadrupletLossConfig,
) -> Result<QuadrupletBatch> {
    if tuples.is_empty() {
        return Err(Error::contract("quadruplet loss over an empty batch"));
    }
    let mut per_tuple = Vec::with_capacity(tuples.len());
    let (mut sum_pos, mut sum_neg, mut sum_minor) = (0.0, 0.0, 0.0);
    for t in tuples {
        let terms =
            quadruplet_terms(tape, t.anchor, t.positive, t.negative, t.minor, t.gamma, cfg)?;
        sum_pos += tape.value(terms.l_pos).item();
        sum_neg += tape.value(terms.l_neg).item();
        sum_minor += tape.value(terms.l_minor).item();
        per_tuple.push(terms.tuple);
    }
    let total = tape.add_n(&per_tuple)?;
    let n = tuples.len() as f64;
    let loss = tape.affine(total, 1.0 / n, 0.0);
    Ok(QuadrupletBatch {
        loss,
        mean_pos: sum_pos / n,
        mean_neg: sum_neg / n,
        mean_minor: sum_minor / n,
    })
}

/// Mean cross-entropy over `(logits, true_class)` pairs.
pub fn softmax_batch_loss(tape: &mut Tape, samples: &[(Var, usize)]) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::contract("softmax loss over an empty batch"));
    }
    let mut terms = Vec::with_capacity(samples.len());
    for &(logits, target) in samples {
        terms.push(tape.softmax_cross_entropy(logits, target)?);
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.affine(total, 1.0 / samples.len() as f64, 0.0))
}

/// `L = L_softmax + beta * L_quadruplet`.
pub fn combined_loss(tape: &mut Tape, softmax_term: Var, quad_term: Var, beta: f64) -> Result<Var> {
    for v in [softmax_term, quad_term] {
        if !tape.value(v).is_scalar() {
            return Err(Error::contract(format!(
                "combined loss terms must be scalars, got shape {:?}",
                tape.value(v).shape()
            )));
        }
    }
    let weighted = tape.affine(quad_term, beta, 0.0);
    tape.add(softmax_term, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, grads_close, Tensor};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn table_cfg() -> QuadrupletLossConfig {
        QuadrupletLossConfig::new(20.0, 50.0, 50.0, 20.0, 5e-4).unwrap()
    }

    fn vec_var(tape: &mut Tape, data: Vec<f64>) -> Var {
        tape.constant(Tensor::vector(data))
    }

    #[test]
    fn config_validation_fails_fast() {
        assert!(QuadrupletLossConfig::new(20.0, 50.0, 50.0, 20.0, 5e-4).is_ok());
        assert!(QuadrupletLossConfig::new(20.0, 20.0, 50.0, 20.0, 0.0).is_err());
        assert!(QuadrupletLossConfig::new(20.0, 10.0, 50.0, 20.0, 0.0).is_err());
        assert!(QuadrupletLossConfig::new(20.0, 50.0, 1.0, 20.0, 0.0).is_err());
        assert!(QuadrupletLossConfig::new(20.0, 50.0, 50.0, 0.5, 0.0).is_err());
        assert!(QuadrupletLossConfig::new(-1.0, 50.0, 50.0, 20.0, 0.0).is_err());
        assert!(QuadrupletLossConfig::new(20.0, 50.0, 50.0, 20.0, -0.1).is_err());
        // Ablation variants need the collapsed settings new() rejects.
        let ablation = QuadrupletLossConfig::unchecked(20.0, 20.0, 1.0, 1.0, 5e-4);
        assert_eq!(ablation.m2, ablation.m);
    }

    #[test]
    fn contrastive_values() {
        let mut tape = Tape::new();
        let e = vec_var(&mut tape, vec![1.0, 2.0]);
        let same = contrastive_loss(&mut tape, e, e, true, 20.0).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let a = vec_var(&mut tape, vec![0.0, 0.0]);
        let far = vec_var(&mut tape, vec![25.0, 0.0]);
        let inactive = contrastive_loss(&mut tape, a, far, false, 20.0).unwrap();
        assert_eq!(tape.value(inactive).item(), 0.0);

        let near = vec_var(&mut tape, vec![3.0, 4.0]);
        let active = contrastive_loss(&mut tape, a, near, false, 20.0).unwrap();
        assert_eq!(tape.value(active).item(), 15.0);
    }

    #[test]
    fn triplet_values() {
        let mut tape = Tape::new();
        let origin = vec_var(&mut tape, vec![0.0, 0.0]);
        // a = p, ||a-n||^2 = margin: hinge sits exactly at zero.
        let n = vec_var(&mut tape, vec![1.0, 1.0]);
        let boundary = triplet_loss(&mut tape, origin, origin, n, 2.0).unwrap();
        assert_eq!(tape.value(boundary).item(), 0.0);

        let p1 = vec_var(&mut tape, vec![1.0, 0.0]);
        let n10 = vec_var(&mut tape, vec![3.0, 1.0]);
        let inactive = triplet_loss(&mut tape, origin, p1, n10, 5.0).unwrap();
        assert_eq!(tape.value(inactive).item(), 0.0);

        let p2 = vec_var(&mut tape, vec![2.0, 0.0]);
        let n1 = vec_var(&mut tape, vec![1.0, 0.0]);
        let active = triplet_loss(&mut tape, origin, p2, n1, 2.0).unwrap();
        assert_eq!(tape.value(active).item(), 5.0);
    }

    #[test]
    fn quadruplet_term_values_match_hand_substitution() {
        let cfg = table_cfg();
        let mut tape = Tape::new();
        let anchor = vec_var(&mut tape, vec![0.0, 0.0]);
        let pos = vec_var(&mut tape, vec![2.0, 0.0]);
        let neg = vec_var(&mut tape, vec![25.0, 0.0]);
        let minor = vec_var(&mut tape, vec![30.0, 0.0]);

        let emphasized =
            quadruplet_terms(&mut tape, anchor, pos, neg, minor, true, &cfg).unwrap();
        assert_eq!(tape.value(emphasized.l_pos).item(), 100.0);
        assert_eq!(tape.value(emphasized.l_neg).item(), 0.0);
        assert_eq!(tape.value(emphasized.l_minor).item(), 400.0);
        assert!((tape.value(emphasized.tuple).item() - 500.0 / 3.0).abs() < 1e-12);

        let plain = quadruplet_terms(&mut tape, anchor, pos, neg, minor, false, &cfg).unwrap();
        assert_eq!(tape.value(plain.l_pos).item(), 2.0);
    }

    #[test]
    fn quadruplet_on_identical_embeddings() {
        let cfg = table_cfg();
        let mut tape = Tape::new();
        let e = vec_var(&mut tape, vec![1.0, 3.0]);
        let terms = quadruplet_terms(&mut tape, e, e, e, e, false, &cfg).unwrap();
        let expected = (0.0 + cfg.m + cfg.lambda_minor * cfg.m2) / 3.0;
        assert!((tape.value(terms.tuple).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn quadruplet_zero_exactly_when_all_constraints_met() {
        let cfg = QuadrupletLossConfig::new(1.0, 2.0, 3.0, 4.0, 0.1).unwrap();
        let mut tape = Tape::new();
        let anchor = vec_var(&mut tape, vec![0.0, 0.0]);
        let neg = vec_var(&mut tape, vec![1.0, 0.0]);
        let minor = vec_var(&mut tape, vec![2.0, 0.0]);
        let at_bound =
            quadruplet_terms(&mut tape, anchor, anchor, neg, minor, true, &cfg).unwrap();
        assert_eq!(tape.value(at_bound.tuple).item(), 0.0);

        // Any violated constraint forces a strictly positive loss.
        let close_neg = vec_var(&mut tape, vec![0.5, 0.0]);
        let violated =
            quadruplet_terms(&mut tape, anchor, anchor, close_neg, minor, true, &cfg).unwrap();
        assert!(tape.value(violated.tuple).item() > 0.0);
    }

    #[test]
    fn quadruplet_monotone_in_each_distance() {
        let cfg = QuadrupletLossConfig::new(2.0, 4.0, 5.0, 3.0, 0.1).unwrap();
        let eval = |dp: f64, dn: f64, dm: f64, gamma: bool| {
            let mut tape = Tape::new();
            let anchor = vec_var(&mut tape, vec![0.0]);
            let pos = vec_var(&mut tape, vec![dp]);
            let neg = vec_var(&mut tape, vec![dn]);
            let minor = vec_var(&mut tape, vec![dm]);
            let t = quadruplet_terms(&mut tape, anchor, pos, neg, minor, gamma, &cfg).unwrap();
            tape.value(t.tuple).item()
        };
        for gamma in [false, true] {
            assert!(eval(1.5, 1.0, 1.0, gamma) > eval(0.5, 1.0, 1.0, gamma));
            assert!(eval(1.0, 1.5, 1.0, gamma) < eval(1.0, 0.5, 1.0, gamma));
            assert!(eval(1.0, 1.0, 3.0, gamma) < eval(1.0, 1.0, 1.0, gamma));
            // Past both margins the hinges are flat.
            assert_eq!(eval(1.0, 5.0, 6.0, gamma), eval(1.0, 9.0, 8.0, gamma));
        }
    }

    #[test]
    fn lambda_pos_is_inert_without_gamma() {
        let base = QuadrupletLossConfig::new(2.0, 4.0, 50.0, 3.0, 0.1).unwrap();
        let other = QuadrupletLossConfig::new(2.0, 4.0, 7.0, 3.0, 0.1).unwrap();
        let eval = |cfg: &QuadrupletLossConfig| {
            let mut tape = Tape::new();
            let anchor = vec_var(&mut tape, vec![0.0, 0.0]);
            let pos = vec_var(&mut tape, vec![0.7, 0.4]);
            let neg = vec_var(&mut tape, vec![1.0, 2.0]);
            let minor = vec_var(&mut tape, vec![3.0, 1.0]);
            let tuple = QuadrupletTuple {
                anchor,
                positive: pos,
                negative: neg,
                minor,
                gamma: false,
            };
            let batch = quadruplet_loss(&mut tape, &[tuple], cfg).unwrap();
            tape.value(batch.loss).item()
        };
        assert_eq!(eval(&base).to_bits(), eval(&other).to_bits());
    }

    #[test]
    fn batch_loss_is_mean_of_tuples_with_breakdown() {
        let cfg = QuadrupletLossConfig::new(1.0, 2.0, 2.0, 2.0, 0.1).unwrap();
        let mut tape = Tape::new();
        let origin = vec_var(&mut tape, vec![0.0]);
        let mk = |tape: &mut Tape, d: f64| vec_var(tape, vec![d]);
        let tuples: Vec<QuadrupletTuple> = (1..=2)
            .map(|i| {
                let d = i as f64;
                QuadrupletTuple {
                    anchor: origin,
                    positive: mk(&mut tape, d),
                    negative: mk(&mut tape, 5.0),
                    minor: mk(&mut tape, 5.0),
                    gamma: false,
                }
            })
            .collect();
        let batch = quadruplet_loss(&mut tape, &tuples, &cfg).unwrap();
        // tuple i loss = (i + 0 + 0)/3, mean over i=1,2 is 0.5.
        assert!((tape.value(batch.loss).item() - 0.5).abs() < 1e-12);
        assert!((batch.mean_pos - 1.5).abs() < 1e-12);
        assert_eq!(batch.mean_neg, 0.0);
        assert_eq!(batch.mean_minor, 0.0);
    }

    #[test]
    fn combined_loss_values() {
        let mut tape = Tape::new();
        let soft = tape.constant(Tensor::scalar(1.0));
        let quad = tape.constant(Tensor::scalar(400.0));
        let with_beta = combined_loss(&mut tape, soft, quad, 5e-4).unwrap();
        assert!((tape.value(with_beta).item() - 1.2).abs() < 1e-12);

        let soft2 = tape.constant(Tensor::scalar(0.73451));
        let zero_beta = combined_loss(&mut tape, soft2, quad, 0.0).unwrap();
        assert_eq!(
            tape.value(zero_beta).item().to_bits(),
            tape.value(soft2).item().to_bits()
        );
    }

    #[test]
    fn combined_loss_rejects_non_scalars() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, vec![1.0, 2.0]);
        let b = tape.constant(Tensor::scalar(1.0));
        assert!(combined_loss(&mut tape, a, b, 0.5).is_err());
    }

    #[test]
    fn softmax_gradient_matches_probabilities_minus_onehot() {
        let logits_data = vec![0.2, -1.3, 0.9, 0.4];
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(logits_data.clone()).with_grad());
        let loss = tape.softmax_cross_entropy(z, 2).unwrap();
        let grads = tape.backward(loss).unwrap();
        let numeric = finite_difference(
            |x| {
                let mut t2 = Tape::new();
                let z2 = t2.constant(Tensor::vector(x.to_vec()));
                let l = t2.softmax_cross_entropy(z2, 2).unwrap();
                t2.value(l).item()
            },
            &logits_data,
            1e-5,
        );
        assert!(grads_close(grads.wrt(z), &numeric, 1e-6));
    }

    #[test]
    fn quadruplet_gradients_match_fd_away_from_kinks() {
        let cfg = QuadrupletLossConfig::new(0.8, 1.6, 3.0, 2.0, 0.1).unwrap();
        let mut rng = stream_rng(0xABCD, Stream::Init);
        let mut checked = 0;
        while checked < 20 {
            let dim = 3;
            let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let (a, p, n, m) =
                (sample(&mut rng), sample(&mut rng), sample(&mut rng), sample(&mut rng));
            let dist = |x: &[f64], y: &[f64]| -> f64 {
                x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
            };
            // Stay away from hinge kinks and the D=0 cusp.
            if (cfg.m - dist(&a, &n)).abs() < 1e-2
                || (cfg.m2 - dist(&a, &m)).abs() < 1e-2
                || dist(&a, &p) < 1e-2
            {
                continue;
            }
            checked += 1;
            for gamma in [false, true] {
                let mut tape = Tape::new();
                let va = tape.leaf(Tensor::vector(a.clone()).with_grad());
                let vp = vec_var(&mut tape, p.clone());
                let vn = vec_var(&mut tape, n.clone());
                let vm = vec_var(&mut tape, m.clone());
                let terms =
                    quadruplet_terms(&mut tape, va, vp, vn, vm, gamma, &cfg).unwrap();
                let loss = terms.tuple;
                let grads = tape.backward(loss).unwrap();

                let (p2, n2, m2) = (p.clone(), n.clone(), m.clone());
                let numeric = finite_difference(
                    |x| {
                        let mut t2 = Tape::new();
                        let va = t2.constant(Tensor::vector(x.to_vec()));
                        let vp = t2.constant(Tensor::vector(p2.clone()));
                        let vn = t2.constant(Tensor::vector(n2.clone()));
                        let vm = t2.constant(Tensor::vector(m2.clone()));
                        let terms =
                            quadruplet_terms(&mut t2, va, vp, vn, vm, gamma, &cfg).unwrap();
                        t2.value(terms.tuple).item()
                    },
                    &a,
                    1e-5,
                );
                assert!(
                    grads_close(grads.wrt(va), &numeric, 1e-4),
                    "gamma={gamma}: {:?} vs {numeric:?}",
                    grads.wrt(va)
                );
            }
        }
    }

    #[test]
    fn classifier_gradient_comes_from_softmax_alone() {
        use crate::network::{
            classify_logits, forward_quadruplet, lstm_forward, ModelConfig, ModelParams,
        };

        let config = ModelConfig {
            input_size: 2,
            hidden_size: 4,
            layer_count: 1,
            embed_dim: 2,
            class_count: 3,
            dropout_rate: 0.0,
            literal_sigmoid_logits: false,
        };
        let params = ModelParams::init(config.clone(), 5).unwrap();
        let mut rng = stream_rng(91, Stream::Data);
        let seq = |rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::matrix(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let (sa, sp, sn, sm) = (seq(&mut rng), seq(&mut rng), seq(&mut rng), seq(&mut rng));
        let cfg = QuadrupletLossConfig::new(0.3, 0.8, 2.0, 2.0, 0.5).unwrap();

        let run = |beta: f64| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let out = forward_quadruplet(
                &mut tape,
                &vars,
                &config,
                [&sa, &sp, &sn, &sm],
                false,
                None,
            )
            .unwrap();
            let soft = softmax_batch_loss(&mut tape, &[(out.logits, 1)]).unwrap();
            let tuple = QuadrupletTuple {
                anchor: out.anchor,
                positive: out.positive,
                negative: out.negative,
                minor: out.minor,
                gamma: true,
            };
            let quad = quadruplet_loss(&mut tape, &[tuple], &cfg).unwrap();
            let total = combined_loss(&mut tape, soft, quad.loss, beta).unwrap();
            let grads = tape.backward(total).unwrap();
            (grads.wrt(vars.w_fc).to_vec(), grads.wrt(vars.w_fe).to_vec())
        };

        let softmax_only = || -> Vec<f64> {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let h = lstm_forward(&mut tape, &vars.lstm, &sa, 0.0, false, None).unwrap();
            let p = crate::network::embed(&mut tape, vars.w_fe, h).unwrap();
            let logits = classify_logits(&mut tape, vars.w_fc, p, false).unwrap();
            let loss = softmax_batch_loss(&mut tape, &[(logits, 1)]).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.wrt(vars.w_fc).to_vec()
        };

        let (fc_combined, fe_combined) = run(0.5);
        let (fc_zero_beta, fe_zero_beta) = run(0.0);
        let fc_ce = softmax_only();

        // Classifier head: identical regardless of beta, equal to the pure
        // cross-entropy gradient.
        assert_eq!(fc_combined, fc_zero_beta);
        for (a, b) in fc_combined.iter().zip(&fc_ce) {
            assert!((a - b).abs() < 1e-12);
        }
        // Embedding head: the quadruplet term visibly contributes.
        assert_ne!(fe_combined, fe_zero_beta);
        assert!(fe_combined.iter().any(|g| *g != 0.0));
    }
}
