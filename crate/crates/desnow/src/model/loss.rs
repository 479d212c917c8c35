//! The shared training loss: a Laplacian negative log-likelihood whose
//! scale is the difficulty net's prediction.
//!
//! Per blanked pixel the loss is `sqrt(2) * C * exp(-phi) + phi`, where `C`
//! is the smallest absolute reconstruction error across the K hypotheses
//! and `phi` the predicted log-scale. High predicted difficulty attenuates
//! the reconstruction gradient, keeping hopeless (noise) pixels from
//! degrading the reconstructor; the `+ phi` term keeps the difficulty
//! prediction from running away.

use std::f64::consts::SQRT_2;

use crate::nn::tensor::{
    add, channel_min, clamp, exp, masked_cross_entropy, masked_sum, mul, neg, scale, Tensor,
};

/// Log-scale predictions are clamped to this symmetric range before `exp`
/// so the attenuation factor stays representable.
pub const PHI_CLAMP: f64 = 10.0;

/// Per-pixel minimum absolute error across hypotheses (winner-takes-all).
/// Returns the `(B,1,H,W)` error plane and the argmin channel per pixel;
/// gradients flow only into each pixel's argmin hypothesis, ties to the
/// lowest index.
pub fn min_hypothesis_error(preds: &Tensor, target: &Tensor) -> (Tensor, Vec<usize>) {
    let err = crate::nn::tensor::abs_err(preds, target);
    channel_min(&err)
}

/// Everything the training step needs from one loss evaluation.
pub struct SelfLoss {
    /// Scalar loss, summed over the masked pixels.
    pub total: Tensor,
    /// Winner-takes-all error plane `C`, `(B,1,H,W)`.
    pub min_error: Tensor,
    /// Argmin hypothesis per pixel.
    pub argmin: Vec<usize>,
}

/// Multi-hypothesis self-supervised loss over the blanked pixels.
///
/// `preds` is `(B,K,H,W)` in normalized range units, `target` the
/// `(B,1,H,W)` unblanked normalized ranges, `phi` the `(B,1,H,W)`
/// difficulty output, and `mask` selects the blanked pixels. An empty mask
/// yields loss 0 with zero gradients.
pub fn loss_self_mhl(preds: &Tensor, target: &Tensor, phi: &Tensor, mask: &[bool]) -> SelfLoss {
    let (min_error, argmin) = min_hypothesis_error(preds, target);
    let phi_c = clamp(phi, -PHI_CLAMP, PHI_CLAMP);
    let attenuation = exp(&neg(&phi_c));
    let per_pixel = add(&mul(&scale(&min_error, SQRT_2), &attenuation), &phi_c);
    let total = masked_sum(&per_pixel, mask);
    SelfLoss { total, min_error, argmin }
}

/// Single-hypothesis form; identical to [`loss_self_mhl`] at K = 1.
pub fn loss_self(pred: &Tensor, target: &Tensor, phi: &Tensor, mask: &[bool]) -> SelfLoss {
    assert_eq!(pred.shape()[1], 1, "single-hypothesis loss expects K = 1");
    loss_self_mhl(pred, target, phi, mask)
}

/// Two-class cross-entropy over the labeled pixels (class 0 = clean,
/// 1 = noise), summed.
pub fn loss_supervised(logits: &Tensor, classes: &[u8], labeled: &[bool]) -> Tensor {
    masked_cross_entropy(logits, classes, labeled)
}

/// Weighted combination of the self-supervised and supervised losses.
pub fn loss_semi(self_loss: &Tensor, sup_loss: &Tensor, w_self: f64, w_sup: f64) -> Tensor {
    add(&scale(self_loss, w_self), &scale(sup_loss, w_sup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_pixel(pred: f64, target: f64, phi: f64) -> f64 {
        let p = Tensor::from_values(&[1, 1, 1, 1], vec![pred]);
        let t = Tensor::from_values(&[1, 1, 1, 1], vec![target]);
        let f = Tensor::from_values(&[1, 1, 1, 1], vec![phi]);
        loss_self(&p, &t, &f, &[true]).total.item()
    }

    #[test]
    fn hand_computed_single_pixel_cases() {
        // |pred - target| = 1, phi = 0 -> sqrt(2)
        assert_relative_eq!(one_pixel(3.0, 2.0, 0.0), SQRT_2, epsilon = 1e-12);
        // |pred - target| = 1, phi = ln 2 -> sqrt(2)/2 + ln 2
        assert_relative_eq!(
            one_pixel(3.0, 2.0, 2.0_f64.ln()),
            SQRT_2 / 2.0 + 2.0_f64.ln(),
            epsilon = 1e-12
        );
        // perfect reconstruction, phi = 0 -> 0
        assert_relative_eq!(one_pixel(2.0, 2.0, 0.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn min_hypothesis_error_examples() {
        let preds = Tensor::from_values(&[1, 3, 1, 1], vec![0.7, 0.5, 1.1]);
        let target = Tensor::from_values(&[1, 1, 1, 1], vec![0.4]);
        // errors (0.3, 0.1, 0.7)
        let (c, argmin) = min_hypothesis_error(&preds, &target);
        assert_relative_eq!(c.item(), 0.1, epsilon = 1e-15);
        assert_eq!(argmin, vec![1]);
    }

    #[test]
    fn k1_reduces_to_plain_abs_error() {
        let preds = Tensor::from_values(&[1, 1, 1, 2], vec![0.7, 0.1]);
        let target = Tensor::from_values(&[1, 1, 1, 2], vec![0.4, 0.5]);
        let (c, argmin) = min_hypothesis_error(&preds, &target);
        let v = c.values();
        assert_relative_eq!(v[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.4, epsilon = 1e-15);
        assert_eq!(argmin, vec![0, 0]);
    }

    #[test]
    fn equal_hypotheses_tie_to_zero() {
        let preds = Tensor::from_values(&[1, 2, 1, 1], vec![0.9, 0.9]);
        let target = Tensor::from_values(&[1, 1, 1, 1], vec![0.4]);
        let (c, argmin) = min_hypothesis_error(&preds, &target);
        assert_relative_eq!(c.item(), 0.5, epsilon = 1e-15);
        assert_eq!(argmin, vec![0]);
    }

    #[test]
    fn mhl_equals_single_at_k1() {
        let preds = Tensor::from_values(&[1, 1, 1, 3], vec![0.7, 0.1, 0.9]);
        let target = Tensor::from_values(&[1, 1, 1, 3], vec![0.4, 0.5, 0.2]);
        let phi = Tensor::from_values(&[1, 1, 1, 3], vec![0.1, -0.4, 1.0]);
        let mask = [true, false, true];
        let a = loss_self(&preds, &target, &phi, &mask).total.item();
        let b = loss_self_mhl(&preds, &target, &phi, &mask).total.item();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mask_zero_loss_zero_grads() {
        let preds = Tensor::param(&[1, 2, 1, 2], vec![0.7, 0.1, 0.5, 0.3]);
        let target = Tensor::from_values(&[1, 1, 1, 2], vec![0.4, 0.6]);
        let phi = Tensor::param(&[1, 1, 1, 2], vec![0.2, -0.1]);
        let out = loss_self_mhl(&preds, &target, &phi, &[false, false]);
        assert_eq!(out.total.item(), 0.0);
        out.total.backward();
        assert_eq!(preds.grad(), vec![0.0; 4]);
        assert_eq!(phi.grad(), vec![0.0; 2]);
    }

    #[test]
    fn gradient_attenuation_scales_with_exp_phi() {
        // raising phi by ln 2 halves the reconstruction gradient
        let make = |phi_val: f64| {
            let preds = Tensor::param(&[1, 1, 1, 1], vec![3.0]);
            let target = Tensor::from_values(&[1, 1, 1, 1], vec![2.0]);
            let phi = Tensor::from_values(&[1, 1, 1, 1], vec![phi_val]);
            let out = loss_self(&preds, &target, &phi, &[true]);
            out.total.backward();
            preds.grad()[0]
        };
        let g0 = make(0.0);
        let g1 = make(2.0_f64.ln());
        assert_relative_eq!(g1, g0 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn optimal_phi_matches_first_order_condition() {
        // for fixed error e the minimizing phi satisfies exp(phi*) = sqrt(2)*e;
        // verify by golden-section minimization of the per-pixel loss
        for &e in &[0.05, 0.3, 1.7] {
            let f = |phi: f64| SQRT_2 * e * (-phi).exp() + phi;
            let (mut lo, mut hi) = (-12.0, 12.0);
            let inv_gr = (5.0_f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - (hi - lo) * inv_gr;
                let b = lo + (hi - lo) * inv_gr;
                if f(a) < f(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            let phi_star = (lo + hi) / 2.0;
            assert_relative_eq!(phi_star.exp(), SQRT_2 * e, max_relative = 1e-6);
        }
    }

    #[test]
    fn argmin_routing_switches_with_perturbation() {
        let run = |h2: f64| {
            let preds = Tensor::param(&[1, 2, 1, 1], vec![2.5, h2]);
            let target = Tensor::from_values(&[1, 1, 1, 1], vec![2.0]);
            let phi = Tensor::from_values(&[1, 1, 1, 1], vec![0.0]);
            let out = loss_self_mhl(&preds, &target, &phi, &[true]);
            out.total.backward();
            preds.grad()
        };
        // hypothesis 0 wins (error 0.5 vs 0.8): all gradient on channel 0
        let g = run(2.8);
        assert!(g[0] != 0.0 && g[1] == 0.0);
        // perturb hypothesis 1 below: routing switches
        let g = run(2.1);
        assert!(g[0] == 0.0 && g[1] != 0.0);
    }

    #[test]
    fn semi_combination_arithmetic() {
        let a = Tensor::from_values(&[1], vec![2.0]);
        let b = Tensor::from_values(&[1], vec![4.0]);
        assert_eq!(loss_semi(&a, &b, 0.5, 0.5).item(), 3.0);
        assert_eq!(loss_semi(&a, &b, 1.0, 0.0).item(), 2.0);
        assert_eq!(loss_semi(&a, &b, 0.0, 1.0).item(), 4.0);
    }
}
