//! Finite-difference verification of the BP backward pass.
//!
//! The scalar loss is `sum_px huber(soft_argmax(softmax(beliefs)) - target)`,
//! which is invariant to per-pixel shifts of the beliefs and therefore to the
//! detached message normalization. The loss is piecewise smooth: it has kinks
//! where a message max switches branch. A central difference that straddles
//! such a switch measures a secant, not a derivative, so the step is shrunk
//! until the forward argmax pattern at both probes matches the unperturbed one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bp::{bp_backward_with, bp_forward, GradientRouting, JumpScores, NormalizationContext, PairwiseParams};
use crate::error::{Error, Result};
use crate::pipeline::{huber_derivative, huber_loss};
use crate::volumes::{
    soft_argmax_backward, soft_argmax_depth, softmax_backward, temperature_softmax, HypothesisVolume, ScoreVolume,
};

/// Largest `P * M * N` accepted by [`gradient_check`].
pub const MAX_ORACLE_SIZE: usize = 10_000;
/// Central-difference steps, tried in order until one does not cross a kink.
pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// A random BP instance together with soft-argmax regression targets.
#[derive(Clone, Debug)]
pub struct GradCheckInstance {
    pub unaries: ScoreVolume,
    pub hypotheses: HypothesisVolume,
    pub params: PairwiseParams,
    pub ctx: NormalizationContext,
    pub targets: Vec<f64>,
    pub epsilon: f64,
}

impl GradCheckInstance {
    pub fn random(seed: u64, shape: (usize, usize, usize)) -> Result<Self> {
        let (labels, height, width) = shape;
        if labels < 2 || height == 0 || width == 0 {
            return Err(Error::usage(format!("bad gradient-check shape {shape:?}")));
        }
        if labels * height * width > MAX_ORACLE_SIZE {
            return Err(Error::usage(format!(
                "gradient-check volume {shape:?} exceeds {MAX_ORACLE_SIZE} entries"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..labels * height * width).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let unaries = temperature_softmax(&ScoreVolume::new(labels, height, width, raw)?, 1.0)?;

        // Per-pixel ladders around a smoothly varying base depth, with uneven
        // spacing so neighbouring labels produce fractional jumps of both signs.
        let plane = height * width;
        let mut depths = vec![0.0; labels * plane];
        for px in 0..plane {
            let mut d = 2.3 + rng.gen_range(0.0..0.3);
            for p in 0..labels {
                depths[p * plane + px] = d;
                d += rng.gen_range(0.05..0.3);
            }
        }
        let hypotheses = HypothesisVolume::new(labels, height, width, depths)?;

        let mut scores = [0.0; 5];
        for s in &mut scores {
            *s = rng.gen_range(-1.0..-0.05);
        }
        let params = PairwiseParams::new(JumpScores::from_array(scores))?;
        let ctx = NormalizationContext::new(60.0, 0.7, 1.0)?;
        let targets = (0..plane)
            .map(|px| {
                let lo = hypotheses.as_slice()[px];
                let hi = hypotheses.as_slice()[(labels - 1) * plane + px];
                rng.gen_range(lo..hi)
            })
            .collect();
        Ok(Self {
            unaries,
            hypotheses,
            params,
            ctx,
            targets,
            epsilon: 1.0,
        })
    }

    /// Loss value and the forward argmax pattern (used to detect kink crossings).
    pub fn loss(&self, unaries: &ScoreVolume, params: &PairwiseParams) -> Result<(f64, Vec<u16>)> {
        let (beliefs, trace) = bp_forward(unaries, &self.hypotheses, params, &self.ctx)?;
        let probs = temperature_softmax(&beliefs, 1.0)?;
        let depth = soft_argmax_depth(&probs, &self.hypotheses)?;
        let loss = depth
            .depths()
            .iter()
            .zip(&self.targets)
            .map(|(d, t)| huber_loss(*d, *t, self.epsilon))
            .sum();
        let pattern = crate::bp::Direction::ALL
            .iter()
            .flat_map(|d| trace.argmax(*d).iter().copied())
            .collect();
        Ok((loss, pattern))
    }

    /// Analytic gradients of the loss: `(d loss / d unaries, d loss / d scores)`.
    pub fn gradients(&self, routing: GradientRouting) -> Result<(ScoreVolume, JumpScores)> {
        let (beliefs, trace) = bp_forward(&self.unaries, &self.hypotheses, &self.params, &self.ctx)?;
        let probs = temperature_softmax(&beliefs, 1.0)?;
        let depth = soft_argmax_depth(&probs, &self.hypotheses)?;
        let grad_depth: Vec<f64> = depth
            .depths()
            .iter()
            .zip(&self.targets)
            .map(|(d, t)| huber_derivative(*d, *t, self.epsilon))
            .collect();
        let grad_probs = soft_argmax_backward(&self.hypotheses, &grad_depth)?;
        let grad_beliefs = softmax_backward(&probs, &grad_probs, 1.0)?;
        let mut params = self.params;
        params.zero_grad();
        let grad_u = bp_backward_with(&trace, &grad_beliefs, &mut params, routing)?;
        Ok((grad_u, params.grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub shape: (usize, usize, usize),
    pub loss: f64,
    pub max_rel_error_unaries: f64,
    pub max_rel_error_params: f64,
    pub analytic_param_grad: [f64; 5],
    pub numeric_param_grad: [f64; 5],
    /// Coordinates compared against a finite difference.
    pub checked: usize,
    /// Coordinates where every step crossed a max switch.
    pub skipped_at_kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_unaries.max(self.max_rel_error_params)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compare analytic and central-difference gradients on a random instance.
pub fn gradient_check(seed: u64, shape: (usize, usize, usize)) -> Result<GradCheckReport> {
    gradient_check_with(seed, shape, GradientRouting::Standard)
}

pub fn gradient_check_with(
    seed: u64,
    shape: (usize, usize, usize),
    routing: GradientRouting,
) -> Result<GradCheckReport> {
    let inst = GradCheckInstance::random(seed, shape)?;
    let (loss, pattern) = inst.loss(&inst.unaries, &inst.params)?;
    let (grad_u, grad_p) = inst.gradients(routing)?;

    let mut checked = 0;
    let mut skipped = 0;
    let mut numeric_at = |perturb: &dyn Fn(f64) -> Result<(ScoreVolume, PairwiseParams)>| -> Result<Option<f64>> {
        for &step in &FD_STEPS {
            let (u_plus, p_plus) = perturb(step)?;
            let (u_minus, p_minus) = perturb(-step)?;
            let (l_plus, pat_plus) = inst.loss(&u_plus, &p_plus)?;
            let (l_minus, pat_minus) = inst.loss(&u_minus, &p_minus)?;
            if pat_plus == pattern && pat_minus == pattern {
                checked += 1;
                return Ok(Some((l_plus - l_minus) / (2.0 * step)));
            }
        }
        skipped += 1;
        Ok(None)
    };

    let mut max_u: f64 = 0.0;
    let base = inst.unaries.as_slice();
    for k in 0..base.len() {
        let perturb = |step: f64| {
            let mut data = base.to_vec();
            data[k] += step;
            Ok((ScoreVolume::new(shape.0, shape.1, shape.2, data)?, inst.params))
        };
        if let Some(num) = numeric_at(&perturb)? {
            max_u = max_u.max(relative_error(grad_u.as_slice()[k], num));
        }
    }

    let mut max_p: f64 = 0.0;
    let analytic = grad_p.to_array();
    let mut numeric = [f64::NAN; 5];
    let scores = inst.params.scores().to_array();
    for s in 0..5 {
        let perturb = |step: f64| {
            let mut v = scores;
            v[s] += step;
            Ok((inst.unaries.clone(), PairwiseParams::new(JumpScores::from_array(v))?))
        };
        if let Some(num) = numeric_at(&perturb)? {
            numeric[s] = num;
            max_p = max_p.max(relative_error(analytic[s], num));
        }
    }

    Ok(GradCheckReport {
        seed,
        shape,
        loss,
        max_rel_error_unaries: max_u,
        max_rel_error_params: max_p,
        analytic_param_grad: analytic,
        numeric_param_grad: numeric,
        checked,
        skipped_at_kinks: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_passes() {
        let r = gradient_check(0, (4, 5, 5)).unwrap();
        assert!(r.passed(1e-4), "{r:?}");
        assert!(r.checked > 90);
    }

    #[test]
    fn single_node_has_zero_parameter_gradient() {
        let r = gradient_check(3, (2, 1, 1)).unwrap();
        assert_eq!(r.analytic_param_grad, [0.0; 5]);
        assert_eq!(r.numeric_param_grad, [0.0; 5]);
    }

    #[test]
    fn deterministic_reports() {
        assert_eq!(
            gradient_check(7, (3, 4, 4)).unwrap(),
            gradient_check(7, (3, 4, 4)).unwrap()
        );
    }

    #[test]
    fn swapped_routing_is_detected() {
        let r = gradient_check_with(0, (4, 5, 5), GradientRouting::SwappedWeights).unwrap();
        assert!(!r.passed(1e-4));
    }

    #[test]
    fn oversized_shape_rejected() {
        assert!(gradient_check(0, (100, 10, 11)).is_err());
    }
}
