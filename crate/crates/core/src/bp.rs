//! Max-sum belief propagation on the 4-connected pixel grid with
//! depth-normalized, linearly interpolated pairwise scores.
//!
//! Label jumps between neighbouring pixels are measured in scaled inverse
//! depth, `(1/d_s - 1/d_t) * F * b / (sigma * sqrt(2))`, so the same five jump
//! scores apply at any scene scale. Jumps are generally fractional; the
//! pairwise score linearly interpolates the discrete anchors
//!
//! ```text
//!   jump:   <=-3   -2     -1     0    1      2     >=3
//!   score:   L3   L2neg  L1neg   0  L1pos  L2pos   L3
//! ```
//!
//! Inference runs one sweep per direction (left-right, right-left,
//! top-bottom, bottom-top). Each edge uses a single pairwise function oriented
//! from its left (or top) pixel to its right (or bottom) pixel, so both sweeps
//! over an edge see the same score table. Beliefs are the unaries plus the four
//! incoming messages. Messages are shifted to a zero per-pixel maximum after
//! every step; those shifts are constant over labels and are treated as
//! detached in the backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{HypothesisVolume, ScoreVolume};

/// Expected-3D-error model for one reference view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationContext {
    focal: f64,
    baseline: f64,
    sigma_p: f64,
}

impl NormalizationContext {
    /// `focal` in pixels, `baseline` in scene units, `sigma_p` in pixels.
    pub fn new(focal: f64, baseline: f64, sigma_p: f64) -> Result<Self> {
        for (name, v) in [("focal", focal), ("baseline", baseline), ("sigma_p", sigma_p)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self {
            focal,
            baseline,
            sigma_p,
        })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    pub fn with_baseline(&self, baseline: f64) -> Result<Self> {
        Self::new(self.focal, baseline, self.sigma_p)
    }

    /// `F * b / (sigma * sqrt(2))`, the factor applied to inverse-depth differences.
    pub fn jump_scale(&self) -> f64 {
        self.focal * self.baseline / (self.sigma_p * std::f64::consts::SQRT_2)
    }

    #[inline]
    fn jump(&self, d_s: f64, d_t: f64) -> f64 {
        (1.0 / d_s - 1.0 / d_t) * self.jump_scale()
    }
}

/// Expected depth error at depth `d`: `sigma * d^2 * sqrt(2) / (F * b)`.
pub fn normalization_factor(d: f64, ctx: &NormalizationContext) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::usage(format!("depth must be positive, got {d}")));
    }
    Ok(ctx.sigma_p * d * d / (ctx.focal * ctx.baseline) * std::f64::consts::SQRT_2)
}

/// Normalized jump from depth `d_s` to depth `d_t`.
pub fn normalized_jump(d_s: f64, d_t: f64, ctx: &NormalizationContext) -> Result<f64> {
    if !(d_s.is_finite() && d_s > 0.0 && d_t.is_finite() && d_t > 0.0) {
        return Err(Error::usage(format!("depths must be positive, got {d_s} and {d_t}")));
    }
    Ok(ctx.jump(d_s, d_t))
}

/// The five jump scores (or their gradients).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpScores {
    pub l1_pos: f64,
    pub l1_neg: f64,
    pub l2_pos: f64,
    pub l2_neg: f64,
    pub l3: f64,
}

impl JumpScores {
    pub const NAMES: [&'static str; 5] = ["l1_pos", "l1_neg", "l2_pos", "l2_neg", "l3"];

    pub fn symmetric(l1: f64, l2: f64, l3: f64) -> Self {
        Self {
            l1_pos: l1,
            l1_neg: l1,
            l2_pos: l2,
            l2_neg: l2,
            l3,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.l1_pos, self.l1_neg, self.l2_pos, self.l2_neg, self.l3]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            l1_pos: v[0],
            l1_neg: v[1],
            l2_pos: v[2],
            l2_neg: v[3],
            l3: v[4],
        }
    }

    /// Discrete score for an integer jump `k`.
    #[inline]
    pub fn anchor(&self, k: i32) -> f64 {
        match k {
            0 => 0.0,
            1 => self.l1_pos,
            -1 => self.l1_neg,
            2 => self.l2_pos,
            -2 => self.l2_neg,
            _ => self.l3,
        }
    }

    #[inline]
    fn add_to_anchor(&mut self, k: i32, v: f64) {
        match k {
            0 => {}
            1 => self.l1_pos += v,
            -1 => self.l1_neg += v,
            2 => self.l2_pos += v,
            -2 => self.l2_neg += v,
            _ => self.l3 += v,
        }
    }

    fn add(&mut self, other: &JumpScores) {
        self.l1_pos += other.l1_pos;
        self.l1_neg += other.l1_neg;
        self.l2_pos += other.l2_pos;
        self.l2_neg += other.l2_neg;
        self.l3 += other.l3;
    }
}

/// Jump scores plus their gradient accumulators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseParams {
    scores: JumpScores,
    pub grad: JumpScores,
}

impl PairwiseParams {
    /// Scores must be finite and non-positive (higher total score is better).
    pub fn new(scores: JumpScores) -> Result<Self> {
        for (name, v) in JumpScores::NAMES.iter().zip(scores.to_array()) {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::param(format!(
                    "pairwise score {name} = {v} must be finite and <= 0"
                )));
            }
        }
        Ok(Self {
            scores,
            grad: JumpScores::default(),
        })
    }

    pub fn scores(&self) -> &JumpScores {
        &self.scores
    }

    pub fn zero_grad(&mut self) {
        self.grad = JumpScores::default();
    }
}

impl Default for PairwiseParams {
    fn default() -> Self {
        Self {
            scores: JumpScores::symmetric(-0.2, -0.5, -1.0),
            grad: JumpScores::default(),
        }
    }
}

/// Interpolation record for one pairwise evaluation: the lower anchor
/// `floor(x)` and the weight `x - floor(x)` of the upper anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Interp {
    pub lower: i8,
    pub upper_weight: f64,
}

impl Interp {
    #[inline]
    pub fn new(jump: f64) -> Self {
        let x = jump.clamp(-3.0, 3.0);
        let lower = x.floor();
        Self {
            lower: lower as i8,
            upper_weight: x - lower,
        }
    }

    /// Weights `(alpha_1, alpha_2)` of the lower and upper anchors.
    pub fn alphas(&self) -> (f64, f64) {
        (1.0 - self.upper_weight, self.upper_weight)
    }

    #[inline]
    pub fn score(&self, scores: &JumpScores) -> f64 {
        let lo = scores.anchor(self.lower as i32);
        if self.upper_weight == 0.0 {
            lo
        } else {
            (1.0 - self.upper_weight) * lo + self.upper_weight * scores.anchor(self.lower as i32 + 1)
        }
    }
}

/// Interpolated pairwise score of a normalized jump, with its interpolation record.
pub fn pairwise_score(jump: f64, params: &PairwiseParams) -> Result<(f64, Interp)> {
    if jump.is_nan() {
        return Err(Error::data("pairwise jump is NaN"));
    }
    let it = Interp::new(jump);
    Ok((it.score(&params.scores), it))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftToRight,
        Direction::RightToLeft,
        Direction::TopToBottom,
        Direction::BottomToTop,
    ];

    fn lines(self, height: usize, width: usize) -> usize {
        match self {
            Direction::LeftToRight | Direction::RightToLeft => height,
            _ => width,
        }
    }

    /// Row-major pixel indices of scanline `line` in sweep order.
    fn scanline(self, line: usize, height: usize, width: usize) -> Vec<usize> {
        match self {
            Direction::LeftToRight => (0..width).map(|j| line * width + j).collect(),
            Direction::RightToLeft => (0..width).rev().map(|j| line * width + j).collect(),
            Direction::TopToBottom => (0..height).map(|i| i * width + line).collect(),
            Direction::BottomToTop => (0..height).rev().map(|i| i * width + line).collect(),
        }
    }

    /// True when the sweep runs along the canonical edge orientation.
    fn with_edge(self) -> bool {
        matches!(self, Direction::LeftToRight | Direction::TopToBottom)
    }
}

/// Everything the backward pass needs from a forward pass.
///
/// For each direction, entry `(t, i, j)` (label-major) records which
/// predecessor label won the max for the message into pixel `(i, j)` at label
/// `t`, and how that pairwise score was interpolated. The first pixel of each
/// scanline receives no message; its entries are zero.
#[derive(Clone, Debug)]
pub struct BpTrace {
    labels: usize,
    height: usize,
    width: usize,
    argmax: [Vec<u16>; 4],
    interp: [Vec<Interp>; 4],
}

impl BpTrace {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.labels, self.height, self.width)
    }

    pub fn argmax(&self, dir: Direction) -> &[u16] {
        &self.argmax[dir_index(dir)]
    }

    pub fn interp(&self, dir: Direction) -> &[Interp] {
        &self.interp[dir_index(dir)]
    }
}

fn dir_index(dir: Direction) -> usize {
    Direction::ALL.iter().position(|d| *d == dir).unwrap()
}

struct LineForward {
    msgs: Vec<f64>,
    argmax: Vec<u16>,
    interp: Vec<Interp>,
}

#[allow(clippy::too_many_arguments)]
fn forward_line(
    pixels: &[usize],
    unaries: &[f64],
    inv_depth: &[f64],
    plane: usize,
    labels: usize,
    scores: &JumpScores,
    scale: f64,
    with_edge: bool,
) -> LineForward {
    let len = pixels.len();
    let mut msgs = vec![0.0; len * labels];
    let mut argmax = vec![0u16; len * labels];
    let mut interp = vec![Interp::default(); len * labels];
    let mut base = vec![0.0; labels];
    for k in 1..len {
        let (pred, cur) = (pixels[k - 1], pixels[k]);
        for s in 0..labels {
            base[s] = unaries[s * plane + pred] + msgs[(k - 1) * labels + s];
        }
        let mut norm = f64::NEG_INFINITY;
        for t in 0..labels {
            let inv_t = inv_depth[t * plane + cur];
            let mut best = f64::NEG_INFINITY;
            let mut best_s = 0;
            let mut best_it = Interp::default();
            for (s, b) in base.iter().enumerate() {
                let inv_s = inv_depth[s * plane + pred];
                let jump = if with_edge {
                    (inv_s - inv_t) * scale
                } else {
                    (inv_t - inv_s) * scale
                };
                let it = Interp::new(jump);
                let v = b + it.score(scores);
                if v > best {
                    best = v;
                    best_s = s;
                    best_it = it;
                }
            }
            let e = k * labels + t;
            msgs[e] = best;
            argmax[e] = best_s as u16;
            interp[e] = best_it;
            norm = norm.max(best);
        }
        for m in &mut msgs[k * labels..(k + 1) * labels] {
            *m -= norm;
        }
    }
    LineForward { msgs, argmax, interp }
}

/// Forward max-sum inference. Returns the beliefs (unaries plus the four
/// incoming messages) and the trace for [`bp_backward`].
pub fn bp_forward(
    unaries: &ScoreVolume,
    h: &HypothesisVolume,
    params: &PairwiseParams,
    ctx: &NormalizationContext,
) -> Result<(ScoreVolume, BpTrace)> {
    if unaries.shape() != h.shape() {
        return Err(Error::usage(format!(
            "unaries {:?} and hypotheses {:?} differ in shape",
            unaries.shape(),
            h.shape()
        )));
    }
    let (labels, height, width) = unaries.shape();
    if labels > u16::MAX as usize {
        return Err(Error::usage("too many labels"));
    }
    let plane = height * width;
    let inv_depth: Vec<f64> = h.as_slice().iter().map(|d| 1.0 / d).collect();
    let u = unaries.as_slice();
    let scale = ctx.jump_scale();
    let mut beliefs = u.to_vec();
    let mut argmax: [Vec<u16>; 4] = Default::default();
    let mut interp: [Vec<Interp>; 4] = Default::default();

    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        let lines: Vec<(Vec<usize>, LineForward)> = (0..dir.lines(height, width))
            .into_par_iter()
            .map(|line| {
                let pixels = dir.scanline(line, height, width);
                let fwd = forward_line(
                    &pixels,
                    u,
                    &inv_depth,
                    plane,
                    labels,
                    &params.scores,
                    scale,
                    dir.with_edge(),
                );
                (pixels, fwd)
            })
            .collect();
        let mut am = vec![0u16; labels * plane];
        let mut it = vec![Interp::default(); labels * plane];
        for (pixels, fwd) in &lines {
            for (k, &px) in pixels.iter().enumerate() {
                for t in 0..labels {
                    let e = k * labels + t;
                    beliefs[t * plane + px] += fwd.msgs[e];
                    am[t * plane + px] = fwd.argmax[e];
                    it[t * plane + px] = fwd.interp[e];
                }
            }
        }
        argmax[d] = am;
        interp[d] = it;
    }
    let beliefs = ScoreVolume::new(labels, height, width, beliefs)?;
    Ok((
        beliefs,
        BpTrace {
            labels,
            height,
            width,
            argmax,
            interp,
        },
    ))
}

/// How the interpolation weights route gradient into the anchor scores.
/// `SwappedWeights` is a deliberately wrong routing used to confirm that the
/// gradient check detects faults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientRouting {
    #[default]
    Standard,
    SwappedWeights,
}

/// Backward pass. Accumulates the pairwise-score gradient into `params.grad`
/// and returns the gradient with respect to the unaries.
pub fn bp_backward(trace: &BpTrace, incoming_grad: &ScoreVolume, params: &mut PairwiseParams) -> Result<ScoreVolume> {
    bp_backward_with(trace, incoming_grad, params, GradientRouting::Standard)
}

pub fn bp_backward_with(
    trace: &BpTrace,
    incoming_grad: &ScoreVolume,
    params: &mut PairwiseParams,
    routing: GradientRouting,
) -> Result<ScoreVolume> {
    if incoming_grad.shape() != trace.shape() {
        return Err(Error::usage(format!(
            "gradient {:?} does not match trace {:?}",
            incoming_grad.shape(),
            trace.shape()
        )));
    }
    let (labels, height, width) = trace.shape();
    let plane = height * width;
    let g = incoming_grad.as_slice();
    let mut grad_u = g.to_vec();
    let mut grad_params = JumpScores::default();

    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        let argmax = &trace.argmax[d];
        let interp = &trace.interp[d];
        let lines: Vec<(Vec<usize>, Vec<f64>, JumpScores)> = (0..dir.lines(height, width))
            .into_par_iter()
            .map(|line| {
                let pixels = dir.scanline(line, height, width);
                let len = pixels.len();
                let mut gm = vec![0.0; len * labels];
                for (k, &px) in pixels.iter().enumerate() {
                    for t in 0..labels {
                        gm[k * labels + t] = g[t * plane + px];
                    }
                }
                let mut gu = vec![0.0; len * labels];
                let mut gp = JumpScores::default();
                for k in (1..len).rev() {
                    let cur = pixels[k];
                    for t in 0..labels {
                        let z = gm[k * labels + t];
                        if z == 0.0 {
                            continue;
                        }
                        let e = t * plane + cur;
                        let s = argmax[e] as usize;
                        gm[(k - 1) * labels + s] += z;
                        gu[(k - 1) * labels + s] += z;
                        let it = interp[e];
                        let (a1, a2) = match routing {
                            GradientRouting::Standard => it.alphas(),
                            GradientRouting::SwappedWeights => {
                                let (a1, a2) = it.alphas();
                                (a2, a1)
                            }
                        };
                        gp.add_to_anchor(it.lower as i32, a1 * z);
                        if a2 != 0.0 {
                            gp.add_to_anchor(it.lower as i32 + 1, a2 * z);
                        }
                    }
                }
                (pixels, gu, gp)
            })
            .collect();
        for (pixels, gu, gp) in &lines {
            for (k, &px) in pixels.iter().enumerate() {
                for t in 0..labels {
                    grad_u[t * plane + px] += gu[k * labels + t];
                }
            }
            grad_params.add(gp);
        }
    }
    params.grad.add(&grad_params);
    ScoreVolume::new(labels, height, width, grad_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::temperature_softmax;
    use proptest::prelude::*;

    fn ctx(f: f64, b: f64) -> NormalizationContext {
        NormalizationContext::new(f, b, 1.0).unwrap()
    }

    #[test]
    fn normalization_factor_examples() {
        let c = ctx(1.0, std::f64::consts::SQRT_2);
        assert!((normalization_factor(1.0, &c).unwrap() - 1.0).abs() < 1e-15);
        let a = normalization_factor(1.7, &c).unwrap();
        let b = normalization_factor(3.4, &c).unwrap();
        assert!((b / a - 4.0).abs() < 1e-15);
        assert!(normalization_factor(0.0, &c).is_err());
        assert!(NormalizationContext::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn normalized_jump_examples() {
        // F * b / (sigma * sqrt 2) = 2
        let c = ctx(2.0, std::f64::consts::SQRT_2);
        assert_eq!(normalized_jump(3.0, 3.0, &c).unwrap(), 0.0);
        assert!((normalized_jump(1.0, 2.0, &c).unwrap() - 1.0).abs() < 1e-15);
        let base = normalized_jump(1.3, 2.9, &ctx(50.0, 0.7)).unwrap();
        let scaled = normalized_jump(13.0, 29.0, &ctx(50.0, 7.0)).unwrap();
        assert!((base - scaled).abs() <= 1e-12 * base.abs());
        assert!(normalized_jump(-1.0, 2.0, &c).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let params = PairwiseParams::new(JumpScores {
            l1_pos: -0.2,
            l1_neg: -0.3,
            l2_pos: -0.5,
            l2_neg: -0.6,
            l3: -1.0,
        })
        .unwrap();
        assert_eq!(pairwise_score(0.0, &params).unwrap().0, 0.0);
        assert!((pairwise_score(1.5, &params).unwrap().0 + 0.35).abs() < 1e-12);
        assert_eq!(pairwise_score(7.3, &params).unwrap().0, -1.0);
        assert_eq!(pairwise_score(-3.0, &params).unwrap().0, -1.0);
        assert_eq!(pairwise_score(f64::INFINITY, &params).unwrap().0, -1.0);
        for (k, expect) in [(-2, -0.6), (-1, -0.3), (1, -0.2), (2, -0.5), (3, -1.0)] {
            assert_eq!(pairwise_score(k as f64, &params).unwrap().0, expect);
        }
        assert!(matches!(pairwise_score(f64::NAN, &params), Err(Error::Data(_))));
        let (_, it) = pairwise_score(-1.25, &params).unwrap();
        assert_eq!(it.lower, -2);
        let (a1, a2) = it.alphas();
        assert!((a1 - 0.25).abs() < 1e-15 && (a2 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn positive_scores_rejected() {
        assert!(PairwiseParams::new(JumpScores::symmetric(0.1, -0.5, -1.0)).is_err());
        assert!(PairwiseParams::new(JumpScores::symmetric(-0.1, f64::NAN, -1.0)).is_err());
    }

    #[test]
    fn single_node_beliefs_are_unaries() {
        let u = ScoreVolume::new(3, 1, 1, vec![0.2, 0.5, 0.3]).unwrap();
        let h = HypothesisVolume::uniform(&[1.0, 2.0, 3.0], 1, 1).unwrap();
        let mut params = PairwiseParams::new(JumpScores::symmetric(-1e9, -1e9, -1e9)).unwrap();
        let (b, trace) = bp_forward(&u, &h, &params, &ctx(10.0, 1.0)).unwrap();
        assert_eq!(b, u);
        let g = ScoreVolume::new(3, 1, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let gu = bp_backward(&trace, &g, &mut params).unwrap();
        assert_eq!(gu, g);
        assert_eq!(params.grad, JumpScores::default());
    }

    #[test]
    fn zero_pairwise_decouples_pixels() {
        let u = ScoreVolume::from_fn(4, 3, 5, |p, i, j| ((p * 7 + i * 3 + j) % 5) as f64 * 0.1).unwrap();
        let h = HypothesisVolume::from_fn(4, 3, 5, |p, i, j| 1.0 + p as f64 + 0.1 * (i + j) as f64).unwrap();
        let params = PairwiseParams::new(JumpScores::default()).unwrap();
        let (b, _) = bp_forward(&u, &h, &params, &ctx(10.0, 1.0)).unwrap();
        assert_eq!(b, u);
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(b.argmax(i, j), u.argmax(i, j));
            }
        }
    }

    #[test]
    fn zero_incoming_gradient_gives_zero() {
        let u = ScoreVolume::from_fn(3, 4, 4, |p, i, j| ((p + 2 * i + 3 * j) % 4) as f64 * 0.2).unwrap();
        let h = HypothesisVolume::from_fn(3, 4, 4, |p, i, _| 2.0 + 0.3 * p as f64 + 0.05 * i as f64).unwrap();
        let mut params = PairwiseParams::default();
        let (_, trace) = bp_forward(&u, &h, &params, &ctx(20.0, 0.5)).unwrap();
        let gu = bp_backward(&trace, &ScoreVolume::zeros(3, 4, 4).unwrap(), &mut params).unwrap();
        assert!(gu.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(params.grad, JumpScores::default());
        let bad = ScoreVolume::zeros(3, 4, 5).unwrap();
        assert!(bp_backward(&trace, &bad, &mut params).is_err());
    }

    #[test]
    fn trace_entries_are_in_range() {
        let u = ScoreVolume::from_fn(5, 4, 6, |p, i, j| ((p * 13 + i * 7 + j * 3) % 11) as f64 / 11.0).unwrap();
        let h = HypothesisVolume::from_fn(5, 4, 6, |p, i, j| 2.0 + 0.17 * p as f64 + 0.03 * (i * j) as f64).unwrap();
        let (_, trace) = bp_forward(&u, &h, &PairwiseParams::default(), &ctx(40.0, 0.3)).unwrap();
        for dir in Direction::ALL {
            assert!(trace.argmax(dir).iter().all(|&s| (s as usize) < 5));
            for it in trace.interp(dir) {
                let (a1, a2) = it.alphas();
                assert!(a1 >= 0.0 && a2 >= 0.0 && (a1 + a2 - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let u = ScoreVolume::zeros(3, 2, 2).unwrap();
        let h = HypothesisVolume::uniform(&[1.0, 2.0], 2, 2).unwrap();
        assert!(matches!(
            bp_forward(&u, &h, &PairwiseParams::default(), &ctx(1.0, 1.0)),
            Err(Error::Usage(_))
        ));
    }

    proptest! {
        #[test]
        fn jump_is_antisymmetric(a in 0.01f64..100.0, b in 0.01f64..100.0, f in 1.0f64..1e3, base in 0.01f64..10.0) {
            let c = ctx(f, base);
            prop_assert_eq!(normalized_jump(a, b, &c).unwrap(), -normalized_jump(b, a, &c).unwrap());
        }

        #[test]
        fn interpolated_score_is_monotone_at_anchors(
            l1 in -1.0f64..0.0, d2 in 0.0f64..1.0, d3 in 0.0f64..1.0,
        ) {
            let params = PairwiseParams::new(JumpScores::symmetric(l1, l1 - d2, l1 - d2 - d3)).unwrap();
            let at = |x: f64| pairwise_score(x, &params).unwrap().0;
            for side in [1.0, -1.0] {
                for k in 0..4 {
                    prop_assert!(at(side * (k + 1) as f64) <= at(side * k as f64));
                }
            }
        }

        #[test]
        fn unary_shift_keeps_belief_argmax(
            seed in proptest::collection::vec(0.0f64..1.0, 3 * 4 * 5),
            shifts in proptest::collection::vec(-5.0f64..5.0, 4 * 5),
        ) {
            let raw = ScoreVolume::new(3, 4, 5, seed.iter().map(|v| v * 4.0).collect()).unwrap();
            let u = temperature_softmax(&raw, 1.0).unwrap();
            let shifted = ScoreVolume::from_fn(3, 4, 5, |p, i, j| u.get(p, i, j) + shifts[i * 5 + j]).unwrap();
            let h = HypothesisVolume::from_fn(3, 4, 5, |p, i, j| 2.0 + 0.4 * p as f64 + 0.05 * (i + j) as f64).unwrap();
            let params = PairwiseParams::default();
            let c = ctx(30.0, 0.2);
            let (b0, _) = bp_forward(&u, &h, &params, &c).unwrap();
            let (b1, _) = bp_forward(&shifted, &h, &params, &c).unwrap();
            for i in 0..4 {
                for j in 0..5 {
                    let v0 = b0.label_vector(i, j);
                    let top = |v: &[f64]| {
                        let mut s = v.to_vec();
                        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        s[0] - s[1]
                    };
                    // argmax must agree unless the top two beliefs are numerically tied
                    if top(&v0) > 1e-9 {
                        prop_assert_eq!(b0.argmax(i, j), b1.argmax(i, j));
                    }
                }
            }
        }
    }
}
