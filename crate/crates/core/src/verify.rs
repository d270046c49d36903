//! Property suite behind `beliefsweep verify`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bp::{
    bp_forward, normalized_jump, pairwise_score, GradientRouting, JumpScores, NormalizationContext, PairwiseParams,
};
use crate::config::RunConfig;
use crate::error::Result;
use crate::fusion::{fuse, FusionParams, FusionView};
use crate::geometry::{View, ViewSet};
use crate::gradcheck::{gradient_check_with, GradCheckInstance};
use crate::pipeline::run_pipeline;
use crate::synth::{fraction_within_relative, generate_scene, SceneSpec, SyntheticScene};
use crate::volumes::{DepthMap, HypothesisVolume, ScoreVolume};

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub gradcheck_seeds: u64,
    pub gradcheck_tolerance: f64,
    pub chains: usize,
    pub routing: GradientRouting,
    pub end_to_end: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradcheck_seeds: 10,
            gradcheck_tolerance: 1e-4,
            chains: 100,
            routing: GradientRouting::Standard,
            end_to_end: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub metrics: BTreeMap<String, f64>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, BTreeMap<String, f64>, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, metrics, message) = match f() {
        Ok(r) => r,
        Err(e) => (false, BTreeMap::new(), e.to_string()),
    };
    CheckResult {
        name,
        passed,
        seconds: start.elapsed().as_secs_f64(),
        metrics,
        message,
    }
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = vec![
        timed("gradient", || check_gradients(opts)),
        timed("chain_exactness", || check_chains(opts.chains, opts.seed)),
        timed("scale_invariance_bp", || check_bp_scale(opts.seed)),
    ];
    if opts.end_to_end {
        match generate_scene(&SceneSpec::two_plane_benchmark(), opts.seed + 1) {
            Ok(scene) => {
                checks.push(timed("synthetic_end_to_end", || check_end_to_end(&scene)));
                checks.push(timed("scale_invariance_pipeline", || check_pipeline_scale(&scene)));
                checks.push(timed("fusion_soundness", || check_fusion(&scene, opts.seed)));
            }
            Err(e) => checks.push(CheckResult {
                name: "synthetic_scene",
                passed: false,
                seconds: 0.0,
                metrics: BTreeMap::new(),
                message: e.to_string(),
            }),
        }
    }
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn check_gradients(opts: &VerifyOptions) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let mut metrics = BTreeMap::new();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for seed in opts.seed..opts.seed + opts.gradcheck_seeds {
        let r = gradient_check_with(seed, (4, 5, 5), opts.routing)?;
        metrics.insert(format!("seed_{seed}_max_rel_error"), r.max_rel_error());
        worst = worst.max(r.max_rel_error());
        skipped += r.skipped_at_kinks;
    }
    metrics.insert("max_rel_error".into(), worst);
    metrics.insert("skipped_at_kinks".into(), skipped as f64);
    let passed = worst < opts.gradcheck_tolerance;
    Ok((passed, metrics, format!("max relative error {worst:.3e}")))
}

/// Random 1 x N chain with unaries, per-node ladders and scores.
pub struct ChainInstance {
    pub unaries: ScoreVolume,
    pub hypotheses: HypothesisVolume,
    pub params: PairwiseParams,
    pub ctx: NormalizationContext,
}

impl ChainInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = rng.gen_range(2..=6);
        let p = rng.gen_range(2..=5);
        let unaries: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut depths = vec![0.0; n * p];
        for j in 0..n {
            let mut d = rng.gen_range(2.0..3.0);
            for l in 0..p {
                depths[l * n + j] = d;
                d += rng.gen_range(0.02..0.4);
            }
        }
        let scores = JumpScores::from_array(std::array::from_fn(|_| rng.gen_range(-1.5..-0.05)));
        Ok(Self {
            unaries: ScoreVolume::new(p, 1, n, unaries)?,
            hypotheses: HypothesisVolume::new(p, 1, n, depths)?,
            params: PairwiseParams::new(scores)?,
            ctx: NormalizationContext::new(50.0, 0.5, 1.0)?,
        })
    }

    /// Best and second-best labelings by exhaustive enumeration.
    pub fn enumerate(&self) -> Result<(Vec<usize>, f64, f64)> {
        let (p, _, n) = self.unaries.shape();
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut second = f64::NEG_INFINITY;
        let mut labels = vec![0usize; n];
        loop {
            let mut e: f64 = (0..n).map(|j| self.unaries.get(labels[j], 0, j)).sum();
            for j in 0..n - 1 {
                let jump = normalized_jump(
                    self.hypotheses.get(labels[j], 0, j),
                    self.hypotheses.get(labels[j + 1], 0, j + 1),
                    &self.ctx,
                )?;
                e += pairwise_score(jump, &self.params)?.0;
            }
            if e > best.1 {
                second = best.1;
                best = (labels.clone(), e);
            } else if e > second {
                second = e;
            }
            let mut k = 0;
            while k < n {
                labels[k] += 1;
                if labels[k] < p {
                    break;
                }
                labels[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        Ok((best.0, best.1, second))
    }
}

fn check_chains(count: usize, seed: u64) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4a1);
    let mut mismatches = 0;
    let mut tested = 0;
    while tested < count {
        let chain = ChainInstance::random(&mut rng)?;
        let (map, best, second) = chain.enumerate()?;
        if best - second < 1e-9 {
            continue;
        }
        tested += 1;
        let (beliefs, _) = bp_forward(&chain.unaries, &chain.hypotheses, &chain.params, &chain.ctx)?;
        if (0..map.len()).any(|j| beliefs.argmax(0, j) != map[j]) {
            mismatches += 1;
        }
    }
    let metrics = BTreeMap::from([
        ("chains".to_string(), tested as f64),
        ("mismatches".to_string(), mismatches as f64),
    ]);
    Ok((
        mismatches == 0,
        metrics,
        format!("{mismatches} of {tested} chains disagree"),
    ))
}

/// Largest `|a - b| / max(|a|, |b|)` over paired values (0 where both are 0).
pub fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let m = x.abs().max(y.abs());
            if m == 0.0 {
                0.0
            } else {
                (x - y).abs() / m
            }
        })
        .fold(0.0, f64::max)
}

fn check_bp_scale(seed: u64) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let mut metrics = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for k in 0..5 {
        let inst = GradCheckInstance::random(seed + 100 + k, (5, 8, 8))?;
        let (base, _) = bp_forward(&inst.unaries, &inst.hypotheses, &inst.params, &inst.ctx)?;
        for s in [0.1, 10.0] {
            let h = inst.hypotheses.scaled(s)?;
            let ctx = inst.ctx.with_baseline(inst.ctx.baseline() * s)?;
            let (scaled, _) = bp_forward(&inst.unaries, &h, &inst.params, &ctx)?;
            let belief_err = max_relative_difference(base.as_slice(), scaled.as_slice());
            let jumps = |h: &HypothesisVolume, ctx: &NormalizationContext| -> Result<Vec<f64>> {
                let d = h.as_slice();
                let mut out = Vec::new();
                for a in d.iter().step_by(7) {
                    for b in d.iter().step_by(11) {
                        out.push(normalized_jump(*a, *b, ctx)?);
                    }
                }
                Ok(out)
            };
            let jump_err = max_relative_difference(&jumps(&inst.hypotheses, &inst.ctx)?, &jumps(&h, &ctx)?);
            worst = worst.max(belief_err).max(jump_err);
        }
    }
    metrics.insert("max_rel_difference".into(), worst);
    Ok((worst < 1e-9, metrics, format!("max relative change {worst:.3e}")))
}

fn check_end_to_end(scene: &SyntheticScene) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let cfg = RunConfig::synthetic_profile()?;
    let start = Instant::now();
    let depth = run_pipeline(&scene.default_view_set()?, &cfg.pipeline)?;
    let seconds = start.elapsed().as_secs_f64();
    let within = fraction_within_relative(&depth, &scene.depths[0], 0.01, 8)?;
    let metrics = BTreeMap::from([
        ("fraction_within_1pct".to_string(), within),
        ("pipeline_seconds".to_string(), seconds),
    ]);
    let passed = within >= 0.95 && seconds < 60.0;
    Ok((
        passed,
        metrics,
        format!("{:.2}% of interior pixels within 1%", 100.0 * within),
    ))
}

fn scaled_views(views: &ViewSet, s: f64) -> Result<ViewSet> {
    let scale = |v: &View| -> Result<View> {
        Ok(View {
            camera: v.camera.scene_scaled(s)?,
            image: v.image.clone(),
        })
    };
    ViewSet::new(
        scale(&views.reference)?,
        views.sources.iter().map(scale).collect::<Result<_>>()?,
    )
}

fn check_pipeline_scale(scene: &SyntheticScene) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let cfg = RunConfig::synthetic_profile()?;
    let views = scene.default_view_set()?;
    let base = run_pipeline(&views, &cfg.pipeline)?;
    let mut worst: f64 = 0.0;
    let mut masks_agree = true;
    for s in [0.1, 10.0] {
        let d = run_pipeline(&scaled_views(&views, s)?, &cfg.pipeline)?;
        masks_agree &= d.valid_mask() == base.valid_mask();
        let expect = base.scaled(s)?;
        worst = worst.max(max_relative_difference(expect.depths(), d.depths()));
    }
    let metrics = BTreeMap::from([("max_rel_difference".to_string(), worst)]);
    Ok((
        masks_agree && worst < 1e-6,
        metrics,
        format!("max relative depth change {worst:.3e}"),
    ))
}

fn fusion_views(scene: &SyntheticScene, depths: &[DepthMap]) -> Vec<FusionView> {
    (0..scene.cameras.len())
        .map(|k| FusionView {
            camera: scene.cameras[k].clone(),
            depth: depths[k].clone(),
            image: scene.images[k].clone(),
        })
        .collect()
}

fn check_fusion(scene: &SyntheticScene, seed: u64) -> Result<(bool, BTreeMap<String, f64>, String)> {
    let params = FusionParams::new(2, 0.25, 0.01)?;
    let views = fusion_views(scene, &scene.depths);
    let cloud = fuse(&views, &params)?;
    let mut worst: f64 = 0.0;
    for (k, p) in cloud.points.iter().enumerate() {
        let cam = &views[cloud.source_view[k]].camera;
        let (i, j) = cloud.source_pixel[k];
        let err = match cam.project(&(*p).into()) {
            Some((x, y, _)) => (x - j as f64).hypot(y - i as f64),
            None => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf05e);
    let perturbed: Vec<DepthMap> = scene
        .depths
        .iter()
        .map(|d| {
            let noisy = d
                .depths()
                .iter()
                .map(|z| z * (1.0 + rng.gen_range(-1e-3..1e-3)))
                .collect();
            DepthMap::new(d.height(), d.width(), noisy, d.valid_mask().to_vec())
        })
        .collect::<Result<_>>()?;
    let strict = FusionParams::new(2, 1e-9, 0.01)?;
    let strict_cloud = fuse(&fusion_views(scene, &perturbed), &strict)?;
    let metrics = BTreeMap::from([
        ("points".to_string(), cloud.len() as f64),
        ("max_reprojection_px".to_string(), worst),
        ("strict_points".to_string(), strict_cloud.len() as f64),
    ]);
    let passed = !cloud.is_empty() && worst < params.reprojection_threshold && strict_cloud.is_empty();
    Ok((
        passed,
        metrics,
        format!("{} points, worst reprojection {worst:.3e} px", cloud.len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let opts = VerifyOptions {
            gradcheck_seeds: 2,
            chains: 20,
            end_to_end: false,
            ..Default::default()
        };
        let report = run_verify(&opts);
        assert!(report.passed, "{report:#?}");
        assert_eq!(report.checks.len(), 3);
    }

    #[test]
    fn mutation_fails_gradient_check() {
        let opts = VerifyOptions {
            gradcheck_seeds: 1,
            chains: 1,
            end_to_end: false,
            routing: GradientRouting::SwappedWeights,
            ..Default::default()
        };
        assert_eq!(run_verify(&opts).failing(), vec!["gradient"]);
    }
}
