//! Three-level depth estimation on the synthetic two-plane scene, scored
//! per level against the exact ground truth. Optional argument: scene seed.

use std::time::Instant;

use beliefsweep::config::RunConfig;
use beliefsweep::pipeline::run_pipeline_levels;
use beliefsweep::synth::{depth_error_metrics, fraction_within_relative, generate_scene, SceneSpec};
use beliefsweep::volumes::DepthMap;

fn main() -> beliefsweep::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let scene = generate_scene(&SceneSpec::two_plane_benchmark(), seed)?;
    let views = scene.default_view_set()?;
    let cfg = RunConfig::synthetic_profile()?.pipeline;

    let start = Instant::now();
    let levels = run_pipeline_levels(&views, &cfg)?;
    println!("pipeline: {:.2?}", start.elapsed());

    let truth = &scene.depths[0];
    for (l, out) in levels.iter().enumerate() {
        let s = cfg.level_scales[l];
        // ground truth at the center of each s x s block
        let gt = DepthMap::from_fn(truth.height() / s, truth.width() / s, |i, j| {
            truth.get(i * s + (s - 1) / 2, j * s + (s - 1) / 2)
        })?;
        let frac = fraction_within_relative(&out.depth, &gt, 0.01, 8 / s)?;
        println!(
            "level {l} ({}x{}, {} hypotheses): {:.1}% of interior pixels within 1%",
            gt.width(),
            gt.height(),
            out.hypotheses.labels(),
            100.0 * frac
        );
    }
    let pct = depth_error_metrics(&levels[2].depth, truth, &[0.01, 0.02, 0.05, 0.1])?;
    println!("abs error > 0.01/0.02/0.05/0.1: {pct:.2?} %");
    Ok(())
}
