//! Plane-sweep cost volume of the synthetic scene at quarter resolution and
//! the accuracy of its per-pixel winner. The volume is dumped as raw f32.

use beliefsweep::config::RunConfig;
use beliefsweep::costvol::build_cost_volume;
use beliefsweep::io::write_volume;
use beliefsweep::pipeline::{initial_hypotheses, level_features};
use beliefsweep::synth::{generate_scene, SceneSpec};

fn main() -> beliefsweep::Result<()> {
    let scene = generate_scene(&SceneSpec::two_plane_benchmark(), 1)?;
    let views = scene.default_view_set()?;
    let cfg = RunConfig::synthetic_profile()?.pipeline;
    let feats = level_features(&views, &cfg, 0)?;
    let (rf, sources) = feats.split_first().unwrap();
    let (m, n) = (rf.features.height(), rf.features.width());
    let h = initial_hypotheses(&rf.camera, 32, m, n, cfg.initial_sampling)?;
    let cost = build_cost_volume(rf, sources, &h, cfg.sentinel)?;

    let s = cfg.level_scales[0];
    let truth = &scene.depths[0];
    let mut good = 0;
    for i in 0..m {
        for j in 0..n {
            let d = h.get(cost.argmax(i, j), i, j);
            let t = truth.get(i * s + (s - 1) / 2, j * s + (s - 1) / 2);
            if (d - t).abs() < 0.03 * t {
                good += 1;
            }
        }
    }
    println!("{m}x{n} pixels, {} labels", h.labels());
    println!("winner within 3%: {:.1}%", 100.0 * good as f64 / (m * n) as f64);
    let path = std::env::temp_dir().join("plane_sweep_volume.bin");
    write_volume(&path, &cost)?;
    println!("volume written to {}", path.display());
    Ok(())
}
