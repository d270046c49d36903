//! Depth maps for every view of the synthetic scene, fused into a PLY cloud.

use beliefsweep::config::RunConfig;
use beliefsweep::fusion::{fuse, write_ply, FusionView};
use beliefsweep::pipeline::run_pipeline;
use beliefsweep::synth::{fraction_within_relative, generate_scene, SceneSpec};

fn main() -> beliefsweep::Result<()> {
    let scene = generate_scene(&SceneSpec::two_plane_benchmark(), 1)?;
    let cfg = RunConfig::synthetic_profile()?;
    let mut views = Vec::new();
    for r in 0..scene.cameras.len() {
        let sources: Vec<usize> = (0..scene.cameras.len()).filter(|&k| k != r).collect();
        let depth = run_pipeline(&scene.view_set(r, &sources)?, &cfg.pipeline)?;
        let frac = fraction_within_relative(&depth, &scene.depths[r], 0.01, 8)?;
        println!("view {r}: {:.1}% within 1%", 100.0 * frac);
        views.push(FusionView {
            camera: scene.cameras[r].clone(),
            depth,
            image: scene.images[r].clone(),
        });
    }
    let cloud = fuse(&views, &cfg.fusion)?;
    let path = std::env::temp_dir().join("fused.ply");
    write_ply(&cloud, &path)?;
    println!("{} points written to {}", cloud.len(), path.display());
    Ok(())
}
