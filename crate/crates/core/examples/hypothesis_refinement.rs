//! Per-pixel hypothesis windows around a coarse estimate, spaced by half the
//! expected depth error, including the floor clamp near the camera.

use beliefsweep::bp::NormalizationContext;
use beliefsweep::pipeline::{auto_intervals, refine_hypotheses};
use beliefsweep::volumes::DepthMap;

fn main() -> beliefsweep::Result<()> {
    let ctx = NormalizationContext::new(100.0, 0.5, 1.0)?;
    let d_hat = DepthMap::new(1, 4, vec![2.0, 10.0, 40.0, 0.0], vec![true, true, true, false])?;
    let intervals = auto_intervals(&d_hat, &ctx);
    let labels = 8;
    let fallback: Vec<f64> = (0..labels).map(|k| 1.0 + k as f64).collect();
    let refined = refine_hypotheses(&d_hat, &intervals, labels, 0.5, &fallback)?;
    for j in 0..4 {
        let ladder: Vec<String> = (0..labels)
            .map(|p| format!("{:.3}", refined.volume.get(p, 0, j)))
            .collect();
        println!(
            "d_hat {:>5.1}  interval {:>7.4}  valid {:<5}  [{}]",
            d_hat.get(0, j),
            intervals.interval[j],
            refined.valid[j],
            ladder.join(", ")
        );
    }
    Ok(())
}
