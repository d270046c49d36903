//! Temperature softmax over labels and the soft-argmax depth readout.

use beliefsweep::volumes::{soft_argmax_depth, temperature_softmax, HypothesisVolume, ScoreVolume};

fn main() -> beliefsweep::Result<()> {
    let ladder = [4.0, 4.5, 5.0, 5.5, 6.0];
    let h = HypothesisVolume::uniform(&ladder, 1, 1)?;
    // two close peaks at 5.0 and 5.5
    let scores = ScoreVolume::new(5, 1, 1, vec![-0.9, -0.4, -0.05, -0.1, -0.8])?;
    for t in [1.0, 0.3, 0.1, 0.03, 0.01] {
        let c = temperature_softmax(&scores, t)?;
        let d = soft_argmax_depth(&c, &h)?;
        let probs: Vec<String> = c.label_vector(0, 0).iter().map(|p| format!("{p:.3}")).collect();
        println!("T = {t:<5} probs [{}]  depth {:.4}", probs.join(" "), d.get(0, 0));
    }
    Ok(())
}
