//! One BP layer on a noisy two-level unary volume: per-pixel winners versus
//! belief winners, and the gradient of a loss with respect to the jump scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beliefsweep::bp::{bp_backward, bp_forward, JumpScores, NormalizationContext, PairwiseParams};
use beliefsweep::volumes::{HypothesisVolume, ScoreVolume};

fn main() -> beliefsweep::Result<()> {
    let (p, m, n) = (16, 40, 40);
    let ladder: Vec<f64> = (0..p).map(|k| 1.0 / (1.0 / 2.0 - k as f64 * 0.02)).collect();
    let h = HypothesisVolume::uniform(&ladder, m, n)?;
    // left half at label 4, right half at label 11, plus heavy noise
    let truth = |j: usize| if j < n / 2 { 4 } else { 11 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<f64> = (0..p * m * n).map(|_| rng.gen_range(0.0..0.6)).collect();
    let u = ScoreVolume::from_fn(p, m, n, |l, i, j| {
        let clean = if l == truth(j) { 0.3 } else { 0.0 };
        clean + noise[(l * m + i) * n + j]
    })?;
    let ctx = NormalizationContext::new(100.0, 0.5, 1.0)?;
    println!("jump of one label: {:.3}", 0.02 * ctx.jump_scale());

    let mut params = PairwiseParams::new(JumpScores::symmetric(-0.1, -0.3, -0.6))?;
    let (beliefs, trace) = bp_forward(&u, &h, &params, &ctx)?;
    let correct =
        |v: &ScoreVolume| (0..m * n).filter(|k| v.argmax(k / n, k % n) == truth(k % n)).count() as f64 / (m * n) as f64;
    println!("unary winners correct:  {:.1}%", 100.0 * correct(&u));
    println!("belief winners correct: {:.1}%", 100.0 * correct(&beliefs));

    // gradient of the sum of beliefs at the true labels
    let grad = ScoreVolume::from_fn(p, m, n, |l, _, j| if l == truth(j) { 1.0 } else { 0.0 })?;
    params.zero_grad();
    let grad_u = bp_backward(&trace, &grad, &mut params)?;
    println!("d loss / d scores {:?}", params.grad.to_array());
    println!(
        "d loss / d unaries sums to {:.1}",
        grad_u.as_slice().iter().sum::<f64>()
    );
    Ok(())
}
