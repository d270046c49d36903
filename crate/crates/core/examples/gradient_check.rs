//! Finite-difference check of the BP backward pass over several seeds,
//! followed by the same check with deliberately swapped interpolation weights.

use beliefsweep::bp::GradientRouting;
use beliefsweep::gradcheck::{gradient_check, gradient_check_with};

fn main() -> beliefsweep::Result<()> {
    let shape = (4, 5, 5);
    for seed in 0..10 {
        let r = gradient_check(seed, shape)?;
        println!(
            "seed {seed}: unaries {:.2e}  pairwise {:.2e}  checked {}  skipped {}",
            r.max_rel_error_unaries, r.max_rel_error_params, r.checked, r.skipped_at_kinks
        );
    }
    let bad = gradient_check_with(0, shape, GradientRouting::SwappedWeights)?;
    println!("swapped weights: pairwise {:.2e}", bad.max_rel_error_params);
    println!("analytic {:?}", bad.analytic_param_grad);
    println!("numeric  {:?}", bad.numeric_param_grad);
    Ok(())
}
