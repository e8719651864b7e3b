//! Polynomial degree of hidden states in the inputs: the diagonal power
//! network has degree exactly L in x_1, random bilinear networks stay at or
//! below L, and linear first-order RNNs are affine.
//!
//! `cargo run --example degree_growth`

use rnn_depth::models::{Family, ModelConfig, ModelParams};
use rnn_depth::numkit::Rng;
use rnn_depth::oracles::{check_affine, check_degree_bound_tl, estimate_degree, state_fn};
use rnn_depth::theory::build_diag_power;

fn main() -> rnn_depth::Result<()> {
    let mut rng = Rng::new(3);
    println!("degree of h_2 in x_1:");
    for depth in 1..=4 {
        let diag = build_diag_power(3, 3, depth)?;
        let r = estimate_degree(state_fn(&diag, 2, 2, depth), 1, 2, 3, 8, 1e-6, &mut rng)?;
        let random = ModelParams::random(ModelConfig::new(Family::Bilinear, depth, 3, 3), &mut rng)?;
        let q = estimate_degree(state_fn(&random, 2, 2, depth), 1, 2, 3, 8, 1e-6, &mut rng)?;
        println!("  L={depth}: diagonal power {}, random bilinear {}", r.describe(), q.describe());
    }
    println!("joint degree of h_T against T^L:");
    for (steps, depth) in [(2, 1), (3, 1), (2, 2), (3, 2)] {
        let m = ModelParams::random(ModelConfig::new(Family::Bilinear, depth, 2, 2), &mut rng)?;
        let (check, report) = check_degree_bound_tl(&m, steps, 1e-6, 11)?;
        println!("  T={steps} L={depth}: {} (bound {}, holds: {})", report.describe(), steps.pow(depth as u32), check.passed);
    }
    let rnn = ModelParams::random(ModelConfig::linear_rnn(3, 4, 2), &mut rng)?;
    let affine = check_affine(&rnn, 5, 10, 1e-10, 1)?;
    println!("linear RNN affine defect {:.2e} (passes: {})", affine.residual, affine.passed);
    Ok(())
}
