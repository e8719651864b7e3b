//! Closed-form unrolled hidden states against the recurrence, for every
//! family: each step is an affine map whose matrix depends on the previous
//! state.
//!
//! `cargo run --example unroll`

use rnn_depth::models::{forward, unroll_closed_form, Family, ModelConfig, ModelParams};
use rnn_depth::numkit::Rng;
use rnn_depth::tasks::SequenceBatch;

fn main() -> rnn_depth::Result<()> {
    let mut rng = Rng::new(2);
    let (depth, n, d, steps) = (3, 3, 2, 5);
    let x = SequenceBatch::new(1, steps, d, 0, rng.normal_vec(steps * d), Vec::new(), vec![false; steps])?;
    for family in [Family::Rnn, Family::SecondOrder, Family::Bilinear, Family::Cp, Family::CpBilinear] {
        let p = ModelParams::random(ModelConfig::new(family, depth, n, d).with_rank(2), &mut rng)?;
        let trace = forward(&p, &x)?;
        let mut worst = 0.0_f64;
        for t in 1..=steps {
            for l in 1..=depth {
                let u = unroll_closed_form(&p, &x, 0, t, l)?;
                for (a, b) in u.as_slice().iter().zip(trace.state(0, t, l)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        println!("{:<8} max |unrolled - recurrence| = {worst:.2e}", family.name());
    }
    Ok(())
}
