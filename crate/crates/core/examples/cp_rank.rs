//! Image dimension of x_1 -> h_1 for CP bilinear networks: at most the CP
//! rank R on random instances, exactly R on the identity-factor witness.
//!
//! `cargo run --example cp_rank`

use rnn_depth::models::{Family, ModelConfig, ModelParams};
use rnn_depth::numkit::Rng;
use rnn_depth::oracles::jacobian_rank_h1;
use rnn_depth::theory::build_cp_witness;

fn main() -> rnn_depth::Result<()> {
    let mut rng = Rng::new(5);
    let (n, d) = (5, 5);
    for rank in 0..=4 {
        for depth in 1..=3 {
            let cfg = ModelConfig::new(Family::CpBilinear, depth, n, d).with_rank(rank);
            let random = ModelParams::random(cfg, &mut rng)?;
            let witness = build_cp_witness(n, d, rank, depth)?;
            let x1 = rng.normal_vector(d);
            println!(
                "R={rank} L={depth}: random rank {}, witness rank {}",
                jacobian_rank_h1(&random, &x1, 1e-6)?,
                jacobian_rank_h1(&witness, &x1, 1e-6)?
            );
        }
    }
    Ok(())
}
