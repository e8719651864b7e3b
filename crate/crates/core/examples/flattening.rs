//! Flattens a random deep linear RNN into one layer of width nL and checks
//! that the wide state is the stack of the deep states.
//!
//! `cargo run --example flattening`

use rnn_depth::models::{ModelConfig, ModelParams};
use rnn_depth::numkit::Rng;
use rnn_depth::oracles::check_concat_equiv;
use rnn_depth::theory::build_flattened;

fn main() -> rnn_depth::Result<()> {
    let mut rng = Rng::new(7);
    for (depth, n, d) in [(2, 3, 1), (3, 2, 2), (4, 4, 3)] {
        let mut deep = ModelParams::random(ModelConfig::linear_rnn(depth, n, d), &mut rng)?;
        for l in 0..depth {
            deep.layer_mut(l).h0 = rng.normal_vector(n);
        }
        let shallow = build_flattened(&deep)?;
        let check = check_concat_equiv(&deep, &shallow, 8, 10, 1e-12, 1)?;
        println!(
            "L={depth} n={n} d={d}: deep params {}, shallow width {} params {}, max rel err {:.2e}",
            deep.count_parameters(false),
            shallow.hidden(),
            shallow.count_parameters(false),
            check.residual
        );
    }
    Ok(())
}
