//! Compares hand-written BPTT gradients with central differences for every
//! family under both activation placements.
//!
//! `cargo run --release --example gradient_check`

use rnn_depth::autograd::{gradient_check, BackwardOptions};
use rnn_depth::models::{Activation, ActivationKind, Family, ModelConfig, ModelParams};
use rnn_depth::numkit::Rng;
use rnn_depth::tasks::{generate, TaskSpec};

fn main() -> rnn_depth::Result<()> {
    let data = generate(&TaskSpec::sinus().with_dims(2, 4).with_sizes(3, 1, 1))?;
    let mut rng = Rng::new(1);
    let families = [Family::Rnn, Family::SecondOrder, Family::Bilinear, Family::Cp, Family::CpBilinear];
    let activations = [
        Activation::LINEAR,
        Activation::recurrent(ActivationKind::Tanh),
        Activation::depth_only(ActivationKind::Tanh),
    ];
    for family in families {
        for act in activations {
            let cfg = ModelConfig::new(family, 2, 3, 2).with_rank(2).with_activation(act).with_readout(2);
            let p = ModelParams::random_with_scale(cfg, &mut rng, 0.8)?;
            let g = gradient_check(&p, &data.train, BackwardOptions::default(), 1e-6)?;
            println!(
                "{:<8} {:?}/{:?}: {} entries, max rel err {:.2e}",
                family.name(),
                act.kind,
                act.placement,
                g.checked,
                g.max_rel_err
            );
        }
    }
    Ok(())
}
