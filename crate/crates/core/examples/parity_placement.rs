//! Parity with a width-16 single-layer tanh RNN: recurrent activation
//! (the time recurrence passes through tanh) against depth-only activation
//! (the time recurrence stays linear, so the state cannot flip sign with
//! the input).
//!
//! `cargo run --release --example parity_placement -- [n] [max_epochs] [train_size]`

use rnn_depth::experiments::{run, RunConfig};
use rnn_depth::models::{Activation, ActivationKind, Family, ModelConfig};
use rnn_depth::tasks::TaskSpec;

fn main() -> rnn_depth::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let n = arg(0, 16);
    let task = TaskSpec::parity().with_sizes(arg(2, 1000), 500, 500);
    for activation in [Activation::recurrent(ActivationKind::Tanh), Activation::depth_only(ActivationKind::Tanh)] {
        let model = ModelConfig::new(Family::Rnn, 1, n, task.d).with_activation(activation).with_readout(task.d);
        let mut cfg = RunConfig::new(task.clone(), model);
        cfg.train.max_epochs = arg(1, 400);
        cfg.train.patience = cfg.train.patience.min(cfg.train.max_epochs);
        cfg.train.lr = 2e-3;
        cfg.train.batch_size = 32;
        cfg.train.clip = Some(1.0);
        cfg.train.target_loss = Some(1e-3);
        let rec = run(&cfg)?;
        println!("{:?} placement:", activation.placement);
        for s in &rec.seeds {
            println!("  seed {}: {} epochs, test MSE {:.3e}", s.seed, s.epochs_run, s.test_loss);
        }
        println!("  mean {:.3e} ± {:.1e}", rec.aggregate.test_mean, rec.aggregate.test_std);
    }
    Ok(())
}
