//! Trains a linear RNN with a linear readout on the scalar copy task and
//! prints per-seed results. Widths below the memory bound `L(n - 1) >= p`
//! plateau; widths at or above it reach near-zero loss.
//!
//! `cargo run --release --example train_copy -- [n] [L] [lag]`

use rnn_depth::experiments::{run_detailed, RunConfig};
use rnn_depth::models::ModelConfig;
use rnn_depth::tasks::TaskSpec;
use rnn_depth::theory::memory_bound;

fn main() -> rnn_depth::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (n, depth, lag) = (arg(0, 3), arg(1, 1), arg(2, 2));
    let task = TaskSpec::copy().with_dims(1, 16).with_lag(lag).with_sizes(500, 200, 200);
    let model = ModelConfig::linear_rnn(depth, n, 1).with_readout(1);
    let mut cfg = RunConfig::new(task, model);
    cfg.train.max_epochs = 500;
    cfg.train.patience = 50;
    cfg.train.lr = 1e-2;
    cfg.train.target_loss = Some(1e-4);
    let out = run_detailed(&cfg)?;
    println!("n={n} L={depth} p={lag}, memory bound {}", memory_bound(n, depth));
    for s in &out.record.seeds {
        println!(
            "seed {}: epochs {} best_epoch {} val {:.3e} test {:.3e} ({} params)",
            s.seed, s.epochs_run, s.best_epoch, s.best_val_loss, s.test_loss, s.param_count
        );
    }
    let r = &out.record;
    println!(
        "target variance {:.4}; solved (< {:.0e}) {}; seconds per seed {:?}",
        r.target_variance,
        r.success_mse,
        r.solved(),
        out.timing.seconds_per_seed
    );
    Ok(())
}
