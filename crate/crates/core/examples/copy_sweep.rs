//! Depth sweep on the scalar lag-8 copy task: trains linear RNNs over
//! L in {1, 2, 4} with widths around each depth's memory bound, then writes
//! the tidy table and x,y,y_err plot files against n, units and params.
//!
//! `cargo run --release --example copy_sweep -- [out_dir]`

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::PathBuf;

use rnn_depth::experiments::{sweep, write_plot_data, write_sweep_csv, Grid, SweepConfig, PLOT_AXES};
use rnn_depth::models::{Activation, Family, Placement};
use rnn_depth::tasks::TaskSpec;

fn main() -> rnn_depth::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "copy_sweep".into()));
    let task = TaskSpec::copy().with_dims(1, 16).with_sizes(1000, 500, 500);
    let grid = Grid {
        depths: vec![1, 2, 4],
        widths: (2..=10).collect(),
        widths_by_depth: BTreeMap::from([(2, (2..=6).collect()), (4, (2..=4).collect())]),
        families: vec![Family::Rnn],
        activations: vec![Activation::LINEAR],
    };
    let mut cfg = SweepConfig::new(task, grid);
    cfg.train.lr = 1e-2;
    cfg.train.max_epochs = 500;
    cfg.train.patience = 50;
    cfg.train.target_loss = Some(1e-4);
    let res = sweep(&cfg)?;

    fs::create_dir_all(&out)?;
    write_sweep_csv(File::create(out.join("cells.csv"))?, &res.cells)?;
    for axis in PLOT_AXES {
        write_plot_data(&res.cells, axis, |name| Ok(File::create(out.join(format!("{name}.csv")))?))?;
    }
    let mut cells = res.cells.clone();
    cells.sort_by_key(|c| (c.depth, c.n));
    for c in &cells {
        println!("L={} n={:<2} units={:<2} params={:<3} test {:.2e} ± {:.1e}", c.depth, c.n, c.units, c.params, c.metric_mean, c.metric_std);
    }
    for (depth, n) in res.minimal_solving_width(Family::Rnn, Placement::Recurrent) {
        println!("L={depth}: smallest width solving the task {n:?}");
    }
    println!("tables in {}", out.display());
    Ok(())
}
