//! Builds the shift-register copier for a few (n, p) pairs and shows that
//! its readout reproduces the lagged input exactly.
//!
//! `cargo run --example copier`

use rnn_depth::models::forward;
use rnn_depth::tasks::SequenceBatch;
use rnn_depth::theory::{build_copier, copy_reference, memory_bound, read_out, CopierSpec};

fn main() -> rnn_depth::Result<()> {
    let xs: Vec<f64> = (1..=12).map(f64::from).collect();
    let batch = SequenceBatch::new(1, xs.len(), 1, 0, xs.clone(), Vec::new(), vec![false; xs.len()])?;
    for (n, p) in [(2, 1), (3, 4), (4, 6), (5, 9)] {
        let spec = CopierSpec::new(n, p)?;
        let (model, w) = build_copier(n, p)?;
        let out = read_out(&forward(&model, &batch)?, &w)?;
        let want = copy_reference(&xs, p);
        println!(
            "n={n} p={p}: depth {} (bound at that depth {}), readout slot {}",
            spec.depth,
            memory_bound(n, spec.depth),
            spec.readout_index
        );
        println!("  output {out:?}");
        assert_eq!(out, want);
    }
    Ok(())
}
