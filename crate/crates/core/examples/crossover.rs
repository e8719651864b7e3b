//! Parameter cost of copying the deep copier's lag with a shallower network,
//! and the critical width above which depth always saves parameters.
//!
//! `cargo run --example crossover > crossover.csv`

use rnn_depth::theory::{critical_n, critical_n_max, crossover_table, crossover_violations, write_crossover_csv};

fn main() -> rnn_depth::Result<()> {
    let rows = crossover_table(12, 5)?;
    write_crossover_csv(std::io::stdout().lock(), &rows)?;
    let negative: Vec<_> = rows.iter().filter(|r| r.delta < 0).collect();
    eprintln!("{} rows, {} with the shallow network cheaper:", rows.len(), negative.len());
    for r in negative {
        eprintln!("  n={} L={} Lt={}: {} vs {}", r.n, r.depth, r.shallow_depth, r.params_shallow, r.params_deep);
    }
    eprintln!("violations for n >= 4: {}", crossover_violations(&rows).len());
    eprintln!("critical width for L=2, Lt=1: {:.12}", critical_n(2, 1)?);
    let (l, lt, v) = critical_n_max(5)?;
    eprintln!("largest critical width up to depth 5: {v:.6} (L={l}, Lt={lt})");
    Ok(())
}
