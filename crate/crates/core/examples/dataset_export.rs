//! Generates the four synthetic tasks, writes one split as CSV, reads it
//! back and audits the targets.
//!
//! `cargo run --example dataset_export`

use rnn_depth::tasks::{generate, read_csv, targets_consistent, write_csv, TaskSpec};

fn main() -> rnn_depth::Result<()> {
    for spec in [TaskSpec::copy(), TaskSpec::sinus(), TaskSpec::copy_sinus(), TaskSpec::parity()] {
        let spec = spec.with_sizes(20, 5, 5);
        let splits = generate(&spec)?;
        let mut buf = Vec::new();
        write_csv(&mut buf, &spec, "train", &splits.train)?;
        let (spec_back, split, batch) = read_csv(buf.as_slice())?;
        println!(
            "{:<10} d={} T={} p={}: {} bytes of CSV, round trip {}, targets consistent {}",
            spec.kind.name(),
            spec.d,
            spec.steps,
            spec.lag,
            buf.len(),
            spec_back == spec && split == "train" && batch == splits.train,
            targets_consistent(&spec, &batch)
        );
    }
    let spec = TaskSpec::copy().with_dims(1, 6).with_lag(2).with_sizes(1, 1, 1);
    let mut out = Vec::new();
    write_csv(&mut out, &spec, "test", &generate(&spec)?.test)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
