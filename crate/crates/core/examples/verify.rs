//! Runs the construction/oracle campaign and prints the JSON verdicts.
//! Pass `--mutate` to perturb the copier and watch its verdict fail.
//!
//! `cargo run --release --example verify [-- --mutate]`

use rnn_depth::experiments::{verify_campaign, CampaignOptions};

fn main() -> rnn_depth::Result<()> {
    let mutate_copier = std::env::args().any(|a| a == "--mutate");
    let report = verify_campaign(&CampaignOptions { mutate_copier, seed: 0 })?;
    println!("{}", report.to_json()?);
    for v in report.failed() {
        eprintln!("red: {}", v.claim);
    }
    if !report.all_passed {
        std::process::exit(1);
    }
    Ok(())
}
