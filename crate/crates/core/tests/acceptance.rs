//! Acceptance suite: one PASS/FAIL line per criterion, each with its
//! tolerance and wall-clock limit. Runs without the libtest harness so the
//! lines show up in plain `cargo test` output.
//!
//! Criteria listed in `KNOWN_FAILURES` still print FAIL but do not fail the
//! process; everything else must pass.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rnn_depth::autograd::{backward, mse, BackwardOptions};
use rnn_depth::experiments::{run, sweep, Grid, RunConfig, RunRecord, SweepConfig, SweepResult};
use rnn_depth::models::{forward, Activation, ActivationKind, Family, ModelConfig, ModelParams, Placement};
use rnn_depth::numkit::{Rng, Vector};
use rnn_depth::oracles::{
    affine_deviation, check_affine, check_concat_equiv, check_degree_bound_tl, estimate_degree, jacobian_rank_h1,
    state_fn,
};
use rnn_depth::tasks::{generate, SequenceBatch, TaskSpec};
use rnn_depth::theory::{build_cp_witness, build_diag_power, build_flattened, copier_model, critical_n, crossover_table};

/// Criteria that fail at desk scale; see the decisions ledger.
const KNOWN_FAILURES: &[&str] = &["9c"];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

struct Suite {
    unexpected: Vec<String>,
}

impl Suite {
    fn report(&mut self, id: &str, name: &str, limit: Duration, elapsed: Duration, o: Outcome) {
        let in_time = elapsed <= limit;
        let passed = o.passed && in_time;
        let timing = format!("{:.2}s / limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64());
        println!(
            "{} [{id}] {name}: {}; {timing}{}",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            if in_time { "" } else { " (over time)" }
        );
        if !passed && !KNOWN_FAILURES.contains(&id) {
            self.unexpected.push(id.to_string());
        }
        if passed && KNOWN_FAILURES.contains(&id) {
            println!("note [{id}] listed as a known failure but passed");
        }
    }

    fn check(&mut self, id: &str, name: &str, limit_s: u64, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = f();
        self.report(id, name, Duration::from_secs(limit_s), start.elapsed(), o);
    }
}

fn scalar_batch(seqs: &[Vec<f64>]) -> SequenceBatch {
    let steps = seqs[0].len();
    let data: Vec<f64> = seqs.concat();
    SequenceBatch::new(seqs.len(), steps, 1, 0, data, Vec::new(), vec![false; seqs.len() * steps]).unwrap()
}

fn random_linear(rng: &mut Rng, family: Family, depth: usize, n: usize, d: usize, rank: usize) -> ModelParams {
    let mut p = ModelParams::random(ModelConfig::new(family, depth, n, d).with_rank(rank), rng).unwrap();
    for l in 0..depth {
        p.layer_mut(l).h0 = rng.normal_vector(n);
    }
    p
}

// 1. Copier reproduces the lag-p copy function exactly.
fn copier_exactness() -> Outcome {
    const T: usize = 32;
    let mut rng = Rng::new(101);
    let (mut worst_int, mut worst_gauss) = (0.0_f64, 0.0_f64);
    let mut cases = 0;
    for n in 2..=5 {
        for p in 1..=3 * (n - 1) {
            let model = copier_model(n, p).unwrap();
            let ints: Vec<Vec<f64>> = (0..4).map(|_| (0..T).map(|_| rng.below(201) as f64 - 100.0).collect()).collect();
            let gauss: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(T)).collect();
            for (seqs, is_int) in [(ints, true), (gauss, false)] {
                let out = forward(&model, &scalar_batch(&seqs)).unwrap();
                let mut sq = 0.0;
                for (s, xs) in seqs.iter().enumerate() {
                    for t in 0..T {
                        let want = if t >= p { xs[t - p] } else { 0.0 };
                        let e = out.output(s, t + 1)[0] - want;
                        sq += e * e;
                    }
                }
                let m = sq / (seqs.len() * T) as f64;
                if is_int {
                    worst_int = worst_int.max(m);
                } else {
                    worst_gauss = worst_gauss.max(m);
                }
            }
            cases += 1;
        }
    }
    outcome(
        worst_int == 0.0 && worst_gauss < 1e-24,
        format!("{cases} (n,p) cases at T=32; integer MSE {worst_int:e} (need 0), Gaussian MSE {worst_gauss:.2e} (need < 1e-24)"),
    )
}

fn copy_config(n: usize, lag: usize, seeds: Vec<u64>) -> RunConfig {
    let task = TaskSpec::copy().with_dims(1, 16).with_lag(lag);
    let mut cfg = RunConfig::new(task, ModelConfig::linear_rnn(1, n, 1).with_readout(1));
    cfg.train.seeds = seeds;
    cfg.train.lr = 1e-2;
    cfg
}

// 2. Width 2, depth 1 cannot copy lag 2 but can copy lag 1.
fn memory_bound_training() -> Outcome {
    // No early stopping: the over-capacity model gets the whole 2000 epochs.
    let mut over = copy_config(2, 2, vec![0, 1, 2]);
    over.train.patience = over.train.max_epochs;
    let val_var = generate(&over.task).unwrap().val.target_variance();
    let rec_over = run(&over).unwrap();
    let mut under = copy_config(2, 1, vec![0, 1, 2]);
    under.train.target_loss = Some(1e-4);
    let rec_under = run(&under).unwrap();

    let thr = rec_over.failure_mse;
    let min_test = rec_over.seeds.iter().map(|s| s.test_loss).fold(f64::INFINITY, f64::min);
    let min_val = rec_over.seeds.iter().flat_map(|s| s.val_curve.iter().copied()).fold(f64::INFINITY, f64::min);
    let over_ok = rec_over.aggregate.completed == 3 && min_test > thr && min_val > 0.5 * val_var;
    let max_under = rec_under.seeds.iter().map(|s| s.test_loss).fold(0.0, f64::max);
    let under_ok = rec_under.aggregate.completed == 3 && max_under < 1e-3;
    let epochs: Vec<usize> = rec_over.seeds.iter().map(|s| s.epochs_run).collect();
    outcome(
        over_ok && under_ok,
        format!(
            "p=2: lowest test MSE {min_test:.4} and lowest val MSE {min_val:.4} vs 0.5x variance {thr:.4}/{:.4} (epochs {epochs:?}); p=1: worst test MSE {max_under:.2e} (need < 1e-3)",
            0.5 * val_var
        ),
    )
}

// 3. Deep copier parameter advantage.
fn crossover() -> Outcome {
    let rows = crossover_table(12, 5).unwrap();
    // Independent count: build the models and count their entries.
    let count = |n: usize, l: usize| ModelParams::zeros(ModelConfig::linear_rnn(l, n, 1)).unwrap().count_parameters(false);
    let mut bad = Vec::new();
    let mut checked = 0;
    for n in 4..=12_usize {
        for l in 2..=5 {
            for lt in 1..l {
                let n_tilde = (l * (n - 1)).div_ceil(lt) + 1_usize;
                let delta = count(n_tilde, lt) as i64 - count(n, l) as i64;
                let row = rows.iter().find(|r| (r.n, r.depth, r.shallow_depth) == (n, l, lt));
                if delta <= 0 || row.is_none_or(|r| r.delta != delta) {
                    bad.push((n, l, lt));
                }
                checked += 1;
            }
        }
    }
    let small = rows.iter().find(|r| (r.n, r.depth, r.shallow_depth) == (3, 2, 1)).copied();
    let small_ok = small.is_some_and(|r| r.params_shallow == 35 && r.params_deep == 36 && r.delta == -1);
    let crit_err = (critical_n(2, 1).unwrap() - (3.0 + 13f64.sqrt()) / 2.0).abs();
    outcome(
        bad.is_empty() && small_ok && crit_err < 1e-12,
        format!(
            "{checked} rows with n in [4,12], non-positive: {bad:?}; (n=3,L=2,Lt=1) delta {:?} (need 35-36=-1); critical_n(2,1) error {crit_err:.1e} (need < 1e-12)",
            small.map(|r| r.delta)
        ),
    )
}

// 4. Flattening preserves every hidden state.
fn flattening() -> Outcome {
    let root = Rng::new(404);
    let mut worst = 0.0_f64;
    let mut fails = 0;
    for i in 0..100 {
        let mut rng = root.substream(i);
        let (l, n, d, t) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(8));
        let deep = random_linear(&mut rng, Family::Rnn, l, n, d, 0);
        let shallow = build_flattened(&deep).unwrap();
        let c = check_concat_equiv(&deep, &shallow, t, 2, 1e-12, i).unwrap();
        worst = worst.max(c.residual);
        fails += usize::from(!c.passed);
    }
    outcome(fails == 0, format!("100 models, worst rel err {worst:.2e} (need < 1e-12)"))
}

// 5. Degree of hidden states in the inputs.
fn degree_growth() -> Outcome {
    let mut rng = Rng::new(505);
    let mut diag = Vec::new();
    for l in 1..=4 {
        let m = build_diag_power(3, 3, l).unwrap();
        diag.push(estimate_degree(state_fn(&m, 2, 2, l), 1, 2, 3, 8, 1e-6, &mut rng).unwrap().estimated_degree);
    }
    let diag_ok = diag.iter().enumerate().all(|(i, k)| *k == Some(i + 1));

    let mut over = 0;
    let mut highest = 0;
    for s in 0..50 {
        let mut r = Rng::new(5050 + s);
        let (l, n, d) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(3));
        let m = ModelParams::random(ModelConfig::new(Family::Bilinear, l, n, d), &mut r).unwrap();
        let k = estimate_degree(state_fn(&m, 2, 2, l), 1, 2, d, 8, 1e-6, &mut r).unwrap().estimated_degree;
        match k {
            Some(k) if k <= l => highest = highest.max(k),
            _ => over += 1,
        }
    }

    let mut tl_fail = Vec::new();
    for t in 1..=3 {
        for l in 1..=2 {
            for s in 0..3 {
                let mut r = Rng::new(55_000 + (t * 10 + l) as u64 * 7 + s);
                let m = ModelParams::random(ModelConfig::new(Family::Bilinear, l, 2, 2), &mut r).unwrap();
                let (c, _) = check_degree_bound_tl(&m, t, 1e-6, s).unwrap();
                if !c.passed {
                    tl_fail.push((t, l));
                }
            }
        }
    }
    outcome(
        diag_ok && over == 0 && tl_fail.is_empty(),
        format!(
            "diagonal power degrees {diag:?} (need 1..4); 50 random bilinear nets above L: {over}; T^L bound failures (T<=3, L<=2): {tl_fail:?}"
        ),
    )
}

// 6. Linear RNNs compute affine maps; tanh controls do not.
fn linearity() -> Outcome {
    let root = Rng::new(606);
    let mut worst = 0.0_f64;
    let mut fails = 0;
    let mut control_min = f64::INFINITY;
    let mut controls_rejected = 0;
    for i in 0..100 {
        let mut rng = root.substream(i);
        let (l, n, d) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3));
        let m = random_linear(&mut rng, Family::Rnn, l, n, d, 0);
        let c = check_affine(&m, 1 + rng.below(6), 4, 1e-10, i).unwrap();
        worst = worst.max(c.residual);
        fails += usize::from(!c.passed);
        let tanh = m.with_activation(Activation::recurrent(ActivationKind::Tanh));
        controls_rejected += usize::from(check_affine(&tanh, 4, 4, 1e-10, i).is_err());
        control_min = control_min.min(affine_deviation(&tanh, 4, 4, i).unwrap());
    }
    outcome(
        fails == 0 && controls_rejected == 100 && control_min > 1e-6,
        format!(
            "100 models, worst affine defect {worst:.2e} (tol 1e-10); tanh controls rejected {controls_rejected}/100, smallest control defect {control_min:.2e}"
        ),
    )
}

// 7. CP rank bounds the image dimension of the first state.
fn cp_rank() -> Outcome {
    let root = Rng::new(707);
    let mut over = Vec::new();
    for i in 0..100 {
        let mut rng = root.substream(i);
        let (n, d, r, l) = (1 + rng.below(5), 1 + rng.below(5), rng.below(5), 1 + rng.below(3));
        let m = random_linear(&mut rng, Family::CpBilinear, l, n, d, r);
        let k = jacobian_rank_h1(&m, &rng.normal_vector(d), 1e-6).unwrap();
        if k > r {
            over.push((n, d, r, l, k));
        }
    }
    let mut rng = root.substream(1000);
    let mut witness_bad = Vec::new();
    let mut witnesses = 0;
    for r in 0..=4 {
        for l in 1..=3 {
            for (n, d) in [(5, 5), (r.max(1), 5), (5, r.max(1))] {
                let w = build_cp_witness(n, d, r, l).unwrap();
                let x1 = Vector::new(rng.normal_vec(d)).unwrap();
                let k = jacobian_rank_h1(&w, &x1, 1e-6).unwrap();
                witnesses += 1;
                if k != r {
                    witness_bad.push((n, d, r, l, k));
                }
            }
        }
    }
    outcome(
        over.is_empty() && witness_bad.is_empty(),
        format!("100 random nets above R: {over:?}; {witnesses} witnesses not equal to R: {witness_bad:?}"),
    )
}

/// Central differences of the forward loss for every trainable entry.
fn finite_difference_grad(p: &ModelParams, batch: &SequenceBatch, h: f64) -> Vec<f64> {
    let mut probe = p.clone();
    let sizes: Vec<(bool, usize)> = p.param_slices().iter().map(|s| (p.is_trainable(s.kind, false), s.data.len())).collect();
    let mut out = Vec::new();
    for (si, &(trainable, len)) in sizes.iter().enumerate() {
        for k in 0..len {
            if !trainable {
                out.push(0.0);
                continue;
            }
            let orig = probe.param_slices()[si].data[k];
            probe.param_slices_mut()[si].data[k] = orig + h;
            let lp = mse(&probe, batch, false).unwrap();
            probe.param_slices_mut()[si].data[k] = orig - h;
            let lm = mse(&probe, batch, false).unwrap();
            probe.param_slices_mut()[si].data[k] = orig;
            out.push((lp - lm) / (2.0 * h));
        }
    }
    out
}

// 8. BPTT against central differences.
fn gradients() -> Outcome {
    let families = [Family::Rnn, Family::SecondOrder, Family::Bilinear, Family::Cp, Family::CpBilinear];
    let placements = [Placement::Recurrent, Placement::DepthOnly];
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut configs = 0;
    for (fi, &family) in families.iter().enumerate() {
        for (pi, &placement) in placements.iter().enumerate() {
            let key = format!("{}/{:?}", family.name(), placement);
            for c in 0..25u64 {
                let mut rng = Rng::new(8000 + (fi * 2 + pi) as u64 * 100 + c);
                let (n, l, t, r, d) = (1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3));
                let act = Activation { kind: ActivationKind::Tanh, placement };
                let cfg = ModelConfig::new(family, l, n, d).with_rank(r).with_activation(act).with_readout(d);
                let p = ModelParams::random_with_scale(cfg, &mut rng, 0.7).unwrap();
                let task = TaskSpec::sinus().with_dims(d, t).with_sizes(3, 1, 1).with_seed(c);
                let batch = generate(&task).unwrap().train;
                let (loss, g) = backward(&p, &batch, BackwardOptions::default()).unwrap();
                let fd = finite_difference_grad(&p, &batch, 1e-6);
                let floor = 1e-4 * loss.max(1.0);
                let e = g
                    .to_flat()
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
                    .fold(0.0, f64::max);
                let w = worst.entry(key.clone()).or_insert(0.0);
                *w = w.max(e);
                configs += 1;
            }
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    outcome(max < 1e-5, format!("{configs} configs, max rel err {max:.2e} (need < 1e-5): {}", summary.join(", ")))
}

fn copy_sweep() -> SweepResult {
    let task = TaskSpec::copy().with_dims(1, 16).with_lag(8);
    let grid = Grid {
        depths: vec![1, 2, 4],
        widths: (2..=10).collect(),
        widths_by_depth: BTreeMap::from([(2, (2..=6).collect()), (4, (2..=4).collect())]),
        families: vec![Family::Rnn],
        activations: vec![Activation::LINEAR],
    };
    let mut cfg = SweepConfig::new(task, grid);
    cfg.train.lr = 1e-2;
    cfg.train.target_loss = Some(1e-4);
    sweep(&cfg).unwrap()
}

fn parity_run(placement: Placement) -> RunRecord {
    let task = TaskSpec::parity();
    let act = Activation { kind: ActivationKind::Tanh, placement };
    let model = ModelConfig::new(Family::Rnn, 1, 16, task.d).with_activation(act).with_readout(task.d);
    let mut cfg = RunConfig::new(task, model);
    // Parity progress comes in steps separated by long plateaus, hence the
    // longer patience; clipping tames the loss spikes between steps.
    cfg.train.lr = 2e-3;
    cfg.train.batch_size = 32;
    cfg.train.clip = Some(1.0);
    cfg.train.patience = 400;
    cfg.train.target_loss = Some(1e-3);
    run(&cfg).unwrap()
}

// 9. Depth/width trends from training.
fn trends(suite: &mut Suite) {
    let start = Instant::now();
    let res = copy_sweep();
    let sweep_time = start.elapsed();
    let minimal = res.minimal_solving_width(Family::Rnn, Placement::Recurrent);
    let widths: Vec<Option<usize>> = [1, 2, 4].iter().map(|l| minimal.get(l).copied().flatten()).collect();
    let non_increasing = widths.iter().all(Option::is_some) && widths.windows(2).all(|w| w[1] <= w[0]);
    suite.report(
        "9a",
        "minimal solving width non-increasing in depth (copy p=8)",
        Duration::from_secs(7200),
        sweep_time,
        outcome(non_increasing, format!("minimal n for L=1,2,4: {widths:?} (MSE < 1e-3 on all 3 seeds)")),
    );

    let mut by_units: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for c in &res.cells {
        by_units.entry(c.units).or_default().push((c.depth, c.metric_mean));
    }
    let mut compared = Vec::new();
    let mut ok = true;
    for (units, cells) in &by_units {
        let Some(&(_, shallow)) = cells.iter().find(|(l, _)| *l == 1) else { continue };
        for &(l, deep) in cells.iter().filter(|(l, _)| *l > 1) {
            ok &= shallow <= deep + 1e-3;
            compared.push(format!("{units}u L1 {shallow:.1e} vs L{l} {deep:.1e}"));
        }
    }
    ok &= !compared.is_empty();
    suite.report(
        "9b",
        "depth 1 wins or ties at fixed units n*L (tol 1e-3)",
        Duration::from_secs(7200),
        sweep_time,
        outcome(ok, compared.join("; ")),
    );

    let start = Instant::now();
    let rec = parity_run(Placement::Recurrent);
    let depth_only = parity_run(Placement::DepthOnly);
    let parity_time = start.elapsed();
    let seeds = |r: &RunRecord| r.seeds.iter().map(|s| format!("{:.1e}", s.test_loss)).collect::<Vec<_>>().join(",");
    let ok = rec.aggregate.completed == 3
        && rec.aggregate.test_mean < 1e-2
        && depth_only.aggregate.completed == 3
        && depth_only.seeds.iter().all(|s| s.test_loss > 0.5);
    suite.report(
        "9c",
        "parity n=16 L=1: recurrent tanh < 1e-2, depth-only tanh > 0.5",
        Duration::from_secs(7200),
        parity_time,
        outcome(
            ok,
            format!(
                "recurrent mean {:.2e} (seeds {}), depth-only min {:.3} (seeds {})",
                rec.aggregate.test_mean,
                seeds(&rec),
                depth_only.seeds.iter().map(|s| s.test_loss).fold(f64::INFINITY, f64::min),
                seeds(&depth_only)
            ),
        ),
    );
    let total = sweep_time + parity_time;
    suite.report(
        "9",
        "experimental trends total runtime",
        Duration::from_secs(7200),
        total,
        outcome(true, format!("{} training runs", res.records.len() + 2)),
    );
}

// 10. Repeated runs give bit-identical records.
fn determinism() -> Outcome {
    let mut cfg = copy_config(3, 2, vec![4, 5]);
    cfg.task = cfg.task.with_sizes(300, 100, 100);
    cfg.train.max_epochs = 30;
    cfg.train.patience = 10;
    let a = run(&cfg).unwrap().to_json().unwrap();
    let b = run(&cfg).unwrap().to_json().unwrap();
    outcome(a == b, format!("two runs of config {}: {} bytes each, identical {}", cfg.hash(), a.len(), a == b))
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| only.is_empty() || only.iter().any(|o| o == id);
    let mut suite = Suite { unexpected: Vec::new() };
    if wanted("1") {
        suite.check("1", "copier construction exactness", 5, copier_exactness);
    }
    if wanted("2") {
        suite.check("2", "memory bound under training (n=2, L=1)", 600, memory_bound_training);
    }
    if wanted("3") {
        suite.check("3", "parameter crossover", 1, crossover);
    }
    if wanted("4") {
        suite.check("4", "flattening equivalence", 10, flattening);
    }
    if wanted("5") {
        suite.check("5", "degree growth", 30, degree_growth);
    }
    if wanted("6") {
        suite.check("6", "linearity of linear RNNs", 10, linearity);
    }
    if wanted("7") {
        suite.check("7", "CP rank bound", 30, cp_rank);
    }
    if wanted("8") {
        suite.check("8", "BPTT gradient correctness", 60, gradients);
    }
    if wanted("9") {
        trends(&mut suite);
    }
    if wanted("10") {
        suite.check("10", "determinism of repeated runs", 60, determinism);
    }
    if !suite.unexpected.is_empty() {
        println!("unexpected failures: {:?}", suite.unexpected);
        std::process::exit(1);
    }
}
