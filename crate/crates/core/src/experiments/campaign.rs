use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{forward, unroll_closed_form, Activation, ActivationKind, Family, ModelConfig, ModelParams};
use crate::numkit::Rng;
use crate::oracles::{
    affine_deviation, check_affine, check_concat_equiv, check_degree_bound_tl, estimate_degree, jacobian_rank_h1,
    state_fn, Verdict,
};
use crate::tasks::{generate, SequenceBatch, TaskSpec};
use crate::theory::{
    build_copier, build_cp_witness, build_diag_power, build_flattened, build_parity, copy_reference, critical_n,
    critical_n_max, crossover_table, crossover_violations, memory_bound, param_count, param_count_with_initial,
    read_out, CopierSpec,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignOptions {
    /// Perturb the copier's recurrent weights before checking it.
    pub mutate_copier: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub all_passed: bool,
    pub verdicts: Vec<Verdict>,
}

impl CampaignReport {
    pub fn failed(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hash over the concatenated JSON of every model a verdict looked at.
fn bundle_hash(models: &[ModelParams]) -> String {
    let mut bytes = Vec::new();
    for m in models {
        bytes.extend_from_slice(m.content_hash().as_bytes());
    }
    crate::hash_hex(&bytes)
}

fn random_linear(rng: &mut Rng, family: Family, depth: usize, n: usize, d: usize, rank: usize) -> Result<ModelParams> {
    let mut cfg = ModelConfig::new(family, depth, n, d);
    if family.has_cp() {
        cfg = cfg.with_rank(rank);
    }
    let mut p = ModelParams::random(cfg, rng)?;
    for l in 0..depth {
        p.layer_mut(l).h0 = rng.normal_vector(n);
    }
    Ok(p)
}

fn scalar_batch(values: Vec<f64>, steps: usize) -> Result<SequenceBatch> {
    let batch = values.len() / steps;
    SequenceBatch::new(batch, steps, 1, 0, values, Vec::new(), vec![false; batch * steps])
}

fn copier_verdict(opts: &CampaignOptions) -> Result<Verdict> {
    const STEPS: usize = 32;
    let mut rng = Rng::new(opts.seed).substream(0);
    let mut models = Vec::new();
    let (mut int_err, mut gauss_mse) = (0.0_f64, 0.0_f64);
    for n in 2..=5 {
        for p in 1..=3 * (n - 1) {
            let (mut model, w) = build_copier(n, p)?;
            if opts.mutate_copier {
                let v = &mut model.layer_mut(0).v;
                v.set(0, 0, v.get(0, 0) + 1e-3);
            }
            let ints: Vec<f64> = (0..STEPS).map(|_| rng.below(21) as f64 - 10.0).collect();
            let gauss = rng.normal_vec(STEPS);
            for (xs, is_int) in [(ints, true), (gauss, false)] {
                let out = read_out(&forward(&model, &scalar_batch(xs.clone(), STEPS)?)?, &w)?;
                let want = copy_reference(&xs, p);
                let sq: Vec<f64> = out.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).collect();
                if is_int {
                    int_err = sq.iter().fold(int_err, |m, &e| m.max(e.sqrt()));
                } else {
                    gauss_mse = gauss_mse.max(sq.iter().sum::<f64>() / STEPS as f64);
                }
            }
            models.push(model);
        }
    }
    let mut v = Verdict::new("copier_reproduces_lag_copy", bundle_hash(&models));
    v.record("max_abs_err_integer_inputs", int_err, int_err == 0.0);
    v.record("max_mse_gaussian_inputs", gauss_mse, gauss_mse < 1e-24);
    Ok(v)
}

fn memory_bound_verdict() -> Result<Verdict> {
    let mut v = Verdict::new("copier_depth_meets_memory_bound", String::new());
    let mut worst = 0.0_f64;
    let mut ok = true;
    for n in 2..=8 {
        for p in 1..=4 * (n - 1) {
            let spec = CopierSpec::new(n, p)?;
            // The construction uses the least depth the bound allows.
            let fits = p <= memory_bound(n, spec.depth) && p > memory_bound(n, spec.depth - 1);
            let (model, _) = build_copier(n, p)?;
            ok &= fits && model.depth() == spec.depth && (1..=n).contains(&spec.readout_index);
            worst = worst.max((memory_bound(n, spec.depth) - p) as f64);
        }
    }
    v.record("max_unused_slots", worst, ok);
    Ok(v)
}

fn flattening_verdict(seed: u64) -> Result<Verdict> {
    let root = Rng::new(seed).substream(1);
    let mut worst = 0.0_f64;
    let mut models = Vec::new();
    for trial in 0..20 {
        let mut rng = root.substream(trial);
        let (depth, n, d, steps) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(8));
        let deep = random_linear(&mut rng, Family::Rnn, depth, n, d, 0)?;
        let shallow = build_flattened(&deep)?;
        worst = worst.max(check_concat_equiv(&deep, &shallow, steps, 3, 1e-12, trial)?.residual);
        models.push(deep);
    }
    let mut v = Verdict::new("flattened_model_stacks_deep_states", bundle_hash(&models));
    v.record("max_rel_err", worst, worst < 1e-12);
    Ok(v)
}

fn diag_degree_verdict(seed: u64) -> Result<Verdict> {
    let mut rng = Rng::new(seed).substream(2);
    let mut models = Vec::new();
    let mut v = Verdict::new("diag_power_degree_equals_depth", String::new());
    for depth in 1..=4 {
        let model = build_diag_power(3, 3, depth)?;
        let r = estimate_degree(state_fn(&model, 2, 2, depth), 1, 2, 3, 8, 1e-6, &mut rng)?;
        let got = r.estimated_degree.map_or(f64::INFINITY, |k| k as f64);
        v.record(format!("degree_L{depth}"), got, r.estimated_degree == Some(depth));
        models.push(model);
    }
    v.params_hash = bundle_hash(&models);
    Ok(v)
}

fn degree_tl_verdict(seed: u64) -> Result<Verdict> {
    let root = Rng::new(seed).substream(3);
    let mut models = Vec::new();
    let mut v = Verdict::new("bilinear_degree_at_most_t_pow_l", String::new());
    let mut worst_excess = f64::NEG_INFINITY;
    let mut ok = true;
    for steps in 1..=3 {
        for depth in 1..=2 {
            let mut rng = root.substream((steps * 10 + depth) as u64);
            let model = ModelParams::random(ModelConfig::new(Family::Bilinear, depth, 2, 2), &mut rng)?;
            let (check, report) = check_degree_bound_tl(&model, steps, 1e-6, rng.next_u64())?;
            ok &= check.passed;
            let k = report.estimated_degree.map_or(f64::INFINITY, |k| k as f64);
            worst_excess = worst_excess.max(k - steps.pow(depth as u32) as f64);
            models.push(model);
        }
    }
    v.record("max_degree_minus_bound", worst_excess, ok);
    v.params_hash = bundle_hash(&models);
    Ok(v)
}

fn affine_verdict(seed: u64) -> Result<Verdict> {
    let root = Rng::new(seed).substream(4);
    let mut worst = 0.0_f64;
    let mut control = f64::INFINITY;
    let mut models = Vec::new();
    for trial in 0..20 {
        let mut rng = root.substream(trial);
        let (depth, n, d) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(3));
        let model = random_linear(&mut rng, Family::Rnn, depth, n, d, 0)?;
        worst = worst.max(check_affine(&model, 4, 5, 1e-10, trial)?.residual);
        let tanh = model.clone().with_activation(Activation::recurrent(ActivationKind::Tanh));
        control = control.min(affine_deviation(&tanh, 4, 5, trial)?);
        models.push(model);
    }
    let mut v = Verdict::new("linear_rnn_is_affine", bundle_hash(&models));
    v.record("max_affine_defect", worst, worst < 1e-10);
    v.record("min_tanh_control_defect", control, control > 1e-6);
    Ok(v)
}

fn cp_rank_verdict(seed: u64) -> Result<Verdict> {
    let root = Rng::new(seed).substream(5);
    let mut models = Vec::new();
    let mut v = Verdict::new("cp_first_state_rank_at_most_r", String::new());
    let mut worst_excess = f64::NEG_INFINITY;
    for trial in 0..20 {
        let mut rng = root.substream(trial);
        let (n, d, rank, depth) = (1 + rng.below(5), 1 + rng.below(5), rng.below(5), 1 + rng.below(3));
        let model = random_linear(&mut rng, Family::CpBilinear, depth, n, d, rank)?;
        let r = jacobian_rank_h1(&model, &rng.normal_vector(d), 1e-6)?;
        worst_excess = worst_excess.max(r as f64 - rank as f64);
        models.push(model);
    }
    v.record("max_rank_minus_r", worst_excess, worst_excess <= 0.0);
    let mut rng = root.substream(1000);
    let mut witness_gap = 0.0_f64;
    for (n, d, rank, depth) in [(4, 4, 2, 1), (5, 4, 4, 2), (3, 5, 3, 3), (5, 5, 1, 2)] {
        let w = build_cp_witness(n, d, rank, depth)?;
        let r = jacobian_rank_h1(&w, &rng.normal_vector(d), 1e-6)?;
        witness_gap = witness_gap.max((r as f64 - rank as f64).abs());
        models.push(w);
    }
    v.record("witness_rank_gap", witness_gap, witness_gap == 0.0);
    v.params_hash = bundle_hash(&models);
    Ok(v)
}

fn parity_verdict(seed: u64) -> Result<Verdict> {
    let spec = TaskSpec::parity().with_sizes(1, 1, 64).with_seed(seed);
    let data = generate(&spec)?;
    let model = build_parity(spec.d)?;
    let out = forward(&model, &data.test)?;
    let err = out.outputs().iter().zip(data.test.targets()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let mut v = Verdict::new("parity_network_tracks_sign_product", model.content_hash());
    v.record("max_abs_err", err, err == 0.0);
    Ok(v)
}

fn crossover_verdict() -> Result<Verdict> {
    let rows = crossover_table(12, 5)?;
    let violations = crossover_violations(&rows);
    let min_delta = rows.iter().filter(|r| r.n >= 4).map(|r| r.delta).min().unwrap_or(i64::MAX);
    let small = rows.iter().find(|r| (r.n, r.depth, r.shallow_depth) == (3, 2, 1));
    let crit = critical_n(2, 1)?;
    let crit_err = (crit - (3.0 + 13f64.sqrt()) / 2.0).abs();
    let (_, _, crit_max) = critical_n_max(5)?;
    let mut v = Verdict::new("shallow_copier_costs_more_params_for_n_ge_4", String::new());
    v.record("violations_n4_to_12", violations.len() as f64, violations.is_empty());
    v.record("min_delta_n4_to_12", min_delta as f64, min_delta > 0);
    v.record(
        "delta_n3_L2_Lt1",
        small.map_or(f64::NAN, |r| r.delta as f64),
        small.is_some_and(|r| (r.params_shallow, r.params_deep, r.delta) == (35, 36, -1)),
    );
    v.record("critical_n_2_1_err", crit_err, crit_err < 1e-12);
    v.record("max_critical_n_L_le_5", crit_max, crit_max < 4.0);
    Ok(v)
}

fn unroll_verdict(seed: u64) -> Result<Verdict> {
    let root = Rng::new(seed).substream(6);
    let mut models = Vec::new();
    let mut worst = 0.0_f64;
    let families = [Family::Rnn, Family::SecondOrder, Family::Bilinear, Family::Cp, Family::CpBilinear];
    for (i, &family) in families.iter().enumerate() {
        let mut rng = root.substream(i as u64);
        let (depth, n, d, steps) = (2, 3, 2, 4);
        let model = random_linear(&mut rng, family, depth, n, d, 2)?;
        let x = SequenceBatch::new(2, steps, d, 0, rng.normal_vec(2 * steps * d), Vec::new(), vec![false; 2 * steps])?;
        let trace = forward(&model, &x)?;
        for seq in 0..2 {
            for t in 1..=steps {
                for l in 1..=depth {
                    let got = unroll_closed_form(&model, &x, seq, t, l)?;
                    let want = trace.state(seq, t, l);
                    let scale = want.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                    let diff = got.as_slice().iter().zip(want).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    worst = worst.max(diff / scale);
                }
            }
        }
        models.push(model);
    }
    let mut v = Verdict::new("unrolled_state_matches_recurrence", bundle_hash(&models));
    v.record("max_rel_err", worst, worst < 1e-10);
    Ok(v)
}

fn param_count_verdict() -> Result<Verdict> {
    let mut v = Verdict::new("param_count_formula_matches_model", String::new());
    let mut worst = 0.0_f64;
    for n in 1..=8 {
        for depth in 1..=5 {
            let p = ModelParams::zeros(ModelConfig::linear_rnn(depth, n, 1))?;
            let a = (p.count_parameters(false) as f64 - param_count(n, depth) as f64).abs();
            let b = (p.count_parameters(true) as f64 - param_count_with_initial(n, depth) as f64).abs();
            worst = worst.max(a).max(b);
        }
    }
    v.record("max_count_gap", worst, worst == 0.0);
    Ok(v)
}

/// Runs every construction against its oracle, plus the crossover scan.
/// Mutating the copier only affects the copier verdict.
pub fn verify_campaign(opts: &CampaignOptions) -> Result<CampaignReport> {
    let seed = opts.seed;
    let verdicts = vec![
        copier_verdict(opts)?,
        memory_bound_verdict()?,
        flattening_verdict(seed)?,
        diag_degree_verdict(seed)?,
        degree_tl_verdict(seed)?,
        affine_verdict(seed)?,
        cp_rank_verdict(seed)?,
        parity_verdict(seed)?,
        crossover_verdict()?,
        unroll_verdict(seed)?,
        param_count_verdict()?,
    ];
    let all_passed = verdicts.iter().all(|v| v.passed);
    Ok(CampaignReport { all_passed, verdicts })
}
