//! Black-box numerical checks on trained or constructed models: affinity of
//! linear RNNs, polynomial degree along a line, Jacobian rank of the first
//! state, and equality of hidden states between two models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::models::{forward, Family, ModelParams};
use crate::numkit::{rank, Matrix, Rng, Vector};
use crate::tasks::SequenceBatch;

/// Outcome of a pass/fail check with its worst observed residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub passed: bool,
    pub residual: f64,
}

/// JSON verdict record for one claim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub params_hash: String,
    pub passed: bool,
    pub residuals: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn new(claim: impl Into<String>, params_hash: impl Into<String>) -> Self {
        Self {
            claim: claim.into(),
            params_hash: params_hash.into(),
            passed: true,
            residuals: BTreeMap::new(),
        }
    }

    /// Records a residual and folds `ok` into the verdict.
    pub fn record(&mut self, name: impl Into<String>, residual: f64, ok: bool) {
        self.residuals.insert(name.into(), residual);
        self.passed &= ok;
    }
}

fn single(input: Vec<f64>, steps: usize, d: usize) -> Result<SequenceBatch> {
    SequenceBatch::new(1, steps, d, 0, input, Vec::new(), vec![false; steps])
}

/// All hidden states of a single input sequence `[t][d]`, flattened `[t][l][n]`.
pub fn hidden_states(model: &ModelParams, input: &[f64], steps: usize) -> Result<Vec<f64>> {
    let x = single(input.to_vec(), steps, model.input_dim())?;
    Ok(forward(model, &x)?.sequence_states(0).to_vec())
}

/// Maximum superposition defect of `g(x) = trace(x) − trace(0)` over
/// `trials` random `(x, y, α, β)`: `max |g(αx + βy) − αg(x) − βg(y)|`.
/// Works on any model; nonlinear models give large values.
pub fn affine_deviation(model: &ModelParams, steps: usize, trials: usize, seed: u64) -> Result<f64> {
    let len = steps * model.input_dim();
    let g0 = hidden_states(model, &vec![0.0; len], steps)?;
    let g = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(hidden_states(model, x, steps)?.iter().zip(&g0).map(|(a, b)| a - b).collect())
    };
    let root = Rng::new(seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let mut rng = root.substream(trial as u64);
        let x = rng.normal_vec(len);
        let y = rng.normal_vec(len);
        let (alpha, beta) = (rng.normal(), rng.normal());
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let (gx, gy, gm) = (g(&x)?, g(&y)?, g(&mix)?);
        for ((m, a), b) in gm.iter().zip(&gx).zip(&gy) {
            worst = worst.max((m - alpha * a - beta * b).abs());
        }
    }
    Ok(worst)
}

/// Affine superposition check for linear first-order RNNs: biases and
/// initial states make the input-to-state map affine, so the zero-input
/// response is subtracted before testing linearity.
pub fn check_affine(model: &ModelParams, steps: usize, trials: usize, tol: f64, seed: u64) -> Result<Check> {
    let cfg = model.config();
    if cfg.family != Family::Rnn || !cfg.activation.is_linear() {
        return Err(Error::Unsupported {
            operation: "check_affine",
            reason: "requires a linear first-order RNN".into(),
        });
    }
    let residual = affine_deviation(model, steps, trials, seed)?;
    Ok(Check { passed: residual < tol, residual })
}

/// Degree estimate of a vector-valued function restricted to a line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    /// Direction `v` of the probe line `x⁰ + s v`, flattened `[t][d]`.
    pub direction: Vec<f64>,
    /// Base point `x⁰`, flattened `[t][d]`.
    pub probe_point: Vec<f64>,
    /// Smallest degree explaining the samples; `None` means "> max_deg".
    pub estimated_degree: Option<usize>,
    pub max_deg: usize,
    /// Largest Chebyshev coefficient above the estimated degree, relative
    /// to the largest coefficient overall.
    pub residual: f64,
}

impl DegreeReport {
    pub fn describe(&self) -> String {
        match self.estimated_degree {
            Some(k) => k.to_string(),
            None => format!(">{}", self.max_deg),
        }
    }
}

/// Restricts `f` to `x⁰ + s v`, interpolates at `max_deg + 2` Chebyshev
/// nodes on `s ∈ [−1, 1]` and returns the smallest `k` such that every
/// Chebyshev coefficient of order `> k`, across all output coordinates, is
/// below `tol` times the largest coefficient.
pub fn estimate_degree_along<F>(f: F, base: &[f64], direction: &[f64], max_deg: usize, tol: f64) -> Result<DegreeReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if base.len() != direction.len() {
        return Err(mismatch("degree probe direction", base.len(), direction.len()));
    }
    let nodes = max_deg + 2;
    let s: Vec<f64> = (0..nodes)
        .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / nodes as f64).cos())
        .collect();
    let mut samples = Vec::with_capacity(nodes);
    for &si in &s {
        let x: Vec<f64> = base.iter().zip(direction).map(|(a, v)| a + si * v).collect();
        samples.push(f(&x)?);
    }
    let width = samples[0].len();
    // coeffs[k][c]: Chebyshev coefficient k of output coordinate c.
    let mut coeffs = vec![vec![0.0; width]; nodes];
    for (k, ck) in coeffs.iter_mut().enumerate() {
        let norm = if k == 0 { 1.0 } else { 2.0 } / nodes as f64;
        for (i, y) in samples.iter().enumerate() {
            let tk = (k as f64 * (std::f64::consts::PI * (i as f64 + 0.5) / nodes as f64)).cos();
            for (c, v) in ck.iter_mut().zip(y) {
                *c += norm * tk * v;
            }
        }
    }
    let level: Vec<f64> = coeffs.iter().map(|ck| ck.iter().fold(0.0_f64, |m, v| m.max(v.abs()))).collect();
    let scale = level.iter().cloned().fold(0.0_f64, f64::max);
    let rel = |k: usize| if scale == 0.0 { 0.0 } else { level[k] / scale };
    // tail[k] = max relative coefficient of order > k.
    let mut estimated = None;
    let mut residual = rel(nodes - 1);
    for k in 0..nodes - 1 {
        let tail = (k + 1..nodes).map(rel).fold(0.0_f64, f64::max);
        if tail < tol {
            estimated = Some(k);
            residual = tail;
            break;
        }
    }
    Ok(DegreeReport {
        direction: direction.to_vec(),
        probe_point: base.to_vec(),
        estimated_degree: estimated,
        max_deg,
        residual,
    })
}

/// `h_t^{(l)}` as a function of the flattened input sequence.
pub fn state_fn(model: &ModelParams, steps: usize, t: usize, l: usize) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
    move |x: &[f64]| {
        let batch = single(x.to_vec(), steps, model.input_dim())?;
        Ok(forward(model, &batch)?.state(0, t, l).to_vec())
    }
}

/// Degree of `f` in input `x_{which}` (1-based) along a random direction
/// from a random base point.
pub fn estimate_degree<F>(
    f: F,
    which_input: usize,
    steps: usize,
    d: usize,
    max_deg: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<DegreeReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if which_input == 0 || which_input > steps {
        return Err(Error::InvalidArgument(format!("probe input {which_input} outside 1..={steps}")));
    }
    let base = rng.normal_vec(steps * d);
    let mut direction = vec![0.0; steps * d];
    let off = (which_input - 1) * d;
    direction[off..off + d].copy_from_slice(&rng.normal_vec(d));
    estimate_degree_along(f, &base, &direction, max_deg, tol)
}

fn require_linear_bilinear(model: &ModelParams, op: &'static str) -> Result<()> {
    let cfg = model.config();
    if !cfg.family.bilinear_only() || !cfg.activation.is_linear() {
        return Err(Error::Unsupported {
            operation: op,
            reason: format!("requires a linear bilinear-only model, got {}", cfg.family.name()),
        });
    }
    Ok(())
}

/// Moves every input jointly along a random line and checks that the degree
/// of `h_T^{(L)}` is at most `T^L`.
pub fn check_degree_bound_tl(model: &ModelParams, steps: usize, tol: f64, seed: u64) -> Result<(Check, DegreeReport)> {
    require_linear_bilinear(model, "check_degree_bound_tl")?;
    let bound = steps.pow(model.depth() as u32);
    let mut rng = Rng::new(seed);
    let len = steps * model.input_dim();
    let base = rng.normal_vec(len);
    let direction = rng.normal_vec(len);
    let f = state_fn(model, steps, steps, model.depth());
    let report = estimate_degree_along(f, &base, &direction, bound, tol)?;
    let passed = report.estimated_degree.is_some_and(|k| k <= bound);
    Ok((Check { passed, residual: report.residual }, report))
}

/// Central-difference Jacobian of `h_1^{(L)}` with respect to `x_1` (an
/// `n × d` matrix), step `1e-6 · max(1, |x_k|)` per coordinate.
pub fn jacobian_h1(model: &ModelParams, x1: &Vector) -> Result<Matrix> {
    let d = model.input_dim();
    if x1.dim() != d {
        return Err(mismatch("jacobian probe x1", d, x1.dim()));
    }
    let f = state_fn(model, 1, 1, model.depth());
    let n = model.hidden();
    let mut jac = Matrix::zeros(n, d);
    for k in 0..d {
        let h = 1e-6 * x1[k].abs().max(1.0);
        let mut plus = x1.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[k] += h;
        minus[k] -= h;
        let (fp, fm) = (f(&plus)?, f(&minus)?);
        for i in 0..n {
            jac.set(i, k, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    Ok(jac)
}

/// Numerical rank of the Jacobian of `x_1 ↦ h_1^{(L)}` for a CP model.
pub fn jacobian_rank_h1(model: &ModelParams, x1: &Vector, tol: f64) -> Result<usize> {
    if !model.family().has_cp() {
        return Err(Error::Unsupported {
            operation: "jacobian_rank_h1",
            reason: format!("requires CP factors, got {}", model.family().name()),
        });
    }
    rank(&jacobian_h1(model, x1)?, tol)
}

/// Checks that the single-layer `shallow` model's state equals the stacked
/// states of `deep` on `trials` random sequences of length `steps`. The
/// residual is the largest difference relative to `max(1, max |h|)`.
pub fn check_concat_equiv(
    deep: &ModelParams,
    shallow: &ModelParams,
    steps: usize,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<Check> {
    let wide = deep.hidden() * deep.depth();
    if shallow.hidden() != wide || shallow.depth() != 1 {
        return Err(mismatch(
            "shallow model",
            format!("1 layer of width {wide}"),
            format!("{} layers of width {}", shallow.depth(), shallow.hidden()),
        ));
    }
    if shallow.input_dim() != deep.input_dim() {
        return Err(mismatch("shallow input dim", deep.input_dim(), shallow.input_dim()));
    }
    let root = Rng::new(seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let x = root.substream(trial as u64).normal_vec(steps * deep.input_dim());
        // Deep states are already laid out [t][l][n], i.e. stacked per step.
        let a = hidden_states(deep, &x, steps)?;
        let b = hidden_states(shallow, &x, steps)?;
        let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let diff = a.iter().zip(&b).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(Check { passed: worst < tol, residual: worst })
}
