//! Mean squared error, backpropagation through time and Adam.
//!
//! The backward pass walks time and depth in reverse. With `gz` the
//! gradient at the pre-activation of layer `l` at time `t`:
//!
//! * first-order terms: `dU += gz uᵀ`, `dV += gz hᵀ`, `db += gz`, and the
//!   input and previous state receive `Uᵀgz` and `Vᵀgz`;
//! * full tensor: `dA[i,j,k] += h_i u_j gz_k`, the previous state receives
//!   `Σ_{j,k} A[i,j,k] u_j gz_k` and the input `Σ_{i,k} A[i,j,k] h_i gz_k`;
//! * CP factors, with `s = Aᵀh`, `q = Bᵀu`, `g = Cᵀgz`:
//!   `dC += gz (s⊙q)ᵀ`, `dA += h (g⊙q)ᵀ`, `dB += u (g⊙s)ᵀ`, the previous
//!   state receives `A(g⊙q)` and the input `B(g⊙s)`.
//!
//! Under recurrent placement `gz = gh ⊙ σ'(z)`; under depth-only placement
//! `gz = gh` and the factor `σ'` is applied on the way down to the layer
//! below instead.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::models::{forward_sequence, ActivationKind, HiddenTrace, LayerParams, ModelParams, ParamSlice, Placement, Scratch};
use crate::numkit::{dot, gemv_acc, gemv_t_acc, ger, Matrix};
use crate::tasks::SequenceBatch;

/// Gradients with the same block structure as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    inner: ModelParams,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            inner: ModelParams::zeros(p.config().clone()).expect("config of a valid model"),
        }
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        self.inner.layer(l)
    }

    pub fn readout(&self) -> Option<&Matrix> {
        self.inner.readout()
    }

    /// Blocks in the same order as [`ModelParams::param_slices`].
    pub fn slices(&self) -> Vec<ParamSlice<'_>> {
        self.inner.param_slices()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.data.iter().copied()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.inner.param_slices_mut() {
            for g in s.data.iter_mut() {
                *g *= c;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for s in self.slices() {
            if s.data.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: s.layer + 1, param: s.kind.name() });
            }
        }
        Ok(())
    }
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = g.norm();
    if norm > max_norm && norm > 0.0 {
        g.scale(max_norm / norm);
    }
    norm
}

fn loss_count(targets: &SequenceBatch, masked: bool) -> usize {
    let steps = if masked {
        (0..targets.batch())
            .map(|s| targets.padded_flags(s).iter().filter(|p| !**p).count())
            .sum()
    } else {
        targets.batch() * targets.steps()
    };
    steps * targets.target_dim()
}

/// Mean squared error between the trace outputs (optionally passed through
/// an extra linear `head`) and the targets. With `masked`, time steps in the
/// zero-filled prefix are left out of both sum and count.
pub fn loss_mse(trace: &HiddenTrace, targets: &SequenceBatch, head: Option<&Matrix>, masked: bool) -> Result<f64> {
    if trace.batch() != targets.batch() || trace.steps() != targets.steps() {
        return Err(mismatch(
            "loss batch shape",
            format!("{} x {}", trace.batch(), trace.steps()),
            format!("{} x {}", targets.batch(), targets.steps()),
        ));
    }
    let out_dim = head.map_or(trace.output_dim(), |w| w.rows());
    if let Some(w) = head {
        if w.cols() != trace.output_dim() {
            return Err(mismatch("loss head columns", trace.output_dim(), w.cols()));
        }
    }
    if out_dim != targets.target_dim() {
        return Err(mismatch("loss target dim", out_dim, targets.target_dim()));
    }
    let count = loss_count(targets, masked);
    if count == 0 {
        return Ok(0.0);
    }
    let mut y = vec![0.0; out_dim];
    let mut sum = 0.0;
    for seq in 0..trace.batch() {
        for t in 1..=trace.steps() {
            if masked && targets.is_padded(seq, t) {
                continue;
            }
            match head {
                Some(w) => {
                    y.fill(0.0);
                    gemv_acc(w.as_slice(), w.rows(), w.cols(), trace.output(seq, t), &mut y);
                }
                None => y.copy_from_slice(trace.output(seq, t)),
            }
            sum += y.iter().zip(targets.target(seq, t)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardOptions {
    /// Exclude zero-filled prefix steps from the loss.
    pub masked: bool,
    /// Keep initial states fixed (their gradient is reported as zero).
    pub freeze_initial: bool,
}

struct Workspace {
    scratch: Scratch,
    states: Vec<f64>,
    pre: Vec<f64>,
    outputs: Vec<f64>,
    dy: Vec<f64>,
    gh_next: Vec<f64>,
    g_up: Vec<f64>,
    gz: Vec<f64>,
    g_u: Vec<f64>,
    g_hprev: Vec<f64>,
    u: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    q: Vec<f64>,
    gs: Vec<f64>,
    gq: Vec<f64>,
    sq: Vec<f64>,
}

impl Workspace {
    fn new(p: &ModelParams, steps: usize) -> Self {
        let cfg = p.config();
        let (n, depth, r) = (cfg.hidden, cfg.depth, cfg.rank);
        let wide = n.max(cfg.input_dim);
        Self {
            scratch: Scratch::for_model(p),
            states: vec![0.0; steps * depth * n],
            pre: vec![0.0; steps * depth * n],
            outputs: vec![0.0; steps * cfg.output_dim()],
            dy: vec![0.0; steps * cfg.output_dim()],
            gh_next: vec![0.0; depth * n],
            g_up: vec![0.0; n],
            gz: vec![0.0; n],
            g_u: vec![0.0; wide],
            g_hprev: vec![0.0; n],
            u: vec![0.0; wide],
            y: vec![0.0; n],
            s: vec![0.0; r],
            q: vec![0.0; r],
            gs: vec![0.0; r],
            gq: vec![0.0; r],
            sq: vec![0.0; r],
        }
    }
}

fn backward_sequence(p: &ModelParams, x: &[f64], steps: usize, ws: &mut Workspace, grads: &mut ModelParams, freeze_initial: bool) {
    let cfg = p.config();
    let (n, d, depth) = (cfg.hidden, cfg.input_dim, cfg.depth);
    let kind = cfg.activation.kind;
    let placement = cfg.activation.placement;
    let out_dim = cfg.output_dim();
    let top_act = placement == Placement::DepthOnly && cfg.top_activation;
    let bilinear_only = cfg.family.bilinear_only();
    let nonlinear = kind != ActivationKind::Identity;
    let Workspace { states, pre, dy, gh_next, g_up, gz, g_u, g_hprev, u, y, s, q, gs, gq, sq, .. } = ws;
    gh_next.fill(0.0);
    for t in (0..steps).rev() {
        let top = &states[(t * depth + depth - 1) * n..(t * depth + depth) * n];
        let dyt = &dy[t * out_dim..(t + 1) * out_dim];
        match p.readout() {
            Some(w) => {
                for (yk, &h) in y.iter_mut().zip(top) {
                    *yk = if top_act { kind.apply(h) } else { h };
                }
                ger(grads.readout_mut().expect("mirrors params").as_mut_slice(), dyt, y);
                g_up.fill(0.0);
                gemv_t_acc(w.as_slice(), out_dim, n, dyt, g_up);
            }
            None => g_up.copy_from_slice(dyt),
        }
        if top_act {
            for (g, &h) in g_up.iter_mut().zip(top) {
                *g *= kind.derivative(h);
            }
        }
        for l in (0..depth).rev() {
            let cur = (t * depth + l) * n;
            let m = cfg.layer_input_dim(l);
            for k in 0..n {
                gz[k] = g_up[k] + gh_next[l * n + k];
            }
            if placement == Placement::Recurrent && nonlinear {
                for (g, &z) in gz.iter_mut().zip(&pre[cur..cur + n]) {
                    *g *= kind.derivative(z);
                }
            }
            let u = &mut u[..m];
            if l == 0 {
                u.copy_from_slice(&x[t * d..(t + 1) * d]);
            } else {
                let below = &states[cur - n..cur];
                match placement {
                    Placement::Recurrent => u.copy_from_slice(below),
                    Placement::DepthOnly => {
                        for (o, &h) in u.iter_mut().zip(below) {
                            *o = kind.apply(h);
                        }
                    }
                }
            }
            let layer = p.layer(l);
            let h_prev: &[f64] = if t == 0 {
                layer.h0.as_slice()
            } else {
                &states[cur - depth * n..cur - depth * n + n]
            };
            let gl = grads.layer_mut(l);
            let g_u = &mut g_u[..m];
            g_u.fill(0.0);
            g_hprev.fill(0.0);
            if !bilinear_only {
                ger(gl.u.as_mut_slice(), gz, u);
                ger(gl.v.as_mut_slice(), gz, h_prev);
                for (b, g) in gl.b.as_mut_slice().iter_mut().zip(gz.iter()) {
                    *b += g;
                }
                gemv_t_acc(layer.u.as_slice(), n, m, gz, g_u);
                gemv_t_acc(layer.v.as_slice(), n, n, gz, g_hprev);
            }
            if let Some(a) = &layer.tensor {
                let a = a.as_slice();
                let da = gl.tensor.as_mut().expect("mirrors params").as_mut_slice();
                for i in 0..n {
                    for j in 0..m {
                        let off = (i * m + j) * n;
                        let c = h_prev[i] * u[j];
                        if c != 0.0 {
                            for (o, g) in da[off..off + n].iter_mut().zip(gz.iter()) {
                                *o += c * g;
                            }
                        }
                        let ag = dot(&a[off..off + n], gz);
                        g_hprev[i] += u[j] * ag;
                        g_u[j] += h_prev[i] * ag;
                    }
                }
            }
            if let Some(f) = &layer.cp {
                let r = f.rank();
                let df = gl.cp.as_mut().expect("mirrors params");
                s.fill(0.0);
                q.fill(0.0);
                gs.fill(0.0);
                gemv_t_acc(f.a.as_slice(), n, r, h_prev, s);
                gemv_t_acc(f.b.as_slice(), m, r, u, q);
                // gs temporarily holds g = Cᵀ gz.
                gemv_t_acc(f.c.as_slice(), n, r, gz, gs);
                for k in 0..r {
                    sq[k] = s[k] * q[k];
                    gq[k] = gs[k] * q[k];
                    gs[k] *= s[k];
                }
                ger(df.c.as_mut_slice(), gz, sq);
                ger(df.a.as_mut_slice(), h_prev, gq);
                ger(df.b.as_mut_slice(), u, gs);
                gemv_acc(f.a.as_slice(), n, r, gq, g_hprev);
                gemv_acc(f.b.as_slice(), m, r, gs, g_u);
            }
            if t == 0 && !freeze_initial {
                for (o, g) in gl.h0.as_mut_slice().iter_mut().zip(g_hprev.iter()) {
                    *o += g;
                }
            }
            gh_next[l * n..(l + 1) * n].copy_from_slice(g_hprev);
            if l > 0 {
                g_up.copy_from_slice(&g_u[..n]);
                if placement == Placement::DepthOnly && nonlinear {
                    for (g, &h) in g_up.iter_mut().zip(&states[cur - n..cur]) {
                        *g *= kind.derivative(h);
                    }
                }
            }
        }
    }
}

fn check_batch(p: &ModelParams, batch: &SequenceBatch) -> Result<()> {
    if batch.input_dim() != p.input_dim() {
        return Err(mismatch("batch input dim", p.input_dim(), batch.input_dim()));
    }
    if batch.target_dim() != p.output_dim() {
        return Err(mismatch("batch target dim", p.output_dim(), batch.target_dim()));
    }
    Ok(())
}

/// Mean squared error of the model on a batch, without keeping the trace.
pub fn mse(p: &ModelParams, batch: &SequenceBatch, masked: bool) -> Result<f64> {
    check_batch(p, batch)?;
    let count = loss_count(batch, masked);
    if count == 0 {
        return Ok(0.0);
    }
    let steps = batch.steps();
    let mut ws = Workspace::new(p, steps);
    let out_dim = p.output_dim();
    let mut sum = 0.0;
    for seq in 0..batch.batch() {
        forward_sequence(p, batch.sequence_inputs(seq), steps, &mut ws.states, &mut ws.pre, &mut ws.outputs, &mut ws.scratch)?;
        let padded = batch.padded_flags(seq);
        let targets = batch.sequence_targets(seq);
        for (t, &pad) in padded.iter().enumerate().take(steps) {
            if masked && pad {
                continue;
            }
            let r = t * out_dim..(t + 1) * out_dim;
            sum += ws.outputs[r.clone()].iter().zip(&targets[r]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(sum / count as f64)
}

/// Loss and exact gradients of the mean squared error over the batch.
/// Bilinear-only families get zero gradients for `U`, `V`, `b`.
pub fn backward(p: &ModelParams, batch: &SequenceBatch, opts: BackwardOptions) -> Result<(f64, Gradients)> {
    check_batch(p, batch)?;
    let mut grads = Gradients::zeros_like(p);
    let count = loss_count(batch, opts.masked);
    if count == 0 {
        return Ok((0.0, grads));
    }
    let steps = batch.steps();
    let out_dim = p.output_dim();
    let scale = 2.0 / count as f64;
    let mut ws = Workspace::new(p, steps);
    let mut sum = 0.0;
    for seq in 0..batch.batch() {
        let x = batch.sequence_inputs(seq);
        forward_sequence(p, x, steps, &mut ws.states, &mut ws.pre, &mut ws.outputs, &mut ws.scratch)?;
        let padded = batch.padded_flags(seq);
        let targets = batch.sequence_targets(seq);
        for (t, &pad) in padded.iter().enumerate().take(steps) {
            let r = t * out_dim..(t + 1) * out_dim;
            for ((dy, &y), &target) in ws.dy[r.clone()].iter_mut().zip(&ws.outputs[r.clone()]).zip(&targets[r]) {
                if opts.masked && pad {
                    *dy = 0.0;
                } else {
                    let e = y - target;
                    sum += e * e;
                    *dy = scale * e;
                }
            }
        }
        backward_sequence(p, x, steps, &mut ws, &mut grads.inner, opts.freeze_initial);
    }
    grads.check_finite()?;
    Ok((sum / count as f64, grads))
}

/// Worst disagreement between [`backward`] and central differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// `max |a − b| / max(|a|, |b|, 1e-4 · max(1, loss))` over checked entries.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compares analytic gradients of every trainable entry with central
/// differences of step `h`. Roundoff in a difference quotient grows like
/// `ε·loss/h`, so the relative error uses a floor of `1e-4 · max(1, loss)`
/// to keep near-zero entries from dividing roundoff by roundoff.
pub fn gradient_check(p: &ModelParams, batch: &SequenceBatch, opts: BackwardOptions, h: f64) -> Result<GradCheck> {
    let (loss, grads) = backward(p, batch, opts)?;
    let floor = 1e-4 * loss.abs().max(1.0);
    let analytic = grads.to_flat();
    let trainable: Vec<bool> = p
        .param_slices()
        .iter()
        .flat_map(|s| std::iter::repeat_n(p.is_trainable(s.kind, opts.freeze_initial), s.data.len()))
        .collect();
    let mut probe = p.clone();
    let mut report = GradCheck { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0 };
    for (idx, &a) in analytic.iter().enumerate() {
        if !trainable[idx] {
            if a != 0.0 {
                report.max_rel_err = f64::INFINITY;
            }
            continue;
        }
        let orig = nth_param(&mut probe, idx, None);
        nth_param(&mut probe, idx, Some(orig + h));
        let lp = mse(&probe, batch, opts.masked)?;
        nth_param(&mut probe, idx, Some(orig - h));
        let lm = mse(&probe, batch, opts.masked)?;
        nth_param(&mut probe, idx, Some(orig));
        let fd = (lp - lm) / (2.0 * h);
        let abs = (a - fd).abs();
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(abs / a.abs().max(fd.abs()).max(floor));
        report.checked += 1;
    }
    Ok(report)
}

/// Reads (and optionally overwrites) flat parameter `idx`.
fn nth_param(p: &mut ModelParams, mut idx: usize, value: Option<f64>) -> f64 {
    for s in p.param_slices_mut() {
        if idx < s.data.len() {
            let old = s.data[idx];
            if let Some(v) = value {
                s.data[idx] = v;
            }
            return old;
        }
        idx -= s.data.len();
    }
    panic!("parameter index out of range");
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn for_model(p: &ModelParams) -> Self {
        Self::new(p.param_slices().iter().map(|s| s.data.len()).sum())
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(mismatch("adam state", state.len(), format!("{} params, {} grads", params.len(), grads.len())));
    }
    state.t += 1;
    apply_adam(params, grads, &mut state.m, &mut state.v, state.t, cfg);
    Ok(())
}

fn apply_adam(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam step on every parameter block of the model.
pub fn adam_step(p: &mut ModelParams, g: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if g.inner.config() != p.config() {
        return Err(Error::InvalidArgument("gradient structure does not match the model".into()));
    }
    let total: usize = p.param_slices().iter().map(|s| s.data.len()).sum();
    if total != state.len() {
        return Err(mismatch("adam state length", total, state.len()));
    }
    state.t += 1;
    let grads = g.slices();
    let mut off = 0;
    for (s, gs) in p.param_slices_mut().into_iter().zip(grads) {
        let len = s.data.len();
        apply_adam(s.data, gs.data, &mut state.m[off..off + len], &mut state.v[off..off + len], state.t, cfg);
        off += len;
    }
    Ok(())
}
