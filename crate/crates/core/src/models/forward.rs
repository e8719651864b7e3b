use super::{Family, ModelParams, Placement};
use crate::error::{mismatch, Error, Result};
use crate::numkit::gemv_acc;
use crate::tasks::SequenceBatch;

/// Hidden states of every layer at every time step for a batch, together
/// with the pre-activations needed by backpropagation.
///
/// Time and layer indices in the accessors are 1-based (`t ∈ 1..=T`,
/// `l ∈ 1..=L`); sequence indices are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    batch: usize,
    steps: usize,
    depth: usize,
    hidden: usize,
    output_dim: usize,
    /// `[seq][t][l][n]`
    states: Vec<f64>,
    /// `[seq][t][l][n]`
    pre: Vec<f64>,
    /// `[seq][t][out]`
    outputs: Vec<f64>,
}

impl HiddenTrace {
    pub(crate) fn new(batch: usize, steps: usize, depth: usize, hidden: usize, output_dim: usize) -> Self {
        let len = batch * steps * depth * hidden;
        Self {
            batch,
            steps,
            depth,
            hidden,
            output_dim,
            states: vec![0.0; len],
            pre: vec![0.0; len],
            outputs: vec![0.0; batch * steps * output_dim],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn offset(&self, seq: usize, t: usize, l: usize) -> usize {
        assert!(t >= 1 && t <= self.steps && l >= 1 && l <= self.depth, "t={t}, l={l} out of range");
        ((seq * self.steps + (t - 1)) * self.depth + (l - 1)) * self.hidden
    }

    /// `h_t^{(l)}` of sequence `seq`.
    pub fn state(&self, seq: usize, t: usize, l: usize) -> &[f64] {
        let o = self.offset(seq, t, l);
        &self.states[o..o + self.hidden]
    }

    /// Pre-activation of layer `l` at time `t`.
    pub fn pre_activation(&self, seq: usize, t: usize, l: usize) -> &[f64] {
        let o = self.offset(seq, t, l);
        &self.pre[o..o + self.hidden]
    }

    /// Model output at time `t` (top state, after the optional top
    /// activation and readout).
    pub fn output(&self, seq: usize, t: usize) -> &[f64] {
        let o = (seq * self.steps + t - 1) * self.output_dim;
        &self.outputs[o..o + self.output_dim]
    }

    /// All outputs, `[seq][t][out]`.
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Every hidden state of one sequence, `[t][l][n]`.
    pub fn sequence_states(&self, seq: usize) -> &[f64] {
        let len = self.steps * self.depth * self.hidden;
        &self.states[seq * len..(seq + 1) * len]
    }
}

/// Scratch buffers reused across time steps.
pub(crate) struct Scratch {
    pub input: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub top: Vec<f64>,
}

impl Scratch {
    pub fn for_model(p: &ModelParams) -> Self {
        let n = p.hidden();
        Self {
            input: vec![0.0; n.max(p.input_dim())],
            s: vec![0.0; p.config.rank],
            q: vec![0.0; p.config.rank],
            top: vec![0.0; n],
        }
    }
}

/// Accumulates the pre-activation of layer `l` into `z`:
/// `b + V h + U u + A ×₁ h ×₂ u`.
pub(crate) fn layer_pre_activation(
    p: &ModelParams,
    l: usize,
    h_prev: &[f64],
    u: &[f64],
    z: &mut [f64],
    s: &mut [f64],
    q: &mut [f64],
) {
    let layer = &p.layers[l];
    let n = p.hidden();
    let m = u.len();
    if p.config.family.bilinear_only() {
        z.fill(0.0);
    } else {
        z.copy_from_slice(layer.b.as_slice());
        gemv_acc(layer.v.as_slice(), n, n, h_prev, z);
        gemv_acc(layer.u.as_slice(), n, m, u, z);
    }
    if let Some(t) = &layer.tensor {
        let a = t.as_slice();
        for (i, &hi) in h_prev.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            for (j, &uj) in u.iter().enumerate() {
                let c = hi * uj;
                if c == 0.0 {
                    continue;
                }
                let row = &a[(i * m + j) * n..(i * m + j + 1) * n];
                for (o, x) in z.iter_mut().zip(row) {
                    *o += c * x;
                }
            }
        }
    }
    if let Some(f) = &layer.cp {
        let r = f.rank();
        s.fill(0.0);
        q.fill(0.0);
        crate::numkit::gemv_t_acc(f.a.as_slice(), n, r, h_prev, s);
        crate::numkit::gemv_t_acc(f.b.as_slice(), m, r, u, q);
        for (sr, qr) in s.iter_mut().zip(q.iter()) {
            *sr *= qr;
        }
        gemv_acc(f.c.as_slice(), n, r, s, z);
    }
}

/// Runs one sequence `x` (`[t][d]`) and fills `states`, `pre` (`[t][l][n]`)
/// and `outputs` (`[t][out]`).
pub(crate) fn forward_sequence(
    p: &ModelParams,
    x: &[f64],
    steps: usize,
    states: &mut [f64],
    pre: &mut [f64],
    outputs: &mut [f64],
    scratch: &mut Scratch,
) -> Result<()> {
    let cfg = &p.config;
    let (n, d, depth) = (cfg.hidden, cfg.input_dim, cfg.depth);
    let kind = cfg.activation.kind;
    let placement = cfg.activation.placement;
    let out_dim = cfg.output_dim();
    for t in 0..steps {
        for l in 0..depth {
            let cur = (t * depth + l) * n;
            let m = cfg.layer_input_dim(l);
            // Layer input.
            if l == 0 {
                scratch.input[..d].copy_from_slice(&x[t * d..(t + 1) * d]);
            } else {
                let below = &states[cur - n..cur];
                match placement {
                    Placement::Recurrent => scratch.input[..n].copy_from_slice(below),
                    Placement::DepthOnly => {
                        for (o, &h) in scratch.input[..n].iter_mut().zip(below) {
                            *o = kind.apply(h);
                        }
                    }
                }
            }
            let (before, rest) = states.split_at_mut(cur);
            let h_prev: &[f64] = if t == 0 {
                p.layers[l].h0.as_slice()
            } else {
                &before[cur - depth * n..cur - depth * n + n]
            };
            let z = &mut pre[cur..cur + n];
            layer_pre_activation(p, l, h_prev, &scratch.input[..m], z, &mut scratch.s, &mut scratch.q);
            let h = &mut rest[..n];
            match placement {
                Placement::Recurrent => {
                    for (hk, &zk) in h.iter_mut().zip(z.iter()) {
                        *hk = kind.apply(zk);
                    }
                }
                Placement::DepthOnly => h.copy_from_slice(z),
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { t: t + 1, layer: l + 1 });
            }
        }
        let top = &states[(t * depth + depth - 1) * n..(t * depth + depth) * n];
        let y = &mut scratch.top[..n];
        if placement == Placement::DepthOnly && cfg.top_activation {
            for (o, &h) in y.iter_mut().zip(top) {
                *o = kind.apply(h);
            }
        } else {
            y.copy_from_slice(top);
        }
        let out = &mut outputs[t * out_dim..(t + 1) * out_dim];
        match &p.readout {
            Some(w) => {
                out.fill(0.0);
                gemv_acc(w.as_slice(), out_dim, n, y, out);
            }
            None => out.copy_from_slice(y),
        }
    }
    Ok(())
}

/// Forward pass for any family.
pub fn forward(p: &ModelParams, x: &SequenceBatch) -> Result<HiddenTrace> {
    if x.input_dim() != p.input_dim() {
        return Err(mismatch("forward input dim", p.input_dim(), x.input_dim()));
    }
    let cfg = &p.config;
    let (steps, depth, n) = (x.steps(), cfg.depth, cfg.hidden);
    let mut trace = HiddenTrace::new(x.batch(), steps, depth, n, cfg.output_dim());
    let mut scratch = Scratch::for_model(p);
    let per_seq = steps * depth * n;
    let per_out = steps * cfg.output_dim();
    for seq in 0..x.batch() {
        let states = &mut trace.states[seq * per_seq..(seq + 1) * per_seq];
        let pre = &mut trace.pre[seq * per_seq..(seq + 1) * per_seq];
        let outputs = &mut trace.outputs[seq * per_out..(seq + 1) * per_out];
        forward_sequence(p, x.sequence_inputs(seq), steps, states, pre, outputs, &mut scratch)?;
    }
    Ok(trace)
}

fn require_family(p: &ModelParams, op: &'static str, ok: &[Family]) -> Result<()> {
    if ok.contains(&p.family()) {
        Ok(())
    } else {
        Err(Error::Unsupported {
            operation: op,
            reason: format!("family {} not in {:?}", p.family().name(), ok),
        })
    }
}

/// First-order RNN forward pass (recurrent or depth-only activation).
pub fn forward_rnn(p: &ModelParams, x: &SequenceBatch) -> Result<HiddenTrace> {
    require_family(p, "forward_rnn", &[Family::Rnn])?;
    forward(p, x)
}

/// Second-order forward pass with a full weight tensor (2RNN or BIRNN).
pub fn forward_2rnn(p: &ModelParams, x: &SequenceBatch) -> Result<HiddenTrace> {
    require_family(p, "forward_2rnn", &[Family::SecondOrder, Family::Bilinear])?;
    forward(p, x)
}

/// CP-factorized forward pass; the full tensor is never materialized.
pub fn forward_cprnn(p: &ModelParams, x: &SequenceBatch) -> Result<HiddenTrace> {
    require_family(p, "forward_cprnn", &[Family::Cp, Family::CpBilinear])?;
    forward(p, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, ActivationKind, LayerParams, ModelConfig};
    use crate::numkit::Vector;
    use crate::numkit::{CpFactors, Matrix, Rng, Tensor3};

    fn batch(seqs: &[Vec<Vec<f64>>]) -> SequenceBatch {
        SequenceBatch::from_sequences(seqs).unwrap()
    }

    fn random_batch(rng: &mut Rng, b: usize, t: usize, d: usize) -> SequenceBatch {
        let seqs: Vec<Vec<Vec<f64>>> = (0..b)
            .map(|_| (0..t).map(|_| rng.normal_vec(d)).collect())
            .collect();
        batch(&seqs)
    }

    #[test]
    fn identity_layer_passes_inputs() {
        let cfg = ModelConfig::linear_rnn(1, 3, 3);
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.layer_mut(0).u = Matrix::identity(3);
        let mut rng = Rng::new(4);
        let x = random_batch(&mut rng, 2, 5, 3);
        let tr = forward_rnn(&p, &x).unwrap();
        for s in 0..2 {
            for t in 1..=5 {
                assert_eq!(tr.state(s, t, 1), x.input(s, t));
            }
        }
    }

    #[test]
    fn running_product_for_delta_birnn() {
        let cfg = ModelConfig::new(Family::Bilinear, 1, 3, 3);
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.layer_mut(0).tensor = Some(Tensor3::delta([3, 3, 3]));
        p.layer_mut(0).h0 = Vector::ones(3);
        let xs: Vec<Vec<f64>> = vec![vec![2.0, -1.0, 0.5], vec![3.0, 4.0, -2.0], vec![-1.0, 0.5, 2.0]];
        let tr = forward_2rnn(&p, &batch(std::slice::from_ref(&xs))).unwrap();
        let mut prod = vec![1.0; 3];
        for (t, x) in xs.iter().enumerate() {
            for k in 0..3 {
                prod[k] *= x[k];
            }
            assert_eq!(tr.state(0, t + 1, 1), prod.as_slice());
        }
    }

    #[test]
    fn two_layer_delta_birnn_squares_first_input() {
        let cfg = ModelConfig::new(Family::Bilinear, 2, 2, 2);
        let mut p = ModelParams::zeros(cfg).unwrap();
        for l in 0..2 {
            p.layer_mut(l).tensor = Some(Tensor3::delta([2, 2, 2]));
            p.layer_mut(l).h0 = Vector::ones(2);
        }
        let x = batch(&[vec![vec![2.0, 3.0], vec![1.0, 1.0]]]);
        let tr = forward(&p, &x).unwrap();
        assert_eq!(tr.state(0, 2, 2), &[4.0, 9.0]);
    }

    #[test]
    fn zero_tensor_matches_first_order_model() {
        let mut rng = Rng::new(12);
        for act in [Activation::LINEAR, Activation::recurrent(ActivationKind::Tanh), Activation::depth_only(ActivationKind::Relu)] {
            let cfg = ModelConfig::linear_rnn(3, 3, 2).with_activation(act);
            let rnn = ModelParams::random(cfg.clone(), &mut rng).unwrap();
            let mut cfg2 = cfg.clone();
            cfg2.family = Family::SecondOrder;
            let layers: Vec<LayerParams> = rnn
                .layers()
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    let mut layer = layer.clone();
                    layer.tensor = Some(Tensor3::zeros([3, cfg.layer_input_dim(l), 3]));
                    layer
                })
                .collect();
            let so = ModelParams::new(cfg2, layers, None).unwrap();
            let x = random_batch(&mut rng, 3, 6, 2);
            let a = forward_rnn(&rnn, &x).unwrap();
            let b = forward_2rnn(&so, &x).unwrap();
            assert_eq!(a.states, b.states);
        }
    }

    fn materialized(p: &ModelParams) -> ModelParams {
        let mut cfg = p.config().clone();
        cfg.family = if p.family() == Family::CpBilinear { Family::Bilinear } else { Family::SecondOrder };
        let layers = p
            .layers()
            .iter()
            .map(|layer| {
                let mut out = layer.clone();
                out.tensor = Some(layer.cp.as_ref().unwrap().reconstruct());
                out.cp = None;
                out
            })
            .collect();
        ModelParams::new(cfg, layers, p.readout().cloned()).unwrap()
    }

    #[test]
    fn cp_identity_factors_match_delta_tensor() {
        let n = 3;
        let cfg = ModelConfig::new(Family::CpBilinear, 2, n, n).with_rank(n);
        let mut p = ModelParams::zeros(cfg).unwrap();
        for l in 0..2 {
            let layer = p.layer_mut(l);
            layer.cp = Some(CpFactors::new(Matrix::identity(n), Matrix::identity(n), Matrix::identity(n)).unwrap());
            layer.h0 = Vector::ones(n);
        }
        let mut rng = Rng::new(2);
        let x = random_batch(&mut rng, 2, 4, n);
        let a = forward_cprnn(&p, &x).unwrap();
        let full = materialized(&p);
        assert_eq!(full.layer(0).tensor.as_ref().unwrap(), &Tensor3::delta([n, n, n]));
        let b = forward_2rnn(&full, &x).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn cp_matches_materialized_tensor() {
        let mut rng = Rng::new(31);
        for trial in 0..30 {
            let n = 1 + rng.below(5);
            let d = 1 + rng.below(5);
            let r = rng.below(7);
            let depth = 1 + rng.below(3);
            let family = if trial % 2 == 0 { Family::Cp } else { Family::CpBilinear };
            let act = [Activation::LINEAR, Activation::recurrent(ActivationKind::Tanh), Activation::depth_only(ActivationKind::Tanh)][trial % 3];
            let cfg = ModelConfig::new(family, depth, n, d).with_rank(r).with_activation(act);
            let p = ModelParams::random_with_scale(cfg, &mut rng, 0.8).unwrap();
            let x = random_batch(&mut rng, 2, 4, d);
            let a = forward_cprnn(&p, &x).unwrap();
            let b = forward_2rnn(&materialized(&p), &x).unwrap();
            let scale = b.states.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
            for (u, v) in a.states.iter().zip(&b.states) {
                assert!((u - v).abs() / scale < 1e-12, "trial {trial}");
            }
        }
    }

    #[test]
    fn cp_rank_zero_reduces_to_rnn() {
        let mut rng = Rng::new(5);
        let cfg = ModelConfig::new(Family::Cp, 2, 3, 2).with_rank(0);
        let p = ModelParams::random(cfg.clone(), &mut rng).unwrap();
        let mut rcfg = cfg;
        rcfg.family = Family::Rnn;
        let layers = p.layers().iter().map(|l| LayerParams { cp: None, ..l.clone() }).collect();
        let rnn = ModelParams::new(rcfg, layers, None).unwrap();
        let x = random_batch(&mut rng, 2, 5, 2);
        assert_eq!(forward_cprnn(&p, &x).unwrap().states, forward_rnn(&rnn, &x).unwrap().states);
    }

    #[test]
    fn placements_agree_under_identity() {
        let mut rng = Rng::new(77);
        for _ in 0..10 {
            let cfg = ModelConfig::linear_rnn(3, 4, 2);
            let p = ModelParams::random(cfg, &mut rng).unwrap();
            let q = p.clone().with_activation(Activation::depth_only(ActivationKind::Identity));
            let x = random_batch(&mut rng, 2, 6, 2);
            let a = forward(&p, &x).unwrap();
            let b = forward(&q, &x).unwrap();
            for (u, v) in a.states.iter().zip(&b.states) {
                assert!((u - v).abs() <= 1e-14 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn depth_only_top_is_pre_activation() {
        let mut rng = Rng::new(8);
        let cfg = ModelConfig::linear_rnn(2, 3, 1).with_activation(Activation::depth_only(ActivationKind::Tanh));
        let p = ModelParams::random_with_scale(cfg, &mut rng, 2.0).unwrap();
        let x = random_batch(&mut rng, 1, 3, 1);
        let tr = forward(&p, &x).unwrap();
        assert_eq!(tr.output(0, 3), tr.state(0, 3, 2));
        let mut q = p.clone();
        q.set_top_activation(true);
        let tr2 = forward(&q, &x).unwrap();
        let expect: Vec<f64> = tr.state(0, 3, 2).iter().map(|h| h.tanh()).collect();
        assert_eq!(tr2.output(0, 3), expect.as_slice());
        // Layer 2 reads tanh of layer 1 while its own recurrence stays linear.
        let l2 = p.layer(1);
        let u: Vec<f64> = tr.state(0, 2, 1).iter().map(|h| h.tanh()).collect();
        let mut z = l2.b.as_slice().to_vec();
        gemv_acc(l2.v.as_slice(), 3, 3, tr.state(0, 1, 2), &mut z);
        gemv_acc(l2.u.as_slice(), 3, 3, &u, &mut z);
        for (a, b) in z.iter().zip(tr.state(0, 2, 2)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_equals_per_sequence() {
        let mut rng = Rng::new(41);
        let cfg = ModelConfig::new(Family::SecondOrder, 2, 3, 2).with_activation(Activation::recurrent(ActivationKind::Tanh));
        let p = ModelParams::random(cfg, &mut rng).unwrap();
        let seqs: Vec<Vec<Vec<f64>>> = (0..4).map(|_| (0..5).map(|_| rng.normal_vec(2)).collect()).collect();
        let all = forward(&p, &batch(&seqs)).unwrap();
        for (s, seq) in seqs.iter().enumerate() {
            let one = forward(&p, &batch(std::slice::from_ref(seq))).unwrap();
            assert_eq!(one.sequence_states(0), all.sequence_states(s));
        }
    }

    #[test]
    fn overflow_reports_location() {
        let cfg = ModelConfig::linear_rnn(2, 1, 1);
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.layer_mut(0).u = Matrix::new(1, 1, vec![1.0]).unwrap();
        p.layer_mut(0).v = Matrix::new(1, 1, vec![1e200]).unwrap();
        p.layer_mut(1).u = Matrix::new(1, 1, vec![1.0]).unwrap();
        let x = batch(&[vec![vec![1e200], vec![1.0], vec![1.0]]]);
        match forward(&p, &x) {
            Err(Error::NonFiniteActivation { t, layer }) => assert_eq!((t, layer), (2, 1)),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn family_preconditions() {
        let p = ModelParams::zeros(ModelConfig::linear_rnn(1, 2, 2)).unwrap();
        let x = batch(&[vec![vec![1.0, 2.0]]]);
        assert!(forward_2rnn(&p, &x).is_err());
        assert!(forward_cprnn(&p, &x).is_err());
        let bad = batch(&[vec![vec![1.0]]]);
        assert!(forward_rnn(&p, &bad).is_err());
    }
}
