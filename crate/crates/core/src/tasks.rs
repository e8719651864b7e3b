//! Seeded synthetic sequence tasks: copy, sinus, copy-sinus and parity.
//!
//! Train, validation and test splits are drawn from disjoint substreams of
//! the spec seed (keys 0, 1, 2), so each split is reproducible on its own.
//! Gaussian draws use [`Rng::normal`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numkit::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `y_t = x_{t-p}`, zero for `t ≤ p`.
    Copy,
    /// `y_t = sin(ω x_{t-p})`, usually with `p = 0`.
    Sinus,
    /// Same target as `Sinus` with a positive lag.
    CopySinus,
    /// `x_t ∈ {−1, 1}^d`, `y_t = x_1 ⊙ ⋯ ⊙ x_t`.
    Parity,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Copy => "copy",
            Self::Sinus => "sinus",
            Self::CopySinus => "copy_sinus",
            Self::Parity => "parity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d: usize,
    pub steps: usize,
    #[serde(default)]
    pub lag: usize,
    #[serde(default)]
    pub omega: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Copy task defaults: `d = 5`, `T = 16`, `p = 8`, 10000/2000/2000.
    pub fn copy() -> Self {
        Self {
            kind: TaskKind::Copy,
            d: 5,
            steps: 16,
            lag: 8,
            omega: 0.0,
            train: 10_000,
            val: 2_000,
            test: 2_000,
            seed: 0,
        }
    }

    /// Sinus defaults: `ω = 3`, `p = 0`.
    pub fn sinus() -> Self {
        Self {
            kind: TaskKind::Sinus,
            lag: 0,
            omega: 3.0,
            ..Self::copy()
        }
    }

    /// Copy-sinus defaults: `ω = 3`, `p = 4`.
    pub fn copy_sinus() -> Self {
        Self {
            kind: TaskKind::CopySinus,
            lag: 4,
            omega: 3.0,
            ..Self::copy()
        }
    }

    /// Parity defaults: `d = 5`, `T = 20`.
    pub fn parity() -> Self {
        Self {
            kind: TaskKind::Parity,
            steps: 20,
            lag: 0,
            ..Self::copy()
        }
    }

    pub fn with_dims(mut self, d: usize, steps: usize) -> Self {
        self.d = d;
        self.steps = steps;
        self
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    pub fn with_sizes(mut self, train: usize, val: usize, test: usize) -> Self {
        self.train = train;
        self.val = val;
        self.test = test;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "task needs d > 0 and T > 0 (got d={}, T={})",
                self.d, self.steps
            )));
        }
        if self.lag >= self.steps {
            return Err(Error::InvalidArgument(format!(
                "lag p={} must be smaller than T={}",
                self.lag, self.steps
            )));
        }
        if self.kind == TaskKind::Parity && self.lag != 0 {
            return Err(Error::InvalidArgument("parity takes no lag".into()));
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidArgument("omega must be finite".into()));
        }
        Ok(())
    }

    /// Target value for one input coordinate under this task's map.
    fn target_of(&self, x: f64) -> f64 {
        match self.kind {
            TaskKind::Copy => x,
            TaskKind::Sinus | TaskKind::CopySinus => (self.omega * x).sin(),
            TaskKind::Parity => x,
        }
    }
}

/// Inputs `[seq][t][d]`, targets `[seq][t][k]` and a padding flag per
/// `(seq, t)` marking targets that are zero only because `t ≤ p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    batch: usize,
    steps: usize,
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    padded: Vec<bool>,
}

impl SequenceBatch {
    pub fn new(
        batch: usize,
        steps: usize,
        input_dim: usize,
        target_dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        padded: Vec<bool>,
    ) -> Result<Self> {
        if inputs.len() != batch * steps * input_dim {
            return Err(mismatch("batch inputs", batch * steps * input_dim, inputs.len()));
        }
        if targets.len() != batch * steps * target_dim {
            return Err(mismatch("batch targets", batch * steps * target_dim, targets.len()));
        }
        if padded.len() != batch * steps {
            return Err(mismatch("batch padding flags", batch * steps, padded.len()));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "sequence batch".into() });
        }
        Ok(Self { batch, steps, input_dim, target_dim, inputs, targets, padded })
    }

    /// Builds an input-only batch from `[seq][t][d]` nested vectors.
    pub fn from_sequences(seqs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let steps = seqs.first().map_or(0, |s| s.len());
        let d = seqs.first().and_then(|s| s.first()).map_or(0, |x| x.len());
        let mut inputs = Vec::with_capacity(seqs.len() * steps * d);
        for s in seqs {
            if s.len() != steps {
                return Err(mismatch("sequence length", steps, s.len()));
            }
            for x in s {
                if x.len() != d {
                    return Err(mismatch("input dim", d, x.len()));
                }
                inputs.extend_from_slice(x);
            }
        }
        Self::new(seqs.len(), steps, d, 0, inputs, Vec::new(), vec![false; seqs.len() * steps])
    }

    /// Attaches `[seq][t][k]` targets, with no padding.
    pub fn with_targets(self, target_dim: usize, targets: Vec<f64>) -> Result<Self> {
        let padded = vec![false; self.batch * self.steps];
        Self::new(self.batch, self.steps, self.input_dim, target_dim, self.inputs, targets, padded)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `x_t` of sequence `seq`, `t` 1-based.
    pub fn input(&self, seq: usize, t: usize) -> &[f64] {
        let o = (seq * self.steps + t - 1) * self.input_dim;
        &self.inputs[o..o + self.input_dim]
    }

    /// `y_t` of sequence `seq`, `t` 1-based.
    pub fn target(&self, seq: usize, t: usize) -> &[f64] {
        let o = (seq * self.steps + t - 1) * self.target_dim;
        &self.targets[o..o + self.target_dim]
    }

    /// Whether `y_t` belongs to the zero-filled prefix `t ≤ p`.
    pub fn is_padded(&self, seq: usize, t: usize) -> bool {
        self.padded[seq * self.steps + t - 1]
    }

    pub(crate) fn padded_flags(&self, seq: usize) -> &[bool] {
        &self.padded[seq * self.steps..(seq + 1) * self.steps]
    }

    pub fn sequence_inputs(&self, seq: usize) -> &[f64] {
        let len = self.steps * self.input_dim;
        &self.inputs[seq * len..(seq + 1) * len]
    }

    pub fn sequence_targets(&self, seq: usize) -> &[f64] {
        let len = self.steps * self.target_dim;
        &self.targets[seq * len..(seq + 1) * len]
    }

    /// Sequences `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let idx: Vec<usize> = (start..end).collect();
        self.gather(&idx)
    }

    /// Sequences at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let (ti, tt) = (self.steps * self.input_dim, self.steps * self.target_dim);
        let mut inputs = Vec::with_capacity(indices.len() * ti);
        let mut targets = Vec::with_capacity(indices.len() * tt);
        let mut padded = Vec::with_capacity(indices.len() * self.steps);
        for &i in indices {
            inputs.extend_from_slice(self.sequence_inputs(i));
            targets.extend_from_slice(self.sequence_targets(i));
            padded.extend_from_slice(self.padded_flags(i));
        }
        Self {
            batch: indices.len(),
            steps: self.steps,
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            inputs,
            targets,
            padded,
        }
    }

    /// Population variance of all target entries.
    pub fn target_variance(&self) -> f64 {
        let n = self.targets.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.targets.iter().sum::<f64>() / n;
        self.targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n
    }

    /// Mean of the squared targets: the loss of the constant-zero predictor.
    pub fn target_mean_square(&self) -> f64 {
        let n = self.targets.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        self.targets.iter().map(|y| y * y).sum::<f64>() / n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: SequenceBatch,
    pub val: SequenceBatch,
    pub test: SequenceBatch,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &SequenceBatch); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

fn draw_split(spec: &TaskSpec, size: usize, rng: &mut Rng) -> Result<SequenceBatch> {
    let n = size * spec.steps * spec.d;
    let inputs: Vec<f64> = match spec.kind {
        TaskKind::Parity => (0..n)
            .map(|_| loop {
                let g = rng.normal();
                if g != 0.0 {
                    break g.signum();
                }
            })
            .collect(),
        _ => rng.normal_vec(n),
    };
    let unlabeled = SequenceBatch::new(size, spec.steps, spec.d, 0, inputs, Vec::new(), vec![false; size * spec.steps])?;
    label(spec, &unlabeled)
}

/// Computes the task targets (and padding flags) for the given inputs.
pub fn label(spec: &TaskSpec, x: &SequenceBatch) -> Result<SequenceBatch> {
    spec.validate()?;
    if x.input_dim() != spec.d || x.steps() != spec.steps {
        return Err(mismatch(
            "task inputs",
            format!("T={}, d={}", spec.steps, spec.d),
            format!("T={}, d={}", x.steps(), x.input_dim()),
        ));
    }
    let (size, steps, d, p) = (x.batch(), spec.steps, spec.d, spec.lag);
    let inputs = x.inputs();
    let mut targets = vec![0.0; size * steps * d];
    let mut padded = vec![false; size * steps];
    for seq in 0..size {
        let base = seq * steps * d;
        match spec.kind {
            TaskKind::Parity => {
                let mut acc = vec![1.0; d];
                for t in 0..steps {
                    for k in 0..d {
                        acc[k] *= inputs[base + t * d + k];
                        targets[base + t * d + k] = acc[k];
                    }
                }
            }
            _ => {
                for t in 0..steps {
                    if t < p {
                        padded[seq * steps + t] = true;
                        continue;
                    }
                    for k in 0..d {
                        targets[base + t * d + k] = spec.target_of(inputs[base + (t - p) * d + k]);
                    }
                }
            }
        }
    }
    SequenceBatch::new(size, steps, d, d, inputs.to_vec(), targets, padded)
}

/// Draws all three splits of any task.
pub fn generate(spec: &TaskSpec) -> Result<Splits> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    Ok(Splits {
        train: draw_split(spec, spec.train, &mut root.substream(0))?,
        val: draw_split(spec, spec.val, &mut root.substream(1))?,
        test: draw_split(spec, spec.test, &mut root.substream(2))?,
    })
}

fn require_kind(spec: &TaskSpec, ok: &[TaskKind], op: &'static str) -> Result<()> {
    if ok.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{op} called with task kind {}", spec.kind.name())))
    }
}

/// Gaussian inputs, `y_t = x_{t-p}` on every coordinate, zero prefix.
pub fn gen_copy(spec: &TaskSpec) -> Result<Splits> {
    require_kind(spec, &[TaskKind::Copy], "gen_copy")?;
    generate(spec)
}

pub fn gen_sinus(spec: &TaskSpec) -> Result<Splits> {
    require_kind(spec, &[TaskKind::Sinus, TaskKind::CopySinus], "gen_sinus")?;
    generate(spec)
}

pub fn gen_copy_sinus(spec: &TaskSpec) -> Result<Splits> {
    require_kind(spec, &[TaskKind::CopySinus, TaskKind::Sinus], "gen_copy_sinus")?;
    generate(spec)
}

pub fn gen_parity(spec: &TaskSpec) -> Result<Splits> {
    require_kind(spec, &[TaskKind::Parity], "gen_parity")?;
    generate(spec)
}

/// Recomputes every target from its inputs and checks the padding flags.
pub fn targets_consistent(spec: &TaskSpec, batch: &SequenceBatch) -> bool {
    if batch.input_dim() != spec.d || batch.target_dim() != spec.d || batch.steps() != spec.steps {
        return false;
    }
    for seq in 0..batch.batch() {
        let mut acc = vec![1.0; spec.d];
        for t in 1..=spec.steps {
            let x = batch.input(seq, t);
            let y = batch.target(seq, t);
            let expected: Vec<f64> = match spec.kind {
                TaskKind::Parity => {
                    if x.iter().any(|v| v.abs() != 1.0) {
                        return false;
                    }
                    for (a, v) in acc.iter_mut().zip(x) {
                        *a *= v;
                    }
                    acc.clone()
                }
                _ if t <= spec.lag => vec![0.0; spec.d],
                _ => batch.input(seq, t - spec.lag).iter().map(|&v| spec.target_of(v)).collect(),
            };
            let pad = spec.kind != TaskKind::Parity && t <= spec.lag;
            if y != expected.as_slice() || batch.is_padded(seq, t) != pad {
                return false;
            }
        }
    }
    true
}

#[derive(Serialize, Deserialize)]
struct CsvHeader {
    spec: TaskSpec,
    split: String,
    batch: usize,
    steps: usize,
    input_dim: usize,
    target_dim: usize,
}

/// Writes one split as CSV. The first line is `#` followed by a JSON header
/// (spec, split name, dimensions); then one row per `(seq, t)` with columns
/// `seq, t, padded, x1..xd, y1..yk`. Floats use shortest round-trip
/// formatting, so re-import is bit-exact.
pub fn write_csv<W: Write>(mut w: W, spec: &TaskSpec, split: &str, batch: &SequenceBatch) -> Result<()> {
    let header = CsvHeader {
        spec: spec.clone(),
        split: split.to_string(),
        batch: batch.batch(),
        steps: batch.steps(),
        input_dim: batch.input_dim(),
        target_dim: batch.target_dim(),
    };
    writeln!(w, "#{}", serde_json::to_string(&header)?)?;
    let mut cw = csv::Writer::from_writer(w);
    let mut cols = vec!["seq".to_string(), "t".to_string(), "padded".to_string()];
    cols.extend((1..=batch.input_dim()).map(|i| format!("x{i}")));
    cols.extend((1..=batch.target_dim()).map(|i| format!("y{i}")));
    cw.write_record(&cols)?;
    for seq in 0..batch.batch() {
        for t in 1..=batch.steps() {
            let mut row = vec![seq.to_string(), t.to_string(), u8::from(batch.is_padded(seq, t)).to_string()];
            row.extend(batch.input(seq, t).iter().map(|v| format!("{v:?}")));
            row.extend(batch.target(seq, t).iter().map(|v| format!("{v:?}")));
            cw.write_record(&row)?;
        }
    }
    cw.flush()?;
    Ok(())
}

/// Reads a split written by [`write_csv`]; returns the spec, split name and batch.
pub fn read_csv<R: BufRead>(mut r: R) -> Result<(TaskSpec, String, SequenceBatch)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let json = first
        .trim_end()
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidArgument("dataset CSV must start with a '#' JSON header line".into()))?;
    let h: CsvHeader = serde_json::from_str(json)?;
    let mut cr = csv::Reader::from_reader(r);
    let (d, k) = (h.input_dim, h.target_dim);
    let mut inputs = Vec::with_capacity(h.batch * h.steps * d);
    let mut targets = Vec::with_capacity(h.batch * h.steps * k);
    let mut padded = Vec::with_capacity(h.batch * h.steps);
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
    };
    for (row_idx, rec) in cr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 + d + k {
            return Err(mismatch("dataset CSV columns", 3 + d + k, rec.len()));
        }
        let (seq, t) = (row_idx / h.steps.max(1), row_idx % h.steps.max(1) + 1);
        if rec[0] != seq.to_string() || rec[1] != t.to_string() {
            return Err(Error::InvalidArgument(format!("row {} out of order", row_idx + 1)));
        }
        padded.push(&rec[2] == "1");
        for i in 0..d {
            inputs.push(parse(&rec[3 + i])?);
        }
        for i in 0..k {
            targets.push(parse(&rec[3 + d + i])?);
        }
    }
    let batch = SequenceBatch::new(h.batch, h.steps, d, k, inputs, targets, padded)?;
    Ok((h.spec, h.split, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: TaskSpec) -> TaskSpec {
        kind.with_sizes(50, 20, 20).with_seed(11)
    }

    #[test]
    fn zero_lag_copy_targets_equal_inputs() {
        let s = generate(&small(TaskSpec::copy().with_lag(0))).unwrap();
        assert_eq!(s.train.inputs(), s.train.targets());
    }

    #[test]
    fn copy_targets_are_shifted_inputs() {
        let spec = small(TaskSpec::copy());
        let s = gen_copy(&spec).unwrap();
        for (_, b) in s.named() {
            assert!(targets_consistent(&spec, b));
        }
        assert!(s.train.is_padded(0, 8) && !s.train.is_padded(0, 9));
        assert_eq!(s.train.target(3, 12), s.train.input(3, 4));
    }

    #[test]
    fn copy_by_hand() {
        let spec = TaskSpec::copy().with_dims(1, 4).with_lag(2);
        let x = SequenceBatch::from_sequences(&[vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]]).unwrap();
        let y = label(&spec, &x).unwrap();
        assert_eq!(y.targets(), &[0.0, 0.0, 1.0, 2.0]);
        let parity = TaskSpec::parity().with_dims(1, 3);
        let x = SequenceBatch::from_sequences(&[vec![vec![-1.0], vec![1.0], vec![-1.0]]]).unwrap();
        assert_eq!(label(&parity, &x).unwrap().targets(), &[-1.0, -1.0, 1.0]);
    }

    #[test]
    fn gaussian_inputs_have_expected_abs_mean() {
        let spec = TaskSpec::copy().with_dims(1, 10).with_lag(0).with_sizes(1000, 0, 0);
        let s = generate(&spec).unwrap();
        let n = s.train.inputs().len() as f64;
        let mean_abs = s.train.inputs().iter().map(|x| x.abs()).sum::<f64>() / n;
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        // Var|x| = 1 - 2/π.
        let sigma = ((1.0 - 2.0 / std::f64::consts::PI) / n).sqrt();
        assert!((mean_abs - expect).abs() < 5.0 * sigma, "{mean_abs}");
    }

    #[test]
    fn sinus_targets() {
        let mut spec = small(TaskSpec::sinus());
        spec.omega = 0.0;
        let s = gen_sinus(&spec).unwrap();
        assert!(s.train.targets().iter().all(|&y| y == 0.0));
        let spec = small(TaskSpec::sinus());
        let s = gen_sinus(&spec).unwrap();
        assert!(targets_consistent(&spec, &s.test));
        let shifted = small(TaskSpec::copy_sinus());
        let c = gen_copy_sinus(&shifted).unwrap();
        // Same seed, same inputs: the lagged targets are the unlagged ones shifted.
        assert_eq!(s.train.inputs(), c.train.inputs());
        for seq in 0..5 {
            for t in 1..=16 {
                if t <= 4 {
                    assert!(c.train.target(seq, t).iter().all(|&y| y == 0.0));
                } else {
                    assert_eq!(c.train.target(seq, t), s.train.target(seq, t - 4));
                }
            }
        }
    }

    #[test]
    fn sinus_exact_point() {
        let spec = TaskSpec::sinus().with_dims(1, 1);
        assert!((spec.target_of(std::f64::consts::PI / 6.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parity_targets_are_running_products() {
        let spec = small(TaskSpec::parity());
        let s = gen_parity(&spec).unwrap();
        for (_, b) in s.named() {
            assert!(targets_consistent(&spec, b));
            assert!(b.targets().iter().all(|&y| y == 1.0 || y == -1.0));
            for seq in 0..b.batch() {
                for t in 2..=b.steps() {
                    for k in 0..5 {
                        assert_eq!(b.target(seq, t)[k], b.target(seq, t - 1)[k] * b.input(seq, t)[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&TaskSpec::copy().with_lag(16)).is_err());
        assert!(gen_parity(&TaskSpec::copy()).is_err());
        assert!(generate(&TaskSpec::parity().with_lag(1)).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_splits_differ() {
        let spec = small(TaskSpec::copy());
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.val.inputs(), a.test.inputs());
        let other = generate(&spec.clone().with_seed(12)).unwrap();
        assert_ne!(a.train.inputs(), other.train.inputs());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = small(TaskSpec::copy_sinus()).with_sizes(7, 1, 1);
        let s = generate(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &spec, "train", &s.train).unwrap();
        let (spec2, split, back) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(split, "train");
        assert_eq!(back, s.train);
    }

    #[test]
    fn gather_and_slice() {
        let s = generate(&small(TaskSpec::copy())).unwrap();
        let g = s.train.gather(&[3, 1]);
        assert_eq!(g.sequence_inputs(0), s.train.sequence_inputs(3));
        assert_eq!(g.sequence_targets(1), s.train.sequence_targets(1));
        assert_eq!(s.train.slice(2, 4).sequence_inputs(1), s.train.sequence_inputs(3));
    }
}
