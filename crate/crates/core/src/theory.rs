//! Explicit weight constructions and counting formulas: the shift-register
//! copier, the deep-to-shallow flattening, the diagonal power network, the
//! parity network, parameter counts and the depth/width crossover table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::models::{Family, HiddenTrace, LayerParams, ModelConfig, ModelParams};
use crate::numkit::{matmul, matvec, Matrix, Tensor3, Vector};

/// Shape of the lag-`p` copier at width `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopierSpec {
    pub n: usize,
    pub p: usize,
    /// `⌈p / (n − 1)⌉`.
    pub depth: usize,
    /// 1-based hidden coordinate of the top layer holding `x_{t−p}`:
    /// `1 + L(n − 1) − p`.
    pub readout_index: usize,
}

impl CopierSpec {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n <= 1 {
            return Err(Error::InvalidArgument(format!(
                "copier needs hidden size n > 1 (got {n}); a width-1 layer has no shift register"
            )));
        }
        if p == 0 {
            return Err(Error::InvalidArgument("copier lag must be at least 1".into()));
        }
        let depth = p.div_ceil(n - 1);
        Ok(Self { n, p, depth, readout_index: 1 + depth * (n - 1) - p })
    }
}

/// Largest lag a width-`n`, depth-`L` linear RNN can copy: `L(n − 1)`.
pub fn memory_bound(n: usize, depth: usize) -> usize {
    depth * n.saturating_sub(1)
}

/// Linear scalar-input RNN whose readout computes `x_{t−p}` (zero for
/// `t ≤ p`). Each layer is a shift register: the input lands in slot `n`,
/// `V` moves slot `i + 1` to slot `i`, and slot 1 feeds slot `n` of the next
/// layer. Returns the model and the readout vector `e_{readout_index}`.
pub fn build_copier(n: usize, p: usize) -> Result<(ModelParams, Vector)> {
    let spec = CopierSpec::new(n, p)?;
    let cfg = ModelConfig::linear_rnn(spec.depth, n, 1);
    let mut params = ModelParams::zeros(cfg)?;
    for l in 0..spec.depth {
        let layer = params.layer_mut(l);
        layer.u = if l == 0 {
            Matrix::from_fn(n, 1, |i, _| if i == n - 1 { 1.0 } else { 0.0 })
        } else {
            Matrix::from_fn(n, n, |i, j| if i == n - 1 && j == 0 { 1.0 } else { 0.0 })
        };
        layer.v = Matrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    }
    Ok((params, Vector::basis(n, spec.readout_index - 1)))
}

/// [`build_copier`] with the readout folded into the model as a `1 × n` head.
pub fn copier_model(n: usize, p: usize) -> Result<ModelParams> {
    let (mut params, w) = build_copier(n, p)?;
    params.set_readout(Some(Matrix::new(1, n, w.into_vec())?))?;
    Ok(params)
}

/// The lag-`p` copy function on the first input coordinate.
pub fn copy_reference(first_coords: &[f64], p: usize) -> Vec<f64> {
    (0..first_coords.len())
        .map(|t| if t >= p { first_coords[t - p] } else { 0.0 })
        .collect()
}

/// `⟨w, h_t^{(L)}⟩` for every sequence and time, `[seq][t]`.
pub fn read_out(trace: &HiddenTrace, w: &Vector) -> Result<Vec<f64>> {
    if w.dim() != trace.hidden() {
        return Err(mismatch("readout vector", trace.hidden(), w.dim()));
    }
    let mut out = Vec::with_capacity(trace.batch() * trace.steps());
    for seq in 0..trace.batch() {
        for t in 1..=trace.steps() {
            let h = trace.state(seq, t, trace.depth());
            out.push(h.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// One-layer linear RNN of width `nL` whose state is the stacked states
/// `(h_t^{(1)}; …; h_t^{(L)})` of a deep linear RNN.
///
/// With `P_{l,j} = U^{(l)} ⋯ U^{(j+1)}` (identity when `j = l`), block `l`
/// uses `Ũ_l = P_{l,1} U^{(1)}`, `Ṽ_{l,j} = P_{l,j} V^{(j)}` for `j ≤ l`,
/// `b̃_l = Σ_{j ≤ l} P_{l,j} b^{(j)}` and initial state `h_0^{(l)}`.
/// A readout `W` on the deep model becomes `[0 ⋯ 0 W]`.
pub fn build_flattened(deep: &ModelParams) -> Result<ModelParams> {
    let cfg = deep.config();
    if cfg.family != Family::Rnn || !cfg.activation.is_linear() {
        return Err(Error::Unsupported {
            operation: "build_flattened",
            reason: "requires a linear first-order RNN".into(),
        });
    }
    let (n, depth, d) = (cfg.hidden, cfg.depth, cfg.input_dim);
    let wide = n * depth;
    let mut u = Matrix::zeros(wide, d);
    let mut v = Matrix::zeros(wide, wide);
    let mut b = vec![0.0; wide];
    let mut h0 = Vec::with_capacity(wide);
    for l in 0..depth {
        // prods[j] = P_{l,j} for j = 0..=l (0-based layer indices).
        let mut prods = vec![Matrix::identity(n); l + 1];
        for j in (0..l).rev() {
            prods[j] = matmul(&prods[j + 1], &deep.layer(j + 1).u)?;
        }
        let u_block = matmul(&prods[0], &deep.layer(0).u)?;
        for i in 0..n {
            for k in 0..d {
                u.set(l * n + i, k, u_block.get(i, k));
            }
        }
        for (j, pj) in prods.iter().enumerate() {
            let v_block = matmul(pj, &deep.layer(j).v)?;
            for i in 0..n {
                for k in 0..n {
                    v.set(l * n + i, j * n + k, v_block.get(i, k));
                }
            }
            let bj = matvec(pj, &deep.layer(j).b)?;
            for i in 0..n {
                b[l * n + i] += bj[i];
            }
        }
        h0.extend_from_slice(deep.layer(l).h0.as_slice());
    }
    let mut shallow_cfg = ModelConfig::linear_rnn(1, wide, d).with_activation(cfg.activation);
    shallow_cfg.readout = cfg.readout;
    let layer = LayerParams {
        u,
        v,
        b: Vector::new(b)?,
        h0: Vector::new(h0)?,
        tensor: None,
        cp: None,
    };
    let readout = deep.readout().map(|w| {
        Matrix::from_fn(w.rows(), wide, |i, j| if j >= (depth - 1) * n { w.get(i, j - (depth - 1) * n) } else { 0.0 })
    });
    ModelParams::new(shallow_cfg, vec![layer], readout)
}

/// Linear bilinear-only network with `A^{(l)}_{ijk} = 1` iff `i = j = k`
/// (on the leading `min(n, d)` indices at layer 1) and all-ones initial
/// states, so that `h_2^{(L)} = diag(x_1)^L x_2` on those coordinates.
pub fn build_diag_power(n: usize, d: usize, depth: usize) -> Result<ModelParams> {
    let cfg = ModelConfig::new(Family::Bilinear, depth, n, d);
    cfg.validate()?;
    let mut params = ModelParams::zeros(cfg.clone())?;
    for l in 0..depth {
        let m = cfg.layer_input_dim(l);
        let layer = params.layer_mut(l);
        layer.tensor = Some(Tensor3::delta([n, m, n]));
        layer.h0 = Vector::ones(n);
    }
    params.validate()?;
    Ok(params)
}

/// One-layer width-`d` bilinear network whose state is the running
/// elementwise product `x_1 ⊙ ⋯ ⊙ x_t`, which is the parity of `±1` inputs.
pub fn build_parity(d: usize) -> Result<ModelParams> {
    build_diag_power(d, d, 1)
}

/// Linear CP bilinear-only network with factors `A = B = C = [I_R; 0]` at
/// every layer and all-ones initial states. The first state of every layer
/// is the projection of `x_1` onto its first `R` coordinates, so the image
/// of `x_1 ↦ h_1^{(L)}` has dimension exactly `R`.
pub fn build_cp_witness(n: usize, d: usize, rank: usize, depth: usize) -> Result<ModelParams> {
    if rank > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "witness rank R={rank} exceeds min(n, d) = {}",
            n.min(d)
        )));
    }
    let cfg = ModelConfig::new(Family::CpBilinear, depth, n, d).with_rank(rank);
    let mut params = ModelParams::zeros(cfg.clone())?;
    for l in 0..depth {
        let m = cfg.layer_input_dim(l);
        let layer = params.layer_mut(l);
        layer.cp = Some(crate::numkit::CpFactors::new(
            Matrix::eye(n, rank),
            Matrix::eye(m, rank),
            Matrix::eye(n, rank),
        )?);
        layer.h0 = Vector::ones(n);
    }
    params.validate()?;
    Ok(params)
}

/// Free parameters of a depth-`L`, width-`n` RNN with scalar input,
/// excluding initial states: `(2L − 1)n² + (L + 1)n`.
pub fn param_count(n: usize, depth: usize) -> usize {
    (2 * depth - 1) * n * n + (depth + 1) * n
}

/// [`param_count`] plus the `Ln` initial-state entries.
pub fn param_count_with_initial(n: usize, depth: usize) -> usize {
    param_count(n, depth) + depth * n
}

/// Largest root in `n` of `param_count(ñ, L̃) = param_count(n, L)` after
/// substituting `ñ = L(n − 1)/L̃ + 1`:
/// `1 + L̃(1 + √(12ã + 1)) / (2ã)` with `ã = 2LL̃ − L − L̃`.
pub fn critical_n(depth: usize, shallow_depth: usize) -> Result<f64> {
    if shallow_depth == 0 || shallow_depth >= depth {
        return Err(Error::InvalidArgument(format!(
            "critical_n needs 1 <= Lt < L (got L={depth}, Lt={shallow_depth})"
        )));
    }
    let (l, lt) = (depth as f64, shallow_depth as f64);
    let a = 2.0 * l * lt - l - lt;
    Ok(1.0 + lt * (1.0 + (12.0 * a + 1.0).sqrt()) / (2.0 * a))
}

/// Maximum of [`critical_n`] over `1 ≤ L̃ < L ≤ max_depth`, with its argument.
pub fn critical_n_max(max_depth: usize) -> Result<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for l in 2..=max_depth {
        for lt in 1..l {
            let v = critical_n(l, lt)?;
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((l, lt, v));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("max_depth must be at least 2".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossoverRow {
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(rename = "Lt")]
    pub shallow_depth: usize,
    pub p: usize,
    pub n_tilde: usize,
    pub params_deep: usize,
    pub params_shallow: usize,
    pub delta: i64,
}

/// For every `2 ≤ n ≤ n_max`, `1 ≤ L̃ < L ≤ L_max`: the lag `p = L(n − 1)`
/// copied by the deep copier, the smallest width `ñ = ⌈L(n − 1)/L̃⌉ + 1` at
/// which depth `L̃` can copy it, and the parameter difference
/// `param_count(ñ, L̃) − param_count(n, L)`.
pub fn crossover_table(n_max: usize, max_depth: usize) -> Result<Vec<CrossoverRow>> {
    if n_max < 4 {
        return Err(Error::InvalidArgument(format!("crossover table needs n_max >= 4 (got {n_max})")));
    }
    let mut rows = Vec::new();
    for n in 2..=n_max {
        for depth in 2..=max_depth {
            for lt in 1..depth {
                let p = memory_bound(n, depth);
                let n_tilde = p.div_ceil(lt) + 1;
                let deep = param_count(n, depth);
                let shallow = param_count(n_tilde, lt);
                rows.push(CrossoverRow {
                    n,
                    depth,
                    shallow_depth: lt,
                    p,
                    n_tilde,
                    params_deep: deep,
                    params_shallow: shallow,
                    delta: shallow as i64 - deep as i64,
                });
            }
        }
    }
    Ok(rows)
}

/// Rows with `n ≥ 4` whose shallow equivalent is not strictly larger.
pub fn crossover_violations(rows: &[CrossoverRow]) -> Vec<CrossoverRow> {
    rows.iter().filter(|r| r.n >= 4 && r.delta <= 0).copied().collect()
}

pub fn write_crossover_csv<W: Write>(w: W, rows: &[CrossoverRow]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    for r in rows {
        cw.serialize(r)?;
    }
    cw.flush()?;
    Ok(())
}
