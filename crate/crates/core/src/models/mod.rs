//! Deep RNN, second-order RNN (2RNN), bilinear RNN (BIRNN) and
//! CP-factorized variants: configuration, parameters and forward passes.
//!
//! Every layer `l` computes, with `u` the layer input and `h` the previous
//! hidden state of the same layer,
//!
//! ```text
//! z = A ×₁ h ×₂ u + V h + U u + b
//! ```
//!
//! where the bilinear term is absent for plain RNNs and is evaluated as
//! `C · diag(Aᵀh) · Bᵀ · u` for CP layers. With recurrent placement the new
//! state is `σ(z)` and the next layer reads it directly. With depth-only
//! placement the state is `z` itself and the next layer reads `σ(z)`.

mod forward;
mod unroll;

use serde::{Deserialize, Serialize};

pub use forward::{forward, forward_2rnn, forward_cprnn, forward_rnn, HiddenTrace};
pub(crate) use forward::{forward_sequence, Scratch};
pub use unroll::unroll_closed_form;

use crate::error::{mismatch, Error, Result};
use crate::numkit::{CpFactors, Matrix, Rng, Tensor3, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Relu,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(0.0),
        }
    }

    /// `σ'(z)` evaluated at the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Where the nonlinearity sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `h_t = σ(V h_{t-1} + U h_t^{(l-1)} + b)`.
    Recurrent,
    /// `h_t = V h_{t-1} + U σ(h_t^{(l-1)}) + b`; the time recurrence stays linear.
    DepthOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub placement: Placement,
}

impl Activation {
    pub const LINEAR: Activation = Activation {
        kind: ActivationKind::Identity,
        placement: Placement::Recurrent,
    };

    pub fn recurrent(kind: ActivationKind) -> Self {
        Self {
            kind,
            placement: Placement::Recurrent,
        }
    }

    pub fn depth_only(kind: ActivationKind) -> Self {
        Self {
            kind,
            placement: Placement::DepthOnly,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.kind == ActivationKind::Identity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// First-order RNN.
    Rnn,
    /// Second-order RNN with a full weight tensor.
    SecondOrder,
    /// Second-order RNN with only the bilinear term (BIRNN).
    Bilinear,
    /// CP-factorized second-order RNN (CPRNN).
    Cp,
    /// CP-factorized bilinear-only RNN (CPBIRNN).
    CpBilinear,
}

impl Family {
    pub fn has_tensor(self) -> bool {
        matches!(self, Self::SecondOrder | Self::Bilinear)
    }

    pub fn has_cp(self) -> bool {
        matches!(self, Self::Cp | Self::CpBilinear)
    }

    /// First-order terms `U`, `V`, `b` are pinned to zero.
    pub fn bilinear_only(self) -> bool {
        matches!(self, Self::Bilinear | Self::CpBilinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Rnn => "rnn",
            Self::SecondOrder => "2rnn",
            Self::Bilinear => "birnn",
            Self::Cp => "cprnn",
            Self::CpBilinear => "cpbirnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub depth: usize,
    pub hidden: usize,
    pub input_dim: usize,
    /// CP rank; ignored by non-CP families.
    #[serde(default)]
    pub rank: usize,
    pub activation: Activation,
    /// Apply σ to the top layer output under depth-only placement.
    #[serde(default)]
    pub top_activation: bool,
    /// Output dimension of a linear readout on the top layer, if any.
    #[serde(default)]
    pub readout: Option<usize>,
}

impl ModelConfig {
    pub fn new(family: Family, depth: usize, hidden: usize, input_dim: usize) -> Self {
        Self {
            family,
            depth,
            hidden,
            input_dim,
            rank: 0,
            activation: Activation::LINEAR,
            top_activation: false,
            readout: None,
        }
    }

    pub fn linear_rnn(depth: usize, hidden: usize, input_dim: usize) -> Self {
        Self::new(Family::Rnn, depth, hidden, input_dim)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn with_readout(mut self, out_dim: usize) -> Self {
        self.readout = Some(out_dim);
        self
    }

    pub fn with_top_activation(mut self, on: bool) -> Self {
        self.top_activation = on;
        self
    }

    /// Input dimension of layer `l` (0-based).
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    /// Dimension of the model output (readout output or top hidden state).
    pub fn output_dim(&self) -> usize {
        self.readout.unwrap_or(self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "depth, hidden and input_dim must be positive (got L={}, n={}, d={})",
                self.depth, self.hidden, self.input_dim
            )));
        }
        if self.readout == Some(0) {
            return Err(Error::InvalidArgument("readout dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of one layer. `u` is `n × m` with `m` the layer input
/// dimension, `tensor` is `n × m × n` (previous state, input, output) and
/// CP factors are `A: n × R`, `B: m × R`, `C: n × R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Vector,
    pub h0: Vector,
    #[serde(default)]
    pub tensor: Option<Tensor3>,
    #[serde(default)]
    pub cp: Option<CpFactors>,
}

impl LayerParams {
    pub fn zeros(config: &ModelConfig, l: usize) -> Self {
        let n = config.hidden;
        let m = config.layer_input_dim(l);
        Self {
            u: Matrix::zeros(n, m),
            v: Matrix::zeros(n, n),
            b: Vector::zeros(n),
            h0: Vector::zeros(n),
            tensor: config.family.has_tensor().then(|| Tensor3::zeros([n, m, n])),
            cp: config
                .family
                .has_cp()
                .then(|| CpFactors::zeros(n, m, n, config.rank)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.v.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }
}

/// Which parameter block a slice belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    U,
    V,
    Bias,
    Initial,
    Tensor,
    CpA,
    CpB,
    CpC,
    Readout,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::U => "U",
            Self::V => "V",
            Self::Bias => "b",
            Self::Initial => "h0",
            Self::Tensor => "A",
            Self::CpA => "cp.A",
            Self::CpB => "cp.B",
            Self::CpC => "cp.C",
            Self::Readout => "readout",
        }
    }

    pub fn is_first_order(self) -> bool {
        matches!(self, Self::U | Self::V | Self::Bias)
    }
}

/// A named view into one parameter block. `layer` is 0-based; the readout
/// uses `layer == depth`.
pub struct ParamSlice<'a> {
    pub layer: usize,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

pub struct ParamSliceMut<'a> {
    pub layer: usize,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layers: Vec<LayerParams>,
    readout: Option<Matrix>,
}

impl ModelParams {
    /// Assembles and validates a model.
    pub fn new(
        config: ModelConfig,
        layers: Vec<LayerParams>,
        readout: Option<Matrix>,
    ) -> Result<Self> {
        let p = Self {
            config,
            layers,
            readout,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.depth)
            .map(|l| LayerParams::zeros(&config, l))
            .collect();
        let readout = config.readout.map(|k| Matrix::zeros(k, config.hidden));
        Self::new(config, layers, readout)
    }

    /// Uniform `U[-s, s]` initialization with `s = 1/√n` for every trainable
    /// block. Initial states start at zero, except for bilinear-only
    /// families where a zero state would silence the network.
    pub fn random(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let scale = 1.0 / (config.hidden as f64).sqrt();
        Self::random_with_scale(config, rng, scale)
    }

    pub fn random_with_scale(config: ModelConfig, rng: &mut Rng, scale: f64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let bilinear_only = p.config.family.bilinear_only();
        for s in p.param_slices_mut() {
            let draw = match s.kind {
                ParamKind::U | ParamKind::V | ParamKind::Bias => !bilinear_only,
                ParamKind::Initial => bilinear_only,
                _ => true,
            };
            if draw {
                for x in s.data.iter_mut() {
                    *x = rng.uniform_range(-scale, scale);
                }
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l]
    }

    /// Mutable layer access; call [`ModelParams::validate`] after structural edits.
    pub fn layer_mut(&mut self, l: usize) -> &mut LayerParams {
        &mut self.layers[l]
    }

    pub fn readout(&self) -> Option<&Matrix> {
        self.readout.as_ref()
    }

    pub fn readout_mut(&mut self) -> Option<&mut Matrix> {
        self.readout.as_mut()
    }

    /// Replaces the readout head (and the configured output dimension).
    pub fn set_readout(&mut self, readout: Option<Matrix>) -> Result<()> {
        if let Some(w) = &readout {
            if w.cols() != self.config.hidden {
                return Err(mismatch("readout columns", self.config.hidden, w.cols()));
            }
        }
        self.config.readout = readout.as_ref().map(|w| w.rows());
        self.readout = readout;
        Ok(())
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.config.activation = activation;
        self
    }

    pub fn set_top_activation(&mut self, on: bool) {
        self.config.top_activation = on;
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.layers.len() != cfg.depth {
            return Err(mismatch("layer count", cfg.depth, self.layers.len()));
        }
        let n = cfg.hidden;
        for (l, layer) in self.layers.iter().enumerate() {
            let m = cfg.layer_input_dim(l);
            let shape_ok = layer.u.shape() == (n, m)
                && layer.v.shape() == (n, n)
                && layer.b.dim() == n
                && layer.h0.dim() == n;
            if !shape_ok {
                return Err(mismatch(
                    "layer shapes",
                    format!("layer {}: U {n}x{m}, V {n}x{n}, b/h0 dim {n}", l + 1),
                    format!(
                        "U {:?}, V {:?}, b {}, h0 {}",
                        layer.u.shape(),
                        layer.v.shape(),
                        layer.b.dim(),
                        layer.h0.dim()
                    ),
                ));
            }
            if layer.tensor.is_some() && layer.cp.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has both a full tensor and CP factors",
                    l + 1
                )));
            }
            match (&layer.tensor, cfg.family.has_tensor()) {
                (Some(t), true) if t.dims() == [n, m, n] => {}
                (Some(t), true) => {
                    return Err(mismatch("tensor dims", format!("[{n}, {m}, {n}]"), format!("{:?}", t.dims())))
                }
                (None, false) => {}
                (_, expected) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {}: family {} {} a weight tensor",
                        l + 1,
                        cfg.family.name(),
                        if expected { "requires" } else { "does not take" }
                    )))
                }
            }
            match (&layer.cp, cfg.family.has_cp()) {
                (Some(f), true) => {
                    let r = cfg.rank;
                    if f.a.shape() != (n, r) || f.b.shape() != (m, r) || f.c.shape() != (n, r) {
                        return Err(mismatch(
                            "cp factor shapes",
                            format!("A {n}x{r}, B {m}x{r}, C {n}x{r}"),
                            format!("A {:?}, B {:?}, C {:?}", f.a.shape(), f.b.shape(), f.c.shape()),
                        ));
                    }
                }
                (None, false) => {}
                (_, expected) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {}: family {} {} CP factors",
                        l + 1,
                        cfg.family.name(),
                        if expected { "requires" } else { "does not take" }
                    )))
                }
            }
            if cfg.family.bilinear_only()
                && !(layer.u.is_zero() && layer.v.is_zero() && layer.b.as_slice().iter().all(|&x| x == 0.0))
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: bilinear-only family requires U = V = b = 0",
                    l + 1
                )));
            }
        }
        match (&self.readout, cfg.readout) {
            (None, None) => {}
            (Some(w), Some(k)) if w.shape() == (k, n) => {}
            (w, k) => {
                return Err(mismatch(
                    "readout",
                    format!("{k:?} x {n}"),
                    format!("{:?}", w.as_ref().map(|w| w.shape())),
                ))
            }
        }
        for s in self.param_slices() {
            if s.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("layer {} {}", s.layer + 1, s.kind.name()),
                });
            }
        }
        Ok(())
    }

    /// All parameter blocks in a fixed order (layer by layer, then readout).
    pub fn param_slices(&self) -> Vec<ParamSlice<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(ParamSlice { layer: l, kind: ParamKind::U, data: layer.u.as_slice() });
            out.push(ParamSlice { layer: l, kind: ParamKind::V, data: layer.v.as_slice() });
            out.push(ParamSlice { layer: l, kind: ParamKind::Bias, data: layer.b.as_slice() });
            out.push(ParamSlice { layer: l, kind: ParamKind::Initial, data: layer.h0.as_slice() });
            if let Some(t) = &layer.tensor {
                out.push(ParamSlice { layer: l, kind: ParamKind::Tensor, data: t.as_slice() });
            }
            if let Some(f) = &layer.cp {
                out.push(ParamSlice { layer: l, kind: ParamKind::CpA, data: f.a.as_slice() });
                out.push(ParamSlice { layer: l, kind: ParamKind::CpB, data: f.b.as_slice() });
                out.push(ParamSlice { layer: l, kind: ParamKind::CpC, data: f.c.as_slice() });
            }
        }
        if let Some(w) = &self.readout {
            out.push(ParamSlice { layer: self.layers.len(), kind: ParamKind::Readout, data: w.as_slice() });
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<ParamSliceMut<'_>> {
        let depth = self.layers.len();
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push(ParamSliceMut { layer: l, kind: ParamKind::U, data: layer.u.as_mut_slice() });
            out.push(ParamSliceMut { layer: l, kind: ParamKind::V, data: layer.v.as_mut_slice() });
            out.push(ParamSliceMut { layer: l, kind: ParamKind::Bias, data: layer.b.as_mut_slice() });
            out.push(ParamSliceMut { layer: l, kind: ParamKind::Initial, data: layer.h0.as_mut_slice() });
            if let Some(t) = &mut layer.tensor {
                out.push(ParamSliceMut { layer: l, kind: ParamKind::Tensor, data: t.as_mut_slice() });
            }
            if let Some(f) = &mut layer.cp {
                out.push(ParamSliceMut { layer: l, kind: ParamKind::CpA, data: f.a.as_mut_slice() });
                out.push(ParamSliceMut { layer: l, kind: ParamKind::CpB, data: f.b.as_mut_slice() });
                out.push(ParamSliceMut { layer: l, kind: ParamKind::CpC, data: f.c.as_mut_slice() });
            }
        }
        if let Some(w) = &mut self.readout {
            out.push(ParamSliceMut { layer: depth, kind: ParamKind::Readout, data: w.as_mut_slice() });
        }
        out
    }

    /// Whether a block is free during training. Bilinear-only families pin
    /// `U`, `V`, `b` to zero.
    pub fn is_trainable(&self, kind: ParamKind, freeze_initial: bool) -> bool {
        match kind {
            ParamKind::U | ParamKind::V | ParamKind::Bias => !self.config.family.bilinear_only(),
            ParamKind::Initial => !freeze_initial,
            _ => true,
        }
    }

    /// Number of free parameters, optionally counting initial states.
    pub fn count_parameters(&self, include_initial: bool) -> usize {
        self.param_slices()
            .iter()
            .filter(|s| self.is_trainable(s.kind, !include_initial))
            .map(|s| s.data.len())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_params()
    }

    /// Short content hash of the serialized parameters.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&ModelFile::from(self)).expect("model serializes");
        crate::hash_hex(json.as_bytes())
    }
}

pub const MODEL_FORMAT: &str = "rnn-depth/model-v1";

/// On-disk JSON layout of a model: family, configuration and per-layer
/// flat arrays with their dimensions.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    family: Family,
    config: ModelConfig,
    layers: Vec<LayerParams>,
    readout: Option<Matrix>,
}

impl From<&ModelParams> for ModelFile {
    fn from(p: &ModelParams) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            family: p.config.family,
            config: p.config.clone(),
            layers: p.layers.clone(),
            readout: p.readout.clone(),
        }
    }
}

impl ModelFile {
    fn into_params(self) -> Result<ModelParams> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown model format {:?}",
                self.format
            )));
        }
        if self.family != self.config.family {
            return Err(Error::InvalidArgument("family does not match config.family".into()));
        }
        ModelParams::new(self.config, self.layers, self.readout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use proptest::prelude::*;

    #[test]
    fn bilinear_only_rejects_first_order_terms() {
        let cfg = ModelConfig::new(Family::Bilinear, 1, 2, 2);
        let mut p = ModelParams::zeros(cfg.clone()).unwrap();
        p.layer_mut(0).b[0] = 1.0;
        assert!(p.validate().is_err());
        let mut rng = Rng::new(1);
        let p = ModelParams::random(cfg, &mut rng).unwrap();
        assert!(p.layer(0).u.is_zero() && p.layer(0).v.is_zero());
    }

    #[test]
    fn tensor_and_cp_are_exclusive() {
        let cfg = ModelConfig::new(Family::SecondOrder, 1, 2, 2);
        let mut p = ModelParams::zeros(cfg).unwrap();
        p.layer_mut(0).cp = Some(CpFactors::zeros(2, 2, 2, 1));
        assert!(p.validate().is_err());
    }

    #[test]
    fn layer_dims_follow_depth() {
        let cfg = ModelConfig::new(Family::Cp, 3, 4, 2).with_rank(3);
        let p = ModelParams::zeros(cfg).unwrap();
        assert_eq!(p.layer(0).u.shape(), (4, 2));
        assert_eq!(p.layer(1).u.shape(), (4, 4));
        assert_eq!(p.layer(0).cp.as_ref().unwrap().b.shape(), (2, 3));
        assert_eq!(p.layer(2).cp.as_ref().unwrap().b.shape(), (4, 3));
    }

    #[test]
    fn rejects_bad_json() {
        assert!(ModelParams::from_json("{}").is_err());
        let p = ModelParams::zeros(ModelConfig::linear_rnn(1, 2, 1)).unwrap();
        let bad = p.to_json().unwrap().replace(MODEL_FORMAT, "other");
        assert!(ModelParams::from_json(&bad).is_err());
    }

    fn arb_family() -> impl Strategy<Value = Family> {
        prop_oneof![
            Just(Family::Rnn),
            Just(Family::SecondOrder),
            Just(Family::Bilinear),
            Just(Family::Cp),
            Just(Family::CpBilinear),
        ]
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(
            family in arb_family(),
            depth in 1usize..4,
            hidden in 1usize..4,
            input in 1usize..4,
            rank in 0usize..4,
            readout in proptest::option::of(1usize..3),
            seed in any::<u64>(),
        ) {
            let mut cfg = ModelConfig::new(family, depth, hidden, input).with_rank(rank);
            cfg.readout = readout;
            let mut rng = Rng::new(seed);
            let mut p = ModelParams::random_with_scale(cfg, &mut rng, 1e3).unwrap();
            // Exercise awkward magnitudes.
            for s in p.param_slices_mut() {
                for x in s.data.iter_mut() {
                    *x *= 10f64.powi((rng.below(40) as i32) - 20);
                }
            }
            let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
            let a: Vec<u64> = p.param_slices().iter().flat_map(|s| s.data.iter().map(|x| x.to_bits())).collect();
            let b: Vec<u64> = back.param_slices().iter().flat_map(|s| s.data.iter().map(|x| x.to_bits())).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.config(), p.config());
        }
    }
}
