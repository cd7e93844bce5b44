//! Multilayer perceptron: architecture, flat parameter storage, forward map,
//! and exact reverse-mode gradients.
//!
//! Parameters live in one flat `f64` vector so the sampler can treat the
//! network as a point in R^n. Per-layer `(offset, fan_in, fan_out)` records
//! recover the weight matrices and bias vectors: layer `l` stores its weights
//! row-major (`fan_out x fan_in`) at `offset`, followed by `fan_out` biases.
//!
//! Hidden layers apply the activation; the output layer is affine.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output. Works for both
    /// variants: tanh' = 1 - a^2 and relu' = [a > 0].
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape. At most two hidden layers; zero hidden layers gives a plain
/// affine model, which the conjugate-posterior oracles rely on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    input_dim: usize,
    hidden_layers: Vec<usize>,
    output_dim: usize,
    activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerLayout {
    #[inline]
    pub fn len(&self) -> usize {
        (self.fan_in + 1) * self.fan_out
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const MAX_HIDDEN_LAYERS: usize = 2;
pub const MAX_HIDDEN_WIDTH: usize = 1024;

impl Architecture {
    /// Scalar-output network (`output_dim` = 1).
    pub fn new(
        input_dim: usize,
        hidden_layers: Vec<usize>,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if hidden_layers.len() > MAX_HIDDEN_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "at most {MAX_HIDDEN_LAYERS} hidden layers supported, got {}",
                hidden_layers.len()
            )));
        }
        if hidden_layers
            .iter()
            .any(|&w| w == 0 || w > MAX_HIDDEN_WIDTH)
        {
            return Err(Error::InvalidConfig(format!(
                "hidden widths must lie in [1, {MAX_HIDDEN_WIDTH}], got {hidden_layers:?}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_layers,
            output_dim: 1,
            activation,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn hidden_layers(&self) -> &[usize] {
        &self.hidden_layers
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of weight layers (hidden + output).
    #[inline]
    pub fn num_layers(&self) -> usize {
        self.hidden_layers.len() + 1
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &width in &self.hidden_layers {
            dims.push((fan_in, width));
            fan_in = width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let l = LayerLayout {
                    offset,
                    fan_in,
                    fan_out,
                };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }
}

/// Flat network parameters plus the per-layer layout that slices them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerLayout>,
}

impl ParamVector {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            values: vec![0.0; arch.parameter_count()],
            layout: arch.layout(),
        }
    }

    pub fn from_values(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        let expected = arch.parameter_count();
        if values.len() != expected {
            return Err(Error::LayoutMismatch(format!(
                "expected {expected} parameters for the architecture, got {}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: arch.layout(),
        })
    }

    /// Seeded Gaussian init: every parameter of layer `l` is drawn from
    /// N(0, 1/fan_in_l).
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let layout = arch.layout();
        let mut values = vec![0.0; arch.parameter_count()];
        for l in &layout {
            let sd = 1.0 / (l.fan_in as f64).sqrt();
            for v in &mut values[l.offset..l.offset + l.len()] {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        }
        Self { values, layout }
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All parameters of layer `l` (weights then biases).
    pub fn layer_slice(&self, l: usize) -> &[f64] {
        let lay = self.layout[l];
        &self.values[lay.offset..lay.offset + lay.len()]
    }

    /// New vector with this layout and the given values (lengths must agree).
    pub(crate) fn with_same_layout(&self, values: Vec<f64>) -> ParamVector {
        debug_assert_eq!(self.values.len(), values.len());
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    fn check_arch(&self, arch: &Architecture, context: &'static str) -> Result<()> {
        if self.layout != arch.layout() {
            return Err(Error::LayoutMismatch(format!(
                "{context}: parameter layout does not match the architecture"
            )));
        }
        Ok(())
    }
}

/// Feature rows paired with regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::TooFewRows {
                context: "design matrix",
                required: 1,
                actual: 0,
            });
        }
        if rows.len() != targets.len() {
            return Err(Error::LengthMismatch {
                context: "design matrix rows vs targets",
                left: rows.len(),
                right: targets.len(),
            });
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::RowDimensionMismatch {
                    row: i,
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("design matrix row"));
            }
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix target"));
        }
        Ok(Self { rows, targets })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    #[inline]
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    #[inline]
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DesignMatrix {
        DesignMatrix {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Same rows with targets replaced (used by leakage tests).
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<DesignMatrix> {
        DesignMatrix::new(self.rows.clone(), targets)
    }
}

/// Dropout state threaded through the shared forward/backward pass:
/// per-hidden-layer keep flags and the inverted-dropout rescale factor.
#[derive(Clone, Copy)]
pub(crate) struct MaskView<'a> {
    pub keep: &'a [Vec<bool>],
    pub scale: f64,
}

/// Reusable buffers for one network evaluation.
pub struct Workspace {
    /// `fed[l]` is what feeds layer `l`: `fed[0]` is the input, later entries
    /// are post-activation, post-mask values.
    fed: Vec<Vec<f64>>,
    /// Pre-mask activation of each hidden layer (for the activation gradient).
    raw: Vec<Vec<f64>>,
    /// Upstream gradients w.r.t. each layer's (masked) output.
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(arch: &Architecture) -> Self {
        let mut fed = vec![vec![0.0; arch.input_dim()]];
        let mut raw = Vec::new();
        let mut delta = Vec::new();
        for &(_, fan_out) in &arch.layer_dims() {
            fed.push(vec![0.0; fan_out]);
            raw.push(vec![0.0; fan_out]);
            delta.push(vec![0.0; fan_out]);
        }
        Self { fed, raw, delta }
    }
}

/// Unchecked forward pass into the workspace; returns the scalar output.
/// Callers guarantee `x.len() == arch.input_dim()` and matching params.
pub(crate) fn forward_ws(
    arch: &Architecture,
    values: &[f64],
    x: &[f64],
    mask: Option<MaskView<'_>>,
    ws: &mut Workspace,
) -> f64 {
    ws.fed[0].copy_from_slice(x);
    let layout = arch.layout();
    let n_layers = layout.len();
    let act = arch.activation();

    for (l, lay) in layout.iter().enumerate() {
        let is_output = l + 1 == n_layers;
        let (before, after) = ws.fed.split_at_mut(l + 1);
        let input = &before[l];
        let out = &mut after[0];
        for o in 0..lay.fan_out {
            let row = lay.offset + o * lay.fan_in;
            let mut z = values[lay.offset + lay.fan_in * lay.fan_out + o];
            for (i, &xi) in input.iter().enumerate() {
                z += values[row + i] * xi;
            }
            if is_output {
                out[o] = z;
            } else {
                let a = act.apply(z);
                ws.raw[l][o] = a;
                out[o] = match mask {
                    Some(m) => {
                        if m.keep[l][o] {
                            a * m.scale
                        } else {
                            0.0
                        }
                    }
                    None => a,
                };
            }
        }
    }
    ws.fed[n_layers][0]
}

/// Reverse pass accumulating `upstream * d f(x) / d params` into `grad`.
/// Must run right after `forward_ws` with the same arguments.
pub(crate) fn backward_ws(
    arch: &Architecture,
    values: &[f64],
    upstream: f64,
    mask: Option<MaskView<'_>>,
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let layout = arch.layout();
    let n_layers = layout.len();
    let act = arch.activation();

    ws.delta[n_layers - 1][0] = upstream;
    for l in (0..n_layers).rev() {
        let lay = layout[l];
        let is_output = l + 1 == n_layers;
        let bias_base = lay.offset + lay.fan_in * lay.fan_out;
        for o in 0..lay.fan_out {
            // d loss / d pre-activation of unit o.
            let mut dz = ws.delta[l][o];
            if !is_output {
                dz = match mask {
                    Some(m) => {
                        if m.keep[l][o] {
                            dz * m.scale
                        } else {
                            0.0
                        }
                    }
                    None => dz,
                };
                dz *= act.grad_from_output(ws.raw[l][o]);
            }
            if dz == 0.0 {
                continue;
            }
            grad[bias_base + o] += dz;
            let row = lay.offset + o * lay.fan_in;
            let input = &ws.fed[l];
            for (i, &xi) in input.iter().enumerate() {
                grad[row + i] += dz * xi;
            }
            if l > 0 {
                let prev_lay = layout[l - 1];
                for i in 0..prev_lay.fan_out {
                    ws.delta[l - 1][i] += values[row + i] * dz;
                }
            }
        }
    }
    for d in &mut ws.delta {
        d.fill(0.0);
    }
}

fn check_input(arch: &Architecture, x: &[f64]) -> Result<()> {
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: arch.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Evaluates `f(x)` for one feature vector.
pub fn forward(arch: &Architecture, params: &ParamVector, x: &[f64]) -> Result<f64> {
    params.check_arch(arch, "forward")?;
    check_input(arch, x)?;
    let mut ws = Workspace::new(arch);
    Ok(forward_ws(arch, params.values(), x, None, &mut ws))
}

/// Evaluates `f` on each row; element `i` equals `forward` on row `i`.
pub fn forward_batch(
    arch: &Architecture,
    params: &ParamVector,
    rows: &[Vec<f64>],
) -> Result<Vec<f64>> {
    params.check_arch(arch, "forward_batch")?;
    let mut ws = Workspace::new(arch);
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != arch.input_dim() {
            return Err(Error::RowDimensionMismatch {
                row: i,
                expected: arch.input_dim(),
                actual: row.len(),
            });
        }
        out.push(forward_ws(arch, params.values(), row, None, &mut ws));
    }
    Ok(out)
}

/// Gradient of `upstream * f(x)` with respect to every parameter, laid out
/// exactly like `params`.
pub fn grad_params(
    arch: &Architecture,
    params: &ParamVector,
    x: &[f64],
    upstream: f64,
) -> Result<ParamVector> {
    params.check_arch(arch, "grad_params")?;
    check_input(arch, x)?;
    let mut ws = Workspace::new(arch);
    let mut grad = vec![0.0; params.len()];
    forward_ws(arch, params.values(), x, None, &mut ws);
    backward_ws(arch, params.values(), upstream, None, &mut ws, &mut grad);
    ParamVector::from_values(arch, grad)
}
