//! Small fully connected networks with exact backpropagation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::Mat;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => z.tanh(),
            HiddenActivation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - a * a,
            HiddenActivation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Linear => z,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            OutputActivation::Linear => 1.0,
            OutputActivation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer: `weight` is `[out x in]`, `bias` is `[out x 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Mat,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Mat::zeros(self.weight.rows(), self.weight.cols()),
            bias: Mat::zeros(self.bias.rows(), 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    hidden: HiddenActivation,
    output: OutputActivation,
}

/// Post-activation values of every layer from one forward pass.
///
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Mat>,
}

impl MlpCache {
    pub fn input(&self) -> &Mat {
        &self.activations[0]
    }

    pub fn output(&self) -> &Mat {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch(&self) -> usize {
        self.activations[0].cols()
    }
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| {
                g.weight.same_shape(&p.weight) && g.bias.same_shape(&p.bias)
            })
    }

    fn expect_same_layout(&self, other: &MlpGrads, op: &'static str) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.same_shape(&b.weight) && a.bias.same_shape(&b.bias)
            });
        if same {
            Ok(())
        } else {
            Err(shape_err(op, "matching gradient layout", "different layout"))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MlpGrads) -> Result<()> {
        self.expect_same_layout(other, "MlpGrads::axpy")?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(alpha, &b.weight)?;
            a.bias.axpy(alpha, &b.bias)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight.scale_in_place(alpha);
            l.bias.scale_in_place(alpha);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.data().iter().chain(l.bias.data()).all(|&v| v == 0.0))
    }

    pub fn max_abs_diff(&self, other: &MlpGrads) -> Result<f64> {
        self.expect_same_layout(other, "MlpGrads::max_abs_diff")?;
        Ok(self
            .flat()
            .iter()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.data());
        out.extend_from_slice(l.bias.data());
    }
    out
}

impl MlpParams {
    /// Builds a network from explicit layers, checking that they chain.
    pub fn new(
        layers: Vec<Layer>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (l.out_dim(), 1) {
                return Err(shape_err(
                    "MlpParams::new",
                    format!("bias {}x1 in layer {i}", l.out_dim()),
                    format!("{}x{}", l.bias.rows(), l.bias.cols()),
                ));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(shape_err(
                    "MlpParams::new",
                    format!("layer {i} in-dim {}", layers[i - 1].out_dim()),
                    l.in_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    /// Glorot-uniform weights, zero biases. `dims` lists every layer width
    /// including input and output.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Mat::from_fn(fan_out, fan_in, |_, _| rng.random_range(-s..=s)),
                    bias: Mat::zeros(fan_out, 1),
                }
            })
            .collect();
        Self::new(layers, hidden, output)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// All parameters in layer order (weights row-major, then bias).
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(shape_err("set_flat", self.num_params(), values.len()));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for m in [&mut l.weight, &mut l.bias] {
                let n = m.data().len();
                m.data_mut().copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &MlpParams) -> Result<f64> {
        if self.num_params() != other.num_params() {
            return Err(shape_err("MlpParams::max_abs_diff", self.num_params(), other.num_params()));
        }
        Ok(self
            .flat()
            .iter()
            .zip(other.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Stable hash of the exact parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.flat() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn forward(&self, input: &Mat) -> Result<(Mat, MlpCache)> {
        if input.rows() != self.input_dim() {
            return Err(shape_err(
                "mlp_forward",
                format!("{} input rows", self.input_dim()),
                input.rows(),
            ));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matmul(&activations[i])?;
            z.add_col_broadcast(&l.bias)?;
            let a = if i == last {
                let out = self.output;
                z.map(|v| out.apply(v))
            } else {
                let hid = self.hidden;
                z.map(|v| hid.apply(v))
            };
            activations.push(a);
        }
        let cache = MlpCache { activations };
        let out = cache.output().clone();
        out.check_finite("mlp_forward")?;
        Ok((out, cache))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, input: &Mat) -> Result<Mat> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Gradient of `sum(output ⊙ output_grad)` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, cache: &MlpCache, output_grad: &Mat) -> Result<(MlpGrads, Mat)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(shape_err(
                "mlp_backward",
                format!("cache for {} layers", self.layers.len()),
                cache.activations.len().saturating_sub(1),
            ));
        }
        if !output_grad.same_shape(cache.output()) {
            return Err(shape_err(
                "mlp_backward",
                format!("{:?}", cache.output().shape()),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let last = self.layers.len() - 1;
        let out_act = self.output;
        let mut delta = Mat::from_fn(output_grad.rows(), output_grad.cols(), |r, c| {
            output_grad.get(r, c) * out_act.derivative_from_output(cache.output().get(r, c))
        });
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let a_in = &cache.activations[i];
            let weight = delta.matmul_t(a_in)?;
            let bias = delta.row_sums();
            grads.push(Layer { weight, bias });
            let mut back = layer.weight.t_matmul(&delta)?;
            if i > 0 {
                let hid = self.hidden;
                for (g, &a) in back.data_mut().iter_mut().zip(a_in.data()) {
                    *g *= hid.derivative_from_output(a);
                }
            }
            delta = back;
        }
        grads.reverse();
        let grads = MlpGrads { layers: grads };
        for l in &grads.layers {
            l.weight.check_finite("mlp_backward")?;
            l.bias.check_finite("mlp_backward")?;
        }
        delta.check_finite("mlp_backward")?;
        Ok((grads, delta))
    }
}
