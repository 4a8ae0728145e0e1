//! MLP encoder with an explicit backward pass, momentum SGD, and the
//! exponential-moving-average update that ties the key encoder to the query
//! encoder.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{momentum_update, sgd_step, LrSchedule, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, matmul, matmul_tn, Matrix};

/// Layer widths of the encoder: `input → hidden… → output`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    /// `(fan_in, fan_out)` for every linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Parameters of an encoder (either the query or the key network).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Per-layer `∂L/∂θ`, mirroring [`EncoderParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.cols(), l.weight.rows()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Layer inputs recorded by [`forward`]; `inputs[0]` is the batch itself and
/// `inputs[l]` is the post-ReLU activation feeding layer `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

impl EncoderParams {
    /// Kaiming-uniform initialization: `W ~ U(−√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data)
                        .expect("length matches by construction"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { arch, layers }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Self { arch, layers }
    }

    /// Single linear layer computing the identity map on `dim` inputs.
    pub fn identity(dim: usize) -> Self {
        Self {
            arch: Architecture::new(dim, vec![], dim),
            layers: vec![Layer {
                weight: Matrix::identity(dim),
                bias: vec![0.0; dim],
            }],
        }
    }

    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        let dims = arch.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "architecture has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (l, ((fan_in, fan_out), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != (*fan_out, *fan_in) || layer.bias.len() != *fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected {fan_out}x{fan_in} weight and {fan_out} biases"
                )));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn is_shape_compatible(&self, other: &EncoderParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    pub(crate) fn check_compatible(&self, layers: &[Layer], what: &str) -> Result<()> {
        let ok = self.layers.len() == layers.len()
            && self.layers.iter().zip(layers).all(|(a, b)| a.same_shape(b));
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what} is not shape-compatible with the encoder parameters"
            )))
        }
    }

    /// All parameters in layer order (weights row-major, then biases).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Inverse of [`EncoderParams::flatten`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Layer names used by the gradient telemetry, e.g. `fc0.weight`.
    pub fn parameter_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("fc{l}.weight"), format!("fc{l}.bias")])
            .collect()
    }
}

/// Runs the batch (`B × input`) through the network: ReLU after every hidden
/// layer, a plain linear head.
pub fn forward(params: &EncoderParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if batch.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} columns, encoder expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut act = batch.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = Matrix::zeros(act.rows(), layer.weight.rows());
        gemm(1.0, &act, false, &layer.weight, true, 0.0, &mut z)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        if l + 1 < n_layers {
            for v in z.as_mut_slice() {
                *v = v.max(0.0);
            }
        }
        inputs.push(std::mem::replace(&mut act, z));
    }
    Ok((act, ForwardCache { inputs }))
}

/// Forward pass without keeping activations (key encoder, feature extraction).
pub fn forward_only(params: &EncoderParams, batch: &Matrix) -> Result<Matrix> {
    forward(params, batch).map(|(h, _)| h)
}

/// Backpropagates `∂L/∂h` to every parameter. Input gradients are not formed.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_h: &Matrix,
) -> Result<GradientSet> {
    let n_layers = params.layers.len();
    if cache.inputs.len() != n_layers {
        return Err(Error::StaleCache(format!(
            "cache holds {} layers, encoder has {n_layers}",
            cache.inputs.len()
        )));
    }
    for (l, (input, layer)) in cache.inputs.iter().zip(&params.layers).enumerate() {
        if input.cols() != layer.weight.cols() || input.rows() != grad_h.rows() {
            return Err(Error::StaleCache(format!(
                "layer {l} input is {}x{}, expected {}x{}",
                input.rows(),
                input.cols(),
                grad_h.rows(),
                layer.weight.cols()
            )));
        }
    }
    if grad_h.cols() != params.output_dim() {
        return Err(Error::StaleCache(format!(
            "upstream gradient has {} columns, encoder output is {}",
            grad_h.cols(),
            params.output_dim()
        )));
    }

    let mut grads: Vec<Option<Layer>> = vec![None; n_layers];
    let mut dz = grad_h.clone();
    for l in (0..n_layers).rev() {
        let input = &cache.inputs[l];
        let weight_grad = matmul_tn(&dz, input)?;
        let mut bias_grad = vec![0.0; dz.cols()];
        for row in dz.iter_rows() {
            for (b, g) in bias_grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        grads[l] = Some(Layer {
            weight: weight_grad,
            bias: bias_grad,
        });
        if l > 0 {
            let mut da = matmul(&dz, &params.layers[l].weight)?;
            // input[l] = relu(z[l-1]); the derivative is taken as 0 at the kink
            for (g, a) in da.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            dz = da;
        }
    }
    Ok(GradientSet {
        layers: grads.into_iter().map(|g| g.expect("filled above")).collect(),
    })
}
