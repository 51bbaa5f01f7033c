//! A minimal feed-forward CNN with exact reverse-mode gradients.
//!
//! Layers are valid stride-1 convolutions (no bias), dense linear layers
//! with bias, and elementwise activations. The loss is softmax
//! cross-entropy plus the spectral penalty (λ/2)·Σ_k σ(W^k)², where the
//! per-layer σ's come from the estimator the `LossConfig` selects.
//! Activations carry no penalty: they are short maps (Lipschitz constant at
//! most 1), so they never amplify perturbations and contribute nothing
//! trainable to the bound.
//!
//! Everything is deterministic: identical parameters and inputs give
//! bitwise-identical outputs, and batch gradients are reduced in fixed
//! index order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{ConvKernel, Kernel};
use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};
use crate::separation::{separate_kernel, separated_estimates, separated_penalty_gradient};
use crate::spectral::{
    penalty_gradient_matrix, penalty_gradient_valid_conv, power_estimate_lenient,
    spectral_norm_exact, PowerSettings,
};

/// Dense value passing between layers: `channels` planes of `rows × cols`,
/// flattened channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "buffer length {} does not match {channels}x{rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            channels: 1,
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }

    pub fn from_vector(v: Vec<f64>) -> Self {
        Self {
            channels: v.len(),
            rows: 1,
            cols: 1,
            data: v,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, ch: usize, i: usize, j: usize) -> f64 {
        self.data[ch * self.rows * self.cols + i * self.cols + j]
    }

    pub fn at_mut(&mut self, ch: usize, i: usize, j: usize) -> &mut f64 {
        &mut self.data[ch * self.rows * self.cols + i * self.cols + j]
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Self::ReLU => x.max(0.0),
            Self::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Self::Tanh => x.tanh(),
        }
    }

    /// Derivative at `x`; the ReLU subgradient at 0 is defined as 0.
    fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Self::Tanh => 1.0 - x.tanh() * x.tanh(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ReLU => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// Valid stride-1 convolution; records its input spatial extent because
    /// the Fourier penalty pads kernels to that size.
    Conv {
        kernel: ConvKernel,
        input_rows: usize,
        input_cols: usize,
    },
    Linear { weight: Matrix, bias: Vec<f64> },
    Activation(Activation),
}

impl Layer {
    pub fn is_parameterized(&self) -> bool {
        !matches!(self, Self::Activation(_))
    }
}

/// An ordered stack of layers with a fixed input shape.
#[derive(Debug, Clone)]
pub struct Network {
    input_channels: usize,
    input_rows: usize,
    input_cols: usize,
    layers: Vec<Layer>,
}

impl Network {
    /// Validates that consecutive layer shapes compose and that at least one
    /// layer carries parameters.
    pub fn new(
        input_channels: usize,
        input_rows: usize,
        input_cols: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        let mut shape = (input_channels, input_rows, input_cols);
        let mut parameterized = 0;
        for (idx, layer) in layers.iter().enumerate() {
            shape = match layer {
                Layer::Conv {
                    kernel,
                    input_rows,
                    input_cols,
                } => {
                    parameterized += 1;
                    if shape.0 != kernel.in_channels() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {idx}: expects {} input channels, gets {}",
                            kernel.in_channels(),
                            shape.0
                        )));
                    }
                    if (shape.1, shape.2) != (*input_rows, *input_cols) {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {idx}: declared input {}x{}, actual {}x{}",
                            input_rows, input_cols, shape.1, shape.2
                        )));
                    }
                    if kernel.kernel_rows() > shape.1 || kernel.kernel_cols() > shape.2 {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {idx}: kernel {}x{} larger than input {}x{}",
                            kernel.kernel_rows(),
                            kernel.kernel_cols(),
                            shape.1,
                            shape.2
                        )));
                    }
                    (
                        kernel.out_channels(),
                        shape.1 - kernel.kernel_rows() + 1,
                        shape.2 - kernel.kernel_cols() + 1,
                    )
                }
                Layer::Linear { weight, bias } => {
                    parameterized += 1;
                    let incoming = shape.0 * shape.1 * shape.2;
                    if weight.cols() != incoming {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {idx}: weight expects {} inputs, gets {incoming}",
                            weight.cols()
                        )));
                    }
                    if bias.len() != weight.rows() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {idx}: bias length {} vs {} outputs",
                            bias.len(),
                            weight.rows()
                        )));
                    }
                    (weight.rows(), 1, 1)
                }
                Layer::Activation(_) => shape,
            };
        }
        if parameterized == 0 {
            return Err(Error::ShapeMismatch(
                "network needs at least one parameterized layer".into(),
            ));
        }
        Ok(Self {
            input_channels,
            input_rows,
            input_cols,
            layers,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.input_channels, self.input_rows, self.input_cols)
    }

    /// Number of classes = flattened size of the final output.
    pub fn num_classes(&self) -> usize {
        let mut shape = (self.input_channels, self.input_rows, self.input_cols);
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv { kernel, .. } => (
                    kernel.out_channels(),
                    shape.1 - kernel.kernel_rows() + 1,
                    shape.2 - kernel.kernel_cols() + 1,
                ),
                Layer::Linear { weight, .. } => (weight.rows(), 1, 1),
                Layer::Activation(_) => shape,
            };
        }
        shape.0 * shape.1 * shape.2
    }

    /// All parameters flattened in layer order; used for trajectory
    /// comparisons and checkpoints.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { kernel, .. } => {
                    for s in kernel.slices() {
                        out.extend_from_slice(s.data());
                    }
                }
                Layer::Linear { weight, bias } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias);
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    /// Overwrite every parameter from a flat vector laid out exactly as
    /// `parameter_vector` produces it.
    pub fn set_parameter_vector(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.parameter_vector().len();
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} entries, network needs {expected}",
                params.len()
            )));
        }
        let mut cursor = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv { kernel, .. } => {
                    for s in kernel.slices_mut() {
                        let len = s.data().len();
                        s.data_mut().copy_from_slice(&params[cursor..cursor + len]);
                        cursor += len;
                    }
                }
                Layer::Linear { weight, bias } => {
                    let len = weight.data().len();
                    weight
                        .data_mut()
                        .copy_from_slice(&params[cursor..cursor + len]);
                    cursor += len;
                    let blen = bias.len();
                    bias.copy_from_slice(&params[cursor..cursor + blen]);
                    cursor += blen;
                }
                Layer::Activation(_) => {}
            }
        }
        Ok(())
    }

    /// One SGD step: `p ← p − lr·g` for every parameter, exactly.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, grad) {
                (Layer::Conv { kernel, .. }, Some(LayerGrad::Conv(slices))) => {
                    for (s, g) in kernel.slices_mut().iter_mut().zip(slices) {
                        for (p, gv) in s.data_mut().iter_mut().zip(g.data()) {
                            *p -= learning_rate * gv;
                        }
                    }
                }
                (
                    Layer::Linear { weight, bias },
                    Some(LayerGrad::Linear {
                        weight: gw,
                        bias: gb,
                    }),
                ) => {
                    for (p, gv) in weight.data_mut().iter_mut().zip(gw.data()) {
                        *p -= learning_rate * gv;
                    }
                    for (p, gv) in bias.iter_mut().zip(gb) {
                        *p -= learning_rate * gv;
                    }
                }
                (_, None) => {}
                _ => unreachable!("gradient kind always matches its layer"),
            }
        }
    }

    /// A compact CNN: conv(3×3) → ReLU → conv(3×3) → ReLU → linear, with
    /// seeded He-style initialization. The workhorse for the desk-scale
    /// experiments.
    pub fn small_cnn(
        input_rows: usize,
        input_cols: usize,
        classes: usize,
        conv_channels: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let (c1, c2) = conv_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = random_conv_kernel(c1, 1, 3, 3, &mut rng)?;
        let r1 = (input_rows - 2, input_cols - 2);
        let conv2 = random_conv_kernel(c2, c1, 3, 3, &mut rng)?;
        let r2 = (r1.0 - 2, r1.1 - 2);
        let in_dim = c2 * r2.0 * r2.1;
        // wider init on the classifier head than He's √(2/n)
        let weight = random_matrix(classes, in_dim, 3.0 / (in_dim as f64).sqrt(), &mut rng)?;
        Self::new(
            1,
            input_rows,
            input_cols,
            vec![
                Layer::Conv {
                    kernel: conv1,
                    input_rows,
                    input_cols,
                },
                Layer::Activation(Activation::ReLU),
                Layer::Conv {
                    kernel: conv2,
                    input_rows: r1.0,
                    input_cols: r1.1,
                },
                Layer::Activation(Activation::ReLU),
                Layer::Linear {
                    weight,
                    bias: vec![0.0; classes],
                },
            ],
        )
    }
}

impl Network {
    /// A CNN built from 1-D convolutions: conv(3×1) → ReLU → conv(1×3) →
    /// ReLU → linear. Every kernel is rank-1 by shape, the regime the
    /// separated penalty prices exactly.
    pub fn separable_cnn(
        input_rows: usize,
        input_cols: usize,
        classes: usize,
        conv_channels: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let (c1, c2) = conv_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = random_conv_kernel(c1, 1, 3, 1, &mut rng)?;
        let r1 = (input_rows - 2, input_cols);
        let conv2 = random_conv_kernel(c2, c1, 1, 3, &mut rng)?;
        let r2 = (r1.0, r1.1 - 2);
        let in_dim = c2 * r2.0 * r2.1;
        let weight = random_matrix(classes, in_dim, 3.0 / (in_dim as f64).sqrt(), &mut rng)?;
        Self::new(
            1,
            input_rows,
            input_cols,
            vec![
                Layer::Conv {
                    kernel: conv1,
                    input_rows,
                    input_cols,
                },
                Layer::Activation(Activation::ReLU),
                Layer::Conv {
                    kernel: conv2,
                    input_rows: r1.0,
                    input_cols: r1.1,
                },
                Layer::Activation(Activation::ReLU),
                Layer::Linear {
                    weight,
                    bias: vec![0.0; classes],
                },
            ],
        )
    }
}

fn random_matrix(rows: usize, cols: usize, std_dev: f64, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let normal = Normal::new(0.0, std_dev).expect("positive std dev");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::new(rows, cols, data)
}

/// Kernel slices start as random rank-1 outer products with He-scaled
/// entries; trained edge-like filters have one dominant singular direction,
/// and starting on that manifold keeps the rank-1 truncation accurate.
fn random_conv_kernel(
    out_ch: usize,
    in_ch: usize,
    kr: usize,
    kc: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConvKernel> {
    let entry_std = (2.0 / (in_ch * kr * kc) as f64).sqrt();
    let factor_std = entry_std.sqrt();
    let normal = Normal::new(0.0, factor_std).expect("positive std dev");
    let slices = (0..out_ch * in_ch)
        .map(|_| {
            let a: Vec<f64> = (0..kr).map(|_| normal.sample(rng)).collect();
            let b: Vec<f64> = (0..kc).map(|_| normal.sample(rng)).collect();
            Matrix::outer(&a, &b)
        })
        .collect();
    ConvKernel::new(out_ch, in_ch, slices)
}

/// Which estimator prices the spectral penalty during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMethod {
    /// No penalty (ordinary training).
    None,
    /// Power iteration on the materialized valid-convolution matrix of each
    /// kernel slice (and on linear weights directly).
    PowerIteration,
    /// Rank-1 separation of each slice, then the Fourier estimator on each
    /// 1-D factor; linear weights priced by exact SVD.
    FftSeparation,
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda: f64,
    pub method: PenaltyMethod,
    pub power: PowerSettings,
}

impl LossConfig {
    pub fn unregularized() -> Self {
        Self {
            lambda: 0.0,
            method: PenaltyMethod::None,
            power: PowerSettings::default(),
        }
    }
}

/// Per-layer parameter gradients, aligned with the network's layer list.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    /// One gradient matrix per kernel slice, (out, in) row-major.
    Conv(Vec<Matrix>),
    Linear { weight: Matrix, bias: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
    /// Gradient of the loss with respect to the network input.
    pub input: Tensor,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { kernel, .. } => Some(LayerGrad::Conv(
                    kernel
                        .slices()
                        .iter()
                        .map(|s| Matrix::zeros(s.rows(), s.cols()))
                        .collect(),
                )),
                Layer::Linear { weight, bias } => Some(LayerGrad::Linear {
                    weight: Matrix::zeros(weight.rows(), weight.cols()),
                    bias: vec![0.0; bias.len()],
                }),
                Layer::Activation(_) => None,
            })
            .collect();
        Self {
            layers,
            input: Tensor::zeros(net.input_channels, net.input_rows, net.input_cols),
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            match (mine, theirs) {
                (Some(LayerGrad::Conv(a)), Some(LayerGrad::Conv(b))) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                            *p += q;
                        }
                    }
                }
                (
                    Some(LayerGrad::Linear {
                        weight: aw,
                        bias: ab,
                    }),
                    Some(LayerGrad::Linear {
                        weight: bw,
                        bias: bb,
                    }),
                ) => {
                    for (p, q) in aw.data_mut().iter_mut().zip(bw.data()) {
                        *p += q;
                    }
                    for (p, q) in ab.iter_mut().zip(bb) {
                        *p += q;
                    }
                }
                (None, None) => {}
                _ => unreachable!("gradient layouts always match"),
            }
        }
        for (p, q) in self.input.data.iter_mut().zip(&other.input.data) {
            *p += q;
        }
    }

    fn scale(&mut self, c: f64) {
        for grad in self.layers.iter_mut().flatten() {
            match grad {
                LayerGrad::Conv(slices) => {
                    for s in slices {
                        for p in s.data_mut() {
                            *p *= c;
                        }
                    }
                }
                LayerGrad::Linear { weight, bias } => {
                    for p in weight.data_mut() {
                        *p *= c;
                    }
                    for p in bias {
                        *p *= c;
                    }
                }
            }
        }
        for p in self.input.data.iter_mut() {
            *p *= c;
        }
    }
}

/// Cache of layer inputs from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// values[i] is the input to layer i; values.last() is the output.
    values: Vec<Tensor>,
    logits: Vec<f64>,
}

impl ForwardPass {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Run the network; conv layers use valid stride-1 convolution.
pub fn forward(net: &Network, x: &Tensor) -> Result<ForwardPass> {
    if x.shape() != (net.input_channels, net.input_rows, net.input_cols) {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} vs expected {:?}",
            x.shape(),
            (net.input_channels, net.input_rows, net.input_cols)
        )));
    }
    let mut values = Vec::with_capacity(net.layers.len() + 1);
    values.push(x.clone());
    for layer in &net.layers {
        let prev = values.last().expect("nonempty");
        let next = match layer {
            Layer::Conv { kernel, .. } => conv_forward(kernel, prev),
            Layer::Linear { weight, bias } => {
                let mut y = weight.matvec(&prev.data);
                for (yi, b) in y.iter_mut().zip(bias) {
                    *yi += b;
                }
                Tensor::from_vector(y)
            }
            Layer::Activation(act) => {
                let mut out = prev.clone();
                for v in out.data.iter_mut() {
                    *v = act.apply(*v);
                }
                out
            }
        };
        values.push(next);
    }
    let logits = values.last().expect("nonempty").data.clone();
    Ok(ForwardPass { values, logits })
}

fn conv_forward(kernel: &ConvKernel, x: &Tensor) -> Tensor {
    let (kr, kc) = (kernel.kernel_rows(), kernel.kernel_cols());
    let out_rows = x.rows - kr + 1;
    let out_cols = x.cols - kc + 1;
    let mut out = Tensor::zeros(kernel.out_channels(), out_rows, out_cols);
    for o in 0..kernel.out_channels() {
        for i in 0..kernel.in_channels() {
            let k = kernel.slice(o, i);
            for oi in 0..out_rows {
                for oj in 0..out_cols {
                    let mut acc = 0.0;
                    for p in 0..kr {
                        for q in 0..kc {
                            acc += k[(p, q)] * x.at(i, oi + p, oj + q);
                        }
                    }
                    *out.at_mut(o, oi, oj) += acc;
                }
            }
        }
    }
    out
}

/// Backpropagate an arbitrary seed gradient on the logits down to every
/// parameter and the input. This is the data-loss half; spectral penalties
/// are independent of the input and are added by `backward`.
pub fn backward_from_logits(
    net: &Network,
    pass: &ForwardPass,
    dlogits: &[f64],
) -> Result<Gradients> {
    if dlogits.len() != pass.logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "seed gradient length {} vs {} logits",
            dlogits.len(),
            pass.logits.len()
        )));
    }
    let mut grads = Gradients::zeros_like(net);
    let last = pass.values.last().expect("nonempty");
    let mut delta = Tensor {
        channels: last.channels,
        rows: last.rows,
        cols: last.cols,
        data: dlogits.to_vec(),
    };
    for (idx, layer) in net.layers.iter().enumerate().rev() {
        let input = &pass.values[idx];
        delta = match layer {
            Layer::Conv { kernel, .. } => {
                let (dk, dx) = conv_backward(kernel, input, &delta);
                grads.layers[idx] = Some(LayerGrad::Conv(dk));
                dx
            }
            Layer::Linear { weight, .. } => {
                let dw = Matrix::outer(&delta.data, &input.data);
                let db = delta.data.clone();
                let dx = weight.matvec_transposed(&delta.data);
                grads.layers[idx] = Some(LayerGrad::Linear {
                    weight: dw,
                    bias: db,
                });
                Tensor {
                    channels: input.channels,
                    rows: input.rows,
                    cols: input.cols,
                    data: dx,
                }
            }
            Layer::Activation(act) => {
                let mut dx = delta;
                for (d, x) in dx.data.iter_mut().zip(&input.data) {
                    *d *= act.derivative(*x);
                }
                dx
            }
        };
    }
    grads.input = delta;
    Ok(grads)
}

fn conv_backward(kernel: &ConvKernel, x: &Tensor, dy: &Tensor) -> (Vec<Matrix>, Tensor) {
    let (kr, kc) = (kernel.kernel_rows(), kernel.kernel_cols());
    let (out_rows, out_cols) = (dy.rows, dy.cols);
    let mut dk = Vec::with_capacity(kernel.out_channels() * kernel.in_channels());
    let mut dx = Tensor::zeros(x.channels, x.rows, x.cols);
    for o in 0..kernel.out_channels() {
        for i in 0..kernel.in_channels() {
            let mut g = Matrix::zeros(kr, kc);
            let k = kernel.slice(o, i);
            for oi in 0..out_rows {
                for oj in 0..out_cols {
                    let d = dy.at(o, oi, oj);
                    if d == 0.0 {
                        continue;
                    }
                    for p in 0..kr {
                        for q in 0..kc {
                            g[(p, q)] += d * x.at(i, oi + p, oj + q);
                            *dx.at_mut(i, oi + p, oj + q) += d * k[(p, q)];
                        }
                    }
                }
            }
            dk.push(g);
        }
    }
    (dk, dx)
}

/// Numerically stable softmax cross-entropy with its logit gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_sum = max + sum_exp.ln();
    let loss = log_sum - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - max).exp() / sum_exp).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn predict(net: &Network, x: &Tensor) -> Result<usize> {
    let pass = forward(net, x)?;
    Ok(argmax(pass.logits()))
}

/// Index of the largest logit; ties break to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One estimation pass over the network's parameterized layers: penalty
/// value, per-layer breakdown, separation residuals, λ-scaled gradients, and
/// any power-iteration convergence warnings. Layer order is fixed, so the
/// sums are deterministic.
#[derive(Debug, Clone)]
pub struct PenaltyPass {
    /// Σ_k penalty_k (unscaled by λ).
    pub total: f64,
    /// Penalty per parameterized layer, in layer order.
    pub per_layer: Vec<f64>,
    /// Root-sum-square separation residual per parameterized layer (zero for
    /// linear layers and for non-separating methods).
    pub per_layer_residual: Vec<f64>,
    /// λ-scaled penalty gradients aligned with the layer list.
    pub gradients: Vec<Option<LayerGrad>>,
    pub warnings: Vec<String>,
}

pub fn penalty_pass(net: &Network, cfg: &LossConfig) -> Result<PenaltyPass> {
    let mut total = 0.0;
    let mut per_layer = Vec::new();
    let mut per_layer_residual = Vec::new();
    let mut gradients: Vec<Option<LayerGrad>> = vec![None; net.layers.len()];
    let mut warnings = Vec::new();

    if matches!(cfg.method, PenaltyMethod::None) {
        for layer in &net.layers {
            if layer.is_parameterized() {
                per_layer.push(0.0);
                per_layer_residual.push(0.0);
            }
        }
        return Ok(PenaltyPass {
            total,
            per_layer,
            per_layer_residual,
            gradients,
            warnings,
        });
    }

    for (idx, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Conv {
                kernel,
                input_rows,
                input_cols,
            } => {
                let n = crate::spectral::fft_pad_size(*input_rows, *input_cols);
                let mut layer_penalty = 0.0;
                let mut residual_sq = 0.0;
                let mut slice_grads = Vec::with_capacity(kernel.slices().len());
                for (slice_idx, slice) in kernel.slices().iter().enumerate() {
                    let k = Kernel::new(slice.clone())?;
                    match cfg.method {
                        PenaltyMethod::PowerIteration => {
                            let m = crate::conv::valid_conv_matrix(&k, *input_rows, *input_cols)?;
                            let settings = PowerSettings {
                                seed: slice_seed(cfg.power.seed, idx, slice_idx),
                                ..cfg.power
                            };
                            let (est, converged) = power_estimate_lenient(&m, &settings);
                            if !converged {
                                warnings.push(format!(
                                    "layer {idx} slice {slice_idx}: power iteration hit the {}-iteration cap",
                                    settings.max_iters
                                ));
                            }
                            layer_penalty += est.sigma * est.sigma;
                            slice_grads.push(penalty_gradient_valid_conv(
                                &est,
                                k.rows(),
                                k.cols(),
                                *input_rows,
                                *input_cols,
                                cfg.lambda,
                            )?);
                        }
                        PenaltyMethod::FftSeparation => {
                            let sep = separate_kernel(&k)?;
                            let (col_est, row_est) = separated_estimates(&sep, n)?;
                            layer_penalty +=
                                col_est.sigma * col_est.sigma + row_est.sigma * row_est.sigma;
                            residual_sq += sep.residual_fro * sep.residual_fro;
                            slice_grads.push(separated_penalty_gradient(&k, n, cfg.lambda)?);
                        }
                        PenaltyMethod::None => unreachable!(),
                    }
                }
                total += layer_penalty;
                per_layer.push(layer_penalty);
                per_layer_residual.push(residual_sq.sqrt());
                gradients[idx] = Some(LayerGrad::Conv(slice_grads));
            }
            Layer::Linear { weight, bias } => {
                let est = match cfg.method {
                    PenaltyMethod::PowerIteration => {
                        let settings = PowerSettings {
                            seed: slice_seed(cfg.power.seed, idx, 0),
                            ..cfg.power
                        };
                        let (est, converged) = power_estimate_lenient(weight, &settings);
                        if !converged {
                            warnings.push(format!(
                                "layer {idx}: power iteration hit the {}-iteration cap",
                                settings.max_iters
                            ));
                        }
                        est
                    }
                    PenaltyMethod::FftSeparation => spectral_norm_exact(weight)?,
                    PenaltyMethod::None => unreachable!(),
                };
                total += est.sigma * est.sigma;
                per_layer.push(est.sigma * est.sigma);
                per_layer_residual.push(0.0);
                gradients[idx] = Some(LayerGrad::Linear {
                    weight: penalty_gradient_matrix(&est, cfg.lambda)?,
                    bias: vec![0.0; bias.len()],
                });
            }
            Layer::Activation(_) => {}
        }
    }
    Ok(PenaltyPass {
        total,
        per_layer,
        per_layer_residual,
        gradients,
        warnings,
    })
}

fn slice_seed(base: u64, layer: usize, slice: usize) -> u64 {
    base ^ ((layer as u64) << 32) ^ ((slice as u64) << 8)
}

/// Loss over a batch: mean softmax cross-entropy of the logits plus
/// (λ/2)·Σ_k penalty_k. The penalty term depends only on the parameters.
pub fn loss(
    logits_batch: &[Vec<f64>],
    labels: &[usize],
    net: &Network,
    cfg: &LossConfig,
) -> Result<f64> {
    if logits_batch.len() != labels.len() || logits_batch.is_empty() {
        return Err(Error::InvalidArgument(
            "need one label per logits row and a nonempty batch".into(),
        ));
    }
    let mut ce = 0.0;
    for (logits, &label) in logits_batch.iter().zip(labels) {
        ce += cross_entropy(logits, label)?.0;
    }
    ce /= logits_batch.len() as f64;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    let penalty = penalty_pass(net, cfg)?.total;
    Ok(ce + 0.5 * cfg.lambda * penalty)
}

/// Gradient of `loss` for one example: data-loss gradient plus the λ-scaled
/// penalty gradients.
pub fn backward(
    net: &Network,
    pass: &ForwardPass,
    label: usize,
    cfg: &LossConfig,
) -> Result<Gradients> {
    let (_, dlogits) = cross_entropy(pass.logits(), label)?;
    let mut grads = backward_from_logits(net, pass, &dlogits)?;
    if cfg.lambda > 0.0 {
        let penalty = penalty_pass(net, cfg)?;
        add_penalty_gradients(&mut grads, &penalty);
    }
    Ok(grads)
}

pub(crate) fn add_penalty_gradients(grads: &mut Gradients, penalty: &PenaltyPass) {
    for (g, p) in grads.layers.iter_mut().zip(&penalty.gradients) {
        match (g, p) {
            (Some(LayerGrad::Conv(a)), Some(LayerGrad::Conv(b))) => {
                for (x, y) in a.iter_mut().zip(b) {
                    for (u, v) in x.data_mut().iter_mut().zip(y.data()) {
                        *u += v;
                    }
                }
            }
            (
                Some(LayerGrad::Linear {
                    weight: aw,
                    bias: ab,
                }),
                Some(LayerGrad::Linear {
                    weight: bw,
                    bias: bb,
                }),
            ) => {
                for (u, v) in aw.data_mut().iter_mut().zip(bw.data()) {
                    *u += v;
                }
                for (u, v) in ab.iter_mut().zip(bb) {
                    *u += v;
                }
            }
            (None, None) | (_, None) => {}
            _ => unreachable!("penalty layout matches layer layout"),
        }
    }
}

/// Mean data gradient over a batch plus summary statistics. The penalty part
/// is added once per step by the caller (it does not depend on the batch).
pub struct BatchStats {
    pub mean_cross_entropy: f64,
    pub correct: usize,
    pub gradients: Gradients,
}

pub fn batch_gradients(net: &Network, xs: &[Tensor], labels: &[usize]) -> Result<BatchStats> {
    if xs.is_empty() || xs.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "batch must be nonempty with one label per example".into(),
        ));
    }
    let mut total = Gradients::zeros_like(net);
    let mut ce = 0.0;
    let mut correct = 0;
    for (x, &label) in xs.iter().zip(labels) {
        let pass = forward(net, x)?;
        let (sample_loss, dlogits) = cross_entropy(pass.logits(), label)?;
        ce += sample_loss;
        if argmax(pass.logits()) == label {
            correct += 1;
        }
        let g = backward_from_logits(net, &pass, &dlogits)?;
        total.accumulate(&g);
    }
    let n = xs.len() as f64;
    total.scale(1.0 / n);
    Ok(BatchStats {
        mean_cross_entropy: ce / n,
        correct,
        gradients: total,
    })
}

/// Relative output change ‖W·ξ‖₂ / ‖ξ‖₂ for a perturbation ξ.
pub fn sensitivity(w: &Matrix, xi: &[f64]) -> Result<f64> {
    if xi.len() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "perturbation length {} vs {} columns",
            xi.len(),
            w.cols()
        )));
    }
    let norm_xi = norm2(xi);
    if norm_xi == 0.0 {
        return Err(Error::ZeroPerturbation);
    }
    Ok(norm2(&w.matvec(xi)) / norm_xi)
}

/// Empirical Lipschitz constant of an activation on `[lo, hi]`: the largest
/// secant slope over all pairs of `samples` evenly spaced points. Never
/// exceeds the true constant; approaches it as the grid refines.
pub fn lipschitz_estimate(kind: Activation, samples: usize, range: (f64, f64)) -> f64 {
    assert!(samples >= 2, "need at least two sample points");
    let (lo, hi) = range;
    assert!(lo < hi, "range must be nondegenerate");
    let step = (hi - lo) / (samples - 1) as f64;
    let points: Vec<(f64, f64)> = (0..samples)
        .map(|i| {
            let x = lo + i as f64 * step;
            (x, kind.apply(x))
        })
        .collect();
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dx = points[j].0 - points[i].0;
            let df = (points[j].1 - points[i].1).abs();
            best = best.max(df / dx);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::valid_conv_matrix;
    use crate::svd::svd;
    use crate::testutil::{assert_close, rng, seeded_matrix, seeded_vector};
    use rand::Rng;

    fn single_linear(weight: Matrix, bias: Vec<f64>) -> Network {
        let cols = weight.cols();
        Network::new(cols, 1, 1, vec![Layer::Linear { weight, bias }]).unwrap()
    }

    #[test]
    fn linear_layer_is_wx_plus_b() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]).unwrap();
        let net = single_linear(w, vec![0.5, -1.0]);
        let pass = forward(&net, &Tensor::from_vector(vec![2.0, -1.0])).unwrap();
        assert_eq!(pass.logits(), &[0.5, -2.25]);
    }

    #[test]
    fn conv_layer_matches_materialized_matrix() {
        let kernel_matrix = seeded_matrix(3, 3, 1);
        let kernel = ConvKernel::single(Kernel::new(kernel_matrix.clone()).unwrap());
        let net = Network::new(
            1,
            5,
            5,
            vec![
                Layer::Conv {
                    kernel,
                    input_rows: 5,
                    input_cols: 5,
                },
                Layer::Linear {
                    weight: Matrix::identity(9),
                    bias: vec![0.0; 9],
                },
            ],
        )
        .unwrap();
        let x = seeded_matrix(5, 5, 2);
        let pass = forward(&net, &Tensor::from_matrix(&x)).unwrap();
        let m = valid_conv_matrix(&Kernel::new(kernel_matrix).unwrap(), 5, 5).unwrap();
        let want = m.matvec(x.data());
        for (got, want) in pass.logits().iter().zip(&want) {
            assert_close(*got, *want, 1e-12, "conv vs materialized operator");
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(Activation::ReLU.apply(-1.0), 0.0);
        assert_eq!(Activation::ReLU.apply(2.0), 2.0);
        assert_eq!(Activation::ReLU.derivative(0.0), 0.0);
    }

    #[test]
    fn unregularized_loss_is_plain_cross_entropy() {
        let logits = vec![vec![1.0, 2.0, 0.5]];
        let labels = vec![1usize];
        let w = Matrix::identity(3);
        let net = single_linear(w, vec![0.0; 3]);
        let cfg = LossConfig::unregularized();
        let got = loss(&logits, &labels, &net, &cfg).unwrap();
        let (want, _) = cross_entropy(&logits[0], 1).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn penalty_term_adds_half_lambda_sigma_squared() {
        let w = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let net = single_linear(w, vec![0.0; 2]);
        let cfg = LossConfig {
            lambda: 1.0,
            method: PenaltyMethod::PowerIteration,
            power: PowerSettings::default(),
        };
        // equal logits make the data loss exactly ln 2
        let logits = vec![vec![0.0, 0.0]];
        let got = loss(&logits, &[0], &net, &cfg).unwrap();
        assert_close(got - 2f64.ln(), 4.5, 1e-6, "penalty term (1/2)·sigma² = 4.5");
    }

    #[test]
    fn cnn_penalty_matches_svd_oracle_recomputation() {
        let net = Network::small_cnn(8, 8, 3, (2, 2), 11).unwrap();
        let cfg = LossConfig {
            lambda: 0.01,
            method: PenaltyMethod::PowerIteration,
            power: PowerSettings {
                max_iters: 20_000,
                tol: 1e-12,
                seed: 1,
            },
        };
        let pass = penalty_pass(&net, &cfg).unwrap();
        let mut want = 0.0;
        for layer in net.layers() {
            match layer {
                Layer::Conv {
                    kernel,
                    input_rows,
                    input_cols,
                } => {
                    for s in kernel.slices() {
                        let k = Kernel::new(s.clone()).unwrap();
                        let m = valid_conv_matrix(&k, *input_rows, *input_cols).unwrap();
                        let sigma = svd(&m).unwrap().sigma_max();
                        want += sigma * sigma;
                    }
                }
                Layer::Linear { weight, .. } => {
                    let sigma = svd(weight).unwrap().sigma_max();
                    want += sigma * sigma;
                }
                Layer::Activation(_) => {}
            }
        }
        assert!(
            (pass.total - want).abs() <= 1e-6 * want.max(1.0),
            "penalty {} vs oracle {want}",
            pass.total
        );
        assert!(pass.warnings.is_empty(), "unexpected {:?}", pass.warnings);
    }

    #[test]
    fn softmax_gradient_identity_for_single_linear_layer() {
        let w = seeded_matrix(3, 4, 21);
        let net = single_linear(w.clone(), seeded_vector(3, 22));
        let x = seeded_vector(4, 23);
        let label = 2;
        let pass = forward(&net, &Tensor::from_vector(x.clone())).unwrap();
        let grads = backward(&net, &pass, label, &LossConfig::unregularized()).unwrap();
        // (p - onehot)·xᵀ
        let max = pass
            .logits()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = pass.logits().iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut p: Vec<f64> = exps.iter().map(|e| e / total).collect();
        p[label] -= 1.0;
        let want = Matrix::outer(&p, &x);
        match &grads.layers[0] {
            Some(LayerGrad::Linear { weight, bias }) => {
                let err = weight.sub(&want).max_abs();
                assert!(err <= 1e-12, "weight gradient off by {err}");
                for (g, want) in bias.iter().zip(&p) {
                    assert_close(*g, *want, 1e-12, "bias gradient");
                }
            }
            other => panic!("expected linear gradient, got {other:?}"),
        }
    }

    /// Central finite differences over a sample of parameters for a full
    /// CNN under each penalty configuration.
    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let configs = [
            LossConfig::unregularized(),
            LossConfig {
                lambda: 0.05,
                method: PenaltyMethod::PowerIteration,
                power: PowerSettings {
                    max_iters: 50_000,
                    tol: 1e-15,
                    seed: 3,
                },
            },
            LossConfig {
                lambda: 0.05,
                method: PenaltyMethod::FftSeparation,
                power: PowerSettings::default(),
            },
        ];
        let net = Network::small_cnn(7, 7, 2, (2, 2), 33).unwrap();
        let x = Tensor::from_matrix(&seeded_matrix(7, 7, 34));
        let label = 1usize;
        let mut r = rng(35);
        for cfg in configs {
            let pass = forward(&net, &x).unwrap();
            let grads = backward(&net, &pass, label, &cfg).unwrap();
            let param_count = net.parameter_vector().len();
            let mut checked = 0;
            while checked < 20 {
                let flat_idx = r.random_range(0..param_count);
                let analytic = flat_gradient(&grads, &net)[flat_idx];
                let h = 1e-5;
                let f = |delta: f64| {
                    let perturbed = perturb(&net, flat_idx, delta);
                    let pass = forward(&perturbed, &x).unwrap();
                    loss(&[pass.logits().to_vec()], &[label], &perturbed, &cfg).unwrap()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                if fd.abs() < 1e-7 && analytic.abs() < 1e-7 {
                    checked += 1;
                    continue; // both negligible; relative error meaningless
                }
                let rel = (analytic - fd).abs() / fd.abs().max(1e-6);
                assert!(
                    rel <= 1e-4,
                    "cfg {:?} param {flat_idx}: analytic {analytic} vs fd {fd}",
                    cfg.method
                );
                checked += 1;
            }
        }
    }

    /// Flatten gradients in the same order as `parameter_vector`.
    fn flat_gradient(grads: &Gradients, net: &Network) -> Vec<f64> {
        let mut out = Vec::new();
        for (layer, grad) in net.layers().iter().zip(&grads.layers) {
            match (layer, grad) {
                (Layer::Conv { .. }, Some(LayerGrad::Conv(slices))) => {
                    for s in slices {
                        out.extend_from_slice(s.data());
                    }
                }
                (Layer::Linear { .. }, Some(LayerGrad::Linear { weight, bias })) => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias);
                }
                (Layer::Activation(_), None) => {}
                _ => unreachable!(),
            }
        }
        out
    }

    fn perturb(net: &Network, flat_idx: usize, delta: f64) -> Network {
        let mut params = net.parameter_vector();
        params[flat_idx] += delta;
        let mut out = net.clone();
        out.set_parameter_vector(&params).unwrap();
        out
    }

    #[test]
    fn regularized_gradient_differs_by_exactly_the_penalty_gradient() {
        let net = Network::small_cnn(7, 7, 2, (2, 2), 44).unwrap();
        let x = Tensor::from_matrix(&seeded_matrix(7, 7, 45));
        let pass = forward(&net, &x).unwrap();
        let cfg = LossConfig {
            lambda: 0.3,
            method: PenaltyMethod::FftSeparation,
            power: PowerSettings::default(),
        };
        let plain = backward(&net, &pass, 0, &LossConfig::unregularized()).unwrap();
        let reg = backward(&net, &pass, 0, &cfg).unwrap();
        let penalty = penalty_pass(&net, &cfg).unwrap();
        let mut reconstructed = plain;
        add_penalty_gradients(&mut reconstructed, &penalty);
        let a = flat_gradient(&reconstructed, &net);
        let b = flat_gradient(&reg, &net);
        assert_eq!(a, b, "penalty must be purely additive");
    }

    #[test]
    fn sensitivity_basics() {
        let w = Matrix::identity(3).scale(2.0);
        let xi = seeded_vector(3, 51);
        assert_close(sensitivity(&w, &xi).unwrap(), 2.0, 1e-12, "2I");
        assert!(matches!(
            sensitivity(&w, &[0.0, 0.0, 0.0]),
            Err(Error::ZeroPerturbation)
        ));

        let w = seeded_matrix(4, 4, 52);
        let dec = svd(&w).unwrap();
        let top = dec.right_column(0);
        assert_close(
            sensitivity(&w, &top).unwrap(),
            dec.sigma_max(),
            1e-10,
            "top singular direction attains sigma",
        );
        let sigma = dec.sigma_max();
        for seed in 0..1000u64 {
            let xi = seeded_vector(4, 10_000 + seed);
            let s = sensitivity(&w, &xi).unwrap();
            assert!(s <= sigma + 1e-10, "sensitivity {s} above sigma {sigma}");
        }
    }

    #[test]
    fn composition_sensitivity_bounded_by_product_of_sigmas() {
        let w1 = seeded_matrix(4, 5, 61);
        let w2 = seeded_matrix(3, 4, 62);
        let bound = svd(&w1).unwrap().sigma_max() * svd(&w2).unwrap().sigma_max();
        let composed = w2.matmul(&w1);
        for seed in 0..200u64 {
            let xi = seeded_vector(5, 20_000 + seed);
            let s = sensitivity(&composed, &xi).unwrap();
            assert!(s <= bound + 1e-10, "{s} exceeds product bound {bound}");
        }
    }

    #[test]
    fn activation_lipschitz_constants() {
        let relu = lipschitz_estimate(Activation::ReLU, 1001, (-5.0, 5.0));
        assert_close(relu, 1.0, 1e-9, "relu");
        let sigmoid = lipschitz_estimate(Activation::Sigmoid, 1001, (-5.0, 5.0));
        assert_close(sigmoid, 0.25, 1e-3, "sigmoid max slope");
        let tanh = lipschitz_estimate(Activation::Tanh, 1001, (-5.0, 5.0));
        assert_close(tanh, 1.0, 1e-3, "tanh");
        for l in [relu, sigmoid, tanh] {
            assert!(l <= 1.0 + 1e-9, "short-map property violated: {l}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::small_cnn(8, 8, 3, (2, 2), 71).unwrap();
        let x = Tensor::from_matrix(&seeded_matrix(8, 8, 72));
        let a = forward(&net, &x).unwrap();
        let b = forward(&net, &x).unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn shape_violations_are_reported() {
        let net = Network::small_cnn(8, 8, 3, (2, 2), 81).unwrap();
        let wrong = Tensor::from_matrix(&seeded_matrix(7, 8, 82));
        assert!(matches!(forward(&net, &wrong), Err(Error::ShapeMismatch(_))));
        // inconsistent linear layer at construction
        let result = Network::new(
            2,
            1,
            1,
            vec![Layer::Linear {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
        );
        assert!(matches!(result, Err(Error::ShapeMismatch(_))));
    }
}
