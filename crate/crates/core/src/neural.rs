//! Self-contained dense neural network engine: forward pass, backprop with
//! MSE loss, Adam, a deterministic mini-batch training loop, and a plain-text
//! weight format.
//!
//! Everything runs in f64. Batches are processed as matrices (samples as
//! columns) so the hot path is GEMM.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "linear" => Ok(Self::Linear),
            other => Err(Error::ModelFormat(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(&self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(0.0),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Self::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a` (and the
    /// pre-activation sign for ReLU).
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - a * a,
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => a * (1.0 - a),
            Self::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Layer sizes `[in, h1, .., out]` with `hidden` activation on all but the
/// last layer and `output` activation on the last.
pub fn chain_specs(dims: &[usize], hidden: Activation, output: Activation) -> Vec<LayerSpec> {
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == dims.len() { output } else { hidden };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// out_dim x in_dim.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic for a fixed seed.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: format!("layer input of {}", w[0].out_dim),
                    got: format!("{}", w[1].in_dim),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                // He-style fan-in scaling for ReLU layers, Glorot otherwise
                let limit = match spec.activation {
                    Activation::Relu => (6.0 / spec.in_dim as f64).sqrt(),
                    _ => (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt(),
                };
                let weights = Array2::from_shape_fn((spec.out_dim, spec.in_dim), |_| {
                    rng.gen_range(-limit..limit)
                });
                Layer {
                    spec,
                    weights,
                    biases: Array1::zeros(spec.out_dim),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().spec.out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("input of length {}", self.input_dim()),
                got: format!("length {}", x.len()),
            });
        }
        let mut a: Vec<f64> = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.spec.out_dim];
            for (o, out) in next.iter_mut().enumerate() {
                let mut z = layer.biases[o];
                let row = layer.weights.row(o);
                for (w, &ai) in row.iter().zip(a.iter()) {
                    z += w * ai;
                }
                *out = layer.spec.activation.apply(z);
            }
            a = next;
        }
        Ok(a)
    }

    /// Forward over a batch (samples as columns), keeping pre- and
    /// post-activation values per layer for backprop.
    fn forward_batch_full(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.clone());
        for layer in &self.layers {
            let mut z = layer.weights.dot(post.last().unwrap());
            for mut col in z.columns_mut() {
                col += &layer.biases;
            }
            let a = z.mapv(|v| layer.spec.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        (pre, post)
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} input rows", self.input_dim()),
                got: format!("{}", x.nrows()),
            });
        }
        let (_, post) = self.forward_batch_full(x);
        Ok(post.into_iter().last().unwrap())
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "non-finite parameter in layer {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer MSE gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradients of the batch MSE (mean over batch and output dims) plus the loss
/// itself. Samples are columns of `x` and `target`.
pub fn backward_batch(net: &Mlp, x: &Array2<f64>, target: &Array2<f64>) -> Result<(Gradients, f64)> {
    if x.nrows() != net.input_dim() || target.nrows() != net.output_dim()
        || x.ncols() != target.ncols()
    {
        return Err(Error::DimensionMismatch {
            expected: format!(
                "{} input rows, {} target rows, equal batch",
                net.input_dim(),
                net.output_dim()
            ),
            got: format!(
                "{}x{} input, {}x{} target",
                x.nrows(),
                x.ncols(),
                target.nrows(),
                target.ncols()
            ),
        });
    }
    let batch = x.ncols();
    let (pre, post) = net.forward_batch_full(x);
    let out = post.last().unwrap();
    let err = out - target;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / (batch * net.output_dim()) as f64;

    // dLoss/dA_last
    let scale = 2.0 / (batch * net.output_dim()) as f64;
    let mut delta = &err * scale;
    let mut grads_w = vec![Array2::zeros((0, 0)); net.layers.len()];
    let mut grads_b = vec![Array1::zeros(0); net.layers.len()];
    for (li, layer) in net.layers.iter().enumerate().rev() {
        // through activation
        ndarray::Zip::from(&mut delta)
            .and(&pre[li])
            .and(&post[li + 1])
            .for_each(|d, &z, &a| *d *= layer.spec.activation.derivative(z, a));
        grads_w[li] = delta.dot(&post[li].t());
        grads_b[li] = delta.sum_axis(Axis(1));
        if li > 0 {
            delta = layer.weights.t().dot(&delta);
        }
    }
    Ok((
        Gradients {
            weights: grads_w,
            biases: grads_b,
        },
        loss,
    ))
}

/// Single-sample gradients of the MSE over output components.
pub fn backward(net: &Mlp, x: &[f64], target: &[f64]) -> Result<Gradients> {
    let xm = Array2::from_shape_vec((x.len(), 1), x.to_vec()).unwrap();
    let tm = Array2::from_shape_vec((target.len(), 1), target.to_vec()).unwrap();
    Ok(backward_batch(net, &xm, &tm)?.0)
}

/// Adam hyperparameters; defaults are the canonical ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self {
            m_w: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            step: 0,
        }
    }
}

fn adam_update(
    param: &mut f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    p: &AdamParams,
    bc1: f64,
    bc2: f64,
) {
    *m = p.beta1 * *m + (1.0 - p.beta1) * grad;
    *v = p.beta2 * *v + (1.0 - p.beta2) * grad * grad;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *param -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
}

/// One bias-corrected Adam step over every parameter.
pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grads: &Gradients, params: &AdamParams) {
    state.step += 1;
    let bc1 = 1.0 - params.beta1.powi(state.step as i32);
    let bc2 = 1.0 - params.beta2.powi(state.step as i32);
    for (li, layer) in net.layers.iter_mut().enumerate() {
        ndarray::Zip::from(&mut layer.weights)
            .and(&grads.weights[li])
            .and(&mut state.m_w[li])
            .and(&mut state.v_w[li])
            .for_each(|w, &g, m, v| adam_update(w, g, m, v, params, bc1, bc2));
        ndarray::Zip::from(&mut layer.biases)
            .and(&grads.biases[li])
            .and(&mut state.m_b[li])
            .and(&mut state.v_b[li])
            .for_each(|b, &g, m, v| adam_update(b, g, m, v, params, bc1, bc2));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub shuffle_seed: u64,
}

/// Training set with one example per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} target rows", inputs.nrows()),
                got: format!("{}", targets.nrows()),
            });
        }
        if inputs.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mini-batch Adam training. Shuffling is re-seeded per epoch from
/// `shuffle_seed`, so a fixed (net, dataset, config) triple reproduces the
/// run bit for bit. Returns the mean per-epoch training loss.
pub fn train(net: &mut Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.inputs.ncols() != net.input_dim() || data.targets.ncols() != net.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: format!(
                "{}-dim inputs and {}-dim targets",
                net.input_dim(),
                net.output_dim()
            ),
            got: format!(
                "{}-dim inputs and {}-dim targets",
                data.inputs.ncols(),
                data.targets.ncols()
            ),
        });
    }
    let n = data.len();
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::InvalidConfig(format!(
            "batch size {} out of range for dataset of {n}",
            cfg.batch_size
        )));
    }
    let mut state = AdamState::new(net);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Array2::zeros((net.input_dim(), cfg.batch_size));
    let mut batch_t = Array2::zeros((net.output_dim(), cfg.batch_size));
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
        rng.set_stream(epoch as u64 + 1);
        // Fisher-Yates
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let bs = chunk.len();
            for (col, &idx) in chunk.iter().enumerate() {
                batch_x
                    .column_mut(col)
                    .assign(&data.inputs.row(idx));
                batch_t
                    .column_mut(col)
                    .assign(&data.targets.row(idx));
            }
            let (grads, loss) = if bs == cfg.batch_size {
                backward_batch(net, &batch_x, &batch_t)?
            } else {
                let bx = batch_x.slice(ndarray::s![.., ..bs]).to_owned();
                let bt = batch_t.slice(ndarray::s![.., ..bs]).to_owned();
                backward_batch(net, &bx, &bt)?
            };
            adam_step(net, &mut state, &grads, &cfg.adam);
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    net.assert_finite()?;
    Ok(trace)
}

// ---- weight file format ----
//
//   # optional comment lines
//   mlp-weights v1
//   layers <L>
//   layer <i> <in_dim> <out_dim> <activation>   (L lines)
//   weights <i>                                 (then out_dim rows of in_dim values)
//   biases <i>                                  (then one row of out_dim values)
//   ...repeated per layer, in order...
//   end

/// Serialize the network, optionally preceded by `# `-prefixed metadata lines.
pub fn format_weights(net: &Mlp, metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "mlp-weights v1").unwrap();
    writeln!(out, "layers {}", net.layers.len()).unwrap();
    for (i, l) in net.layers.iter().enumerate() {
        writeln!(
            out,
            "layer {i} {} {} {}",
            l.spec.in_dim,
            l.spec.out_dim,
            l.spec.activation.name()
        )
        .unwrap();
    }
    for (i, l) in net.layers.iter().enumerate() {
        writeln!(out, "weights {i}").unwrap();
        for row in l.weights.rows() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", vals.join(" ")).unwrap();
        }
        writeln!(out, "biases {i}").unwrap();
        let vals: Vec<String> = l.biases.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", vals.join(" ")).unwrap();
    }
    writeln!(out, "end").unwrap();
    out
}

pub fn save_weights(net: &Mlp, path: &Path, metadata: &[String]) -> Result<()> {
    std::fs::write(path, format_weights(net, metadata))?;
    Ok(())
}

pub fn parse_weights(text: &str) -> Result<Mlp> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut next = |section: &str| -> Result<&str> {
        lines
            .next()
            .ok_or_else(|| Error::ModelFormat(format!("missing section: {section}")))
    };

    let magic = next("header")?;
    if magic != "mlp-weights v1" {
        return Err(Error::ModelFormat(format!("bad header line '{magic}'")));
    }
    let layers_line = next("layers count")?;
    let count: usize = layers_line
        .strip_prefix("layers ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFormat(format!("bad layers line '{layers_line}'")))?;
    let mut specs = Vec::with_capacity(count);
    for i in 0..count {
        let line = next(&format!("layer {i} spec"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "layer" || parts[1] != i.to_string() {
            return Err(Error::ModelFormat(format!("bad layer spec line '{line}'")));
        }
        let in_dim: usize = parts[2]
            .parse()
            .map_err(|_| Error::ModelFormat(format!("bad in_dim in '{line}'")))?;
        let out_dim: usize = parts[3]
            .parse()
            .map_err(|_| Error::ModelFormat(format!("bad out_dim in '{line}'")))?;
        specs.push(LayerSpec::new(in_dim, out_dim, Activation::parse(parts[4])?));
    }
    for w in specs.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::ModelFormat(format!(
                "layer dims do not chain: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
    }
    let parse_row = |line: &str, want: usize, what: &str| -> Result<Vec<f64>> {
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| Error::ModelFormat(format!("bad number in {what}")))?;
        if vals.len() != want {
            return Err(Error::ModelFormat(format!(
                "{what}: expected {want} values, got {}",
                vals.len()
            )));
        }
        Ok(vals)
    };
    let mut layers = Vec::with_capacity(count);
    for (i, spec) in specs.iter().enumerate() {
        let header = next(&format!("weights {i}"))?;
        if header != format!("weights {i}") {
            return Err(Error::ModelFormat(format!(
                "expected 'weights {i}', got '{header}'"
            )));
        }
        let mut weights = Array2::zeros((spec.out_dim, spec.in_dim));
        for r in 0..spec.out_dim {
            let row = parse_row(
                next(&format!("weights {i} row {r}"))?,
                spec.in_dim,
                &format!("weights {i} row {r}"),
            )?;
            for (c, v) in row.into_iter().enumerate() {
                weights[(r, c)] = v;
            }
        }
        let bheader = next(&format!("biases {i}"))?;
        if bheader != format!("biases {i}") {
            return Err(Error::ModelFormat(format!(
                "expected 'biases {i}', got '{bheader}'"
            )));
        }
        let brow = parse_row(
            next(&format!("biases {i} values"))?,
            spec.out_dim,
            &format!("biases {i}"),
        )?;
        layers.push(Layer {
            spec: *spec,
            weights,
            biases: Array1::from_vec(brow),
        });
    }
    let trailer = next("end marker")?;
    if trailer != "end" {
        return Err(Error::ModelFormat(format!(
            "expected 'end', got '{trailer}'"
        )));
    }
    Ok(Mlp { layers })
}

pub fn load_weights(path: &Path) -> Result<Mlp> {
    parse_weights(&std::fs::read_to_string(path)?)
}
