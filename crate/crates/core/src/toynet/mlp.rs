use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            3 => Ok(Activation::Softmax),
            _ => Err(Error::Format {
                what: "activation tag",
                reason: format!("unknown tag {tag}"),
            }),
        }
    }

    fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => z.to_vec(),
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
            Activation::Softmax => softmax(z),
        }
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Dense layer `act(W x + b)` with `W` stored row-major, `rows` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let w = &self.weights[r * self.cols..(r + 1) * self.cols];
                self.biases[r] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Input layout: `[x (data_dim), time embedding (time_width), one-hot class
/// (class_width)]`. Either embedding may have width 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    time_width: usize,
    class_width: usize,
}

/// Forward activations kept for backprop: `inputs[l]` feeds layer `l`.
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-activation of the final layer.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Sinusoidal embedding of an integer step: `[sin(t f_i), cos(t f_i)]` with
/// `f_i = 10000^(-i / (width/2))`.
pub fn time_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

impl Mlp {
    /// Builds from layers, checking that dimensions chain and that softmax
    /// appears only last.
    pub fn from_layers(layers: Vec<Layer>, time_width: usize, class_width: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::invalid(format!("layer {i} has an empty dimension")));
            }
            if l.weights.len() != l.rows * l.cols || l.biases.len() != l.rows {
                return Err(Error::invalid(format!("layer {i} parameter sizes do not match {}x{}", l.rows, l.cols)));
            }
            if i > 0 && layers[i - 1].rows != l.cols {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs but layer {} yields {}",
                    l.cols,
                    i - 1,
                    layers[i - 1].rows
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::invalid("softmax is only allowed on the final layer"));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("layer {i} parameters"),
                    step: 0,
                });
            }
        }
        if layers[0].cols <= time_width + class_width {
            return Err(Error::invalid("input width leaves no room for data coordinates"));
        }
        Ok(Self {
            layers,
            time_width,
            class_width,
        })
    }

    /// Random network with `N(0, 1/fan_in)` weights and zero biases. A zero
    /// final layer makes a softmax head start at the uniform distribution.
    pub fn init(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        time_width: usize,
        class_width: usize,
        zero_last: bool,
        seed: u64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        let mut rng = seed::stream(seed, "toynet.init", 0);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (cols, rows) = (widths[i], widths[i + 1]);
                let last = i + 1 == n;
                let std = (1.0 / cols as f64).sqrt();
                let weights = (0..rows * cols)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        if last && zero_last {
                            0.0
                        } else {
                            z * std
                        }
                    })
                    .collect();
                Layer {
                    rows,
                    cols,
                    weights,
                    biases: vec![0.0; rows],
                    activation: if last { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers, time_width, class_width)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn time_width(&self) -> usize {
        self.time_width
    }

    pub fn class_width(&self) -> usize {
        self.class_width
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn data_dim(&self) -> usize {
        self.input_width() - self.time_width - self.class_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    /// Assembles the network input; `y = None` leaves the class slot zero.
    pub fn encode(&self, x: &[f64], t: usize, y: Option<usize>) -> Result<Vec<f64>> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                context: "network data input",
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        let mut input = Vec::with_capacity(self.input_width());
        input.extend_from_slice(x);
        input.extend(time_embedding(t, self.time_width));
        let mut onehot = vec![0.0; self.class_width];
        if let Some(c) = y {
            if self.class_width > 0 {
                if c >= self.class_width {
                    return Err(Error::invalid(format!("class {c} outside 0..{}", self.class_width)));
                }
                onehot[c] = 1.0;
            }
        }
        input.extend(onehot);
        Ok(input)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.layers
            .iter()
            .fold(input.to_vec(), |x, l| l.activation.apply(&l.affine(&x)))
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let mut logits = Vec::new();
        for l in &self.layers {
            logits = l.affine(&x);
            let next = l.activation.apply(&logits);
            inputs.push(x);
            x = next;
        }
        ForwardCache { inputs, logits, output: x }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grad` (flat layout of
    /// [`Mlp::params`]) given `d_logits`, the loss gradient with respect to
    /// the final layer's pre-activation.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64], grad: &mut [f64]) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.biases.len();
        }
        let mut delta = d_logits.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let base = offsets[i];
            for r in 0..l.rows {
                let row = &mut grad[base + r * l.cols..base + (r + 1) * l.cols];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += delta[r] * xi;
                }
                grad[base + l.weights.len() + r] += delta[r];
            }
            if i == 0 {
                break;
            }
            // Gradient w.r.t. this layer's input, then through the previous
            // layer's activation (x = act(z_prev)).
            let mut dx = vec![0.0; l.cols];
            for r in 0..l.rows {
                let w = &l.weights[r * l.cols..(r + 1) * l.cols];
                for (d, wi) in dx.iter_mut().zip(w) {
                    *d += delta[r] * wi;
                }
            }
            delta = match self.layers[i - 1].activation {
                Activation::Identity => dx,
                Activation::Relu => dx.iter().zip(x).map(|(d, a)| if *a > 0.0 { *d } else { 0.0 }).collect(),
                Activation::Tanh => dx.iter().zip(x).map(|(d, a)| d * (1.0 - a * a)).collect(),
                Activation::Softmax => unreachable!("softmax is final-layer only"),
            };
        }
    }
}
