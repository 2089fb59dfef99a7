use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{invalid, Error, Result};
use crate::market::N_CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "none" => Ok(Activation::None),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// One layer of a [`NetworkGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// `act(x W + b)` with `W: fan_in x fan_out`.
    Dense {
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    },
    /// LSTM cell over the window, 5 channels per step; emits the final hidden state.
    Lstm { input: usize, hidden: usize },
    /// 1-D convolution along the symbol axis, zero padded, odd kernel.
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        activation: Activation,
    },
}

impl Layer {
    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { fan_in, .. } => fan_in,
            Layer::Lstm { input, .. } => input,
            Layer::Conv { c_in, .. } => c_in,
        }
    }

    fn fan_out(&self) -> usize {
        match *self {
            Layer::Dense { fan_out, .. } => fan_out,
            Layer::Lstm { hidden, .. } => hidden,
            Layer::Conv { c_out, .. } => c_out,
        }
    }

    /// (name, shape, is_weight) of each parameter tensor, in storage order.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>, bool)> {
        match *self {
            Layer::Dense { fan_in, fan_out, .. } => {
                vec![("w", vec![fan_in, fan_out], true), ("b", vec![1, fan_out], false)]
            }
            Layer::Lstm { input, hidden } => vec![
                ("wx", vec![input, 4 * hidden], true),
                ("wh", vec![hidden, 4 * hidden], true),
                ("b", vec![1, 4 * hidden], false),
            ],
            Layer::Conv {
                c_in, c_out, kernel, ..
            } => vec![("w", vec![kernel * c_in, c_out], true), ("b", vec![1, c_out], false)],
        }
    }
}

/// A parameter tensor with an optional binary pruning mask of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub mask: Option<Tensor>,
    pub is_weight: bool,
}

impl Param {
    /// Value with masked entries zeroed.
    pub fn effective(&self) -> Tensor {
        match &self.mask {
            None => self.value.clone(),
            Some(m) => {
                let data = self.value.data().iter().zip(m.data()).map(|(w, k)| w * k).collect();
                Tensor::new(self.value.shape().to_vec(), data).expect("mask shape equals value shape")
            }
        }
    }
}

/// How an `[n, 5, m]` window tensor is fed to the first layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Each symbol's flattened `5m` window through a dense stack.
    Dense,
    /// Each symbol's window as `m` steps of 5 channels through an LSTM cell.
    Recurrent,
    /// Flattened windows convolved across neighbouring symbols.
    CrossSectional,
}

/// Layer specs plus parameters. A trained network is itself a factor.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    lookback: usize,
    layers: Vec<Layer>,
    params: Vec<Param>,
}

/// Result of a forward pass: the tape and the handles needed for backward.
pub struct Forward {
    pub tape: Tape,
    pub input: Var,
    pub params: Vec<Var>,
    pub output: Var,
    topology: Topology,
    shape: [usize; 3],
}

/// Gradients of one backward pass, already multiplied by the pruning masks.
#[derive(Clone, Debug)]
pub struct NetGradients {
    pub params: Vec<Tensor>,
    /// `[n, 5, m]`, same layout as the forward input.
    pub input: Tensor,
}

impl NetGradients {
    pub fn norm(&self) -> f64 {
        self.params.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt()
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &NetGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl NetworkGraph {
    /// Builds a graph from layers with Glorot-uniform weights and zero biases
    /// (LSTM forget-gate bias 1). Deterministic per seed.
    pub fn from_layers(lookback: usize, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in &layers {
            for (name, shape, is_weight) in layer.param_shapes() {
                let value = if is_weight {
                    let (fi, fo) = match *layer {
                        Layer::Lstm { input, hidden } => (if name == "wx" { input } else { hidden }, hidden),
                        Layer::Conv { c_in, c_out, kernel, .. } => (kernel * c_in, c_out),
                        _ => (layer.fan_in(), layer.fan_out()),
                    };
                    glorot(&mut rng, &shape, fi, fo)
                } else {
                    let mut b = Tensor::zeros(shape);
                    if let Layer::Lstm { hidden, .. } = *layer {
                        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
                    }
                    b
                };
                params.push(Param {
                    value,
                    mask: None,
                    is_weight,
                });
            }
        }
        Self::with_params(lookback, layers, params)
    }

    /// Builds a graph from explicit parameters, validating structure.
    pub fn with_params(lookback: usize, layers: Vec<Layer>, params: Vec<Param>) -> Result<Self> {
        let net = Self {
            lookback,
            layers,
            params,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.lookback < 1 {
            return Err(invalid("lookback must be at least 1"));
        }
        let Some(last) = self.layers.last() else {
            return Err(invalid("network has no layers"));
        };
        if !matches!(
            last,
            Layer::Dense {
                fan_out: 1,
                activation: Activation::None,
                ..
            }
        ) {
            return Err(invalid("output layer must be dense to one unit with no activation"));
        }
        let expected_in = match self.layers[0] {
            Layer::Lstm { .. } => N_CHANNELS,
            _ => N_CHANNELS * self.lookback,
        };
        if self.layers[0].fan_in() != expected_in {
            return Err(Error::Shape(format!(
                "first layer takes {} inputs, window provides {expected_in}",
                self.layers[0].fan_in()
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!("layer {i} emits {} but layer {} takes {}", pair[0].fan_out(), i + 1, pair[1].fan_in())));
            }
            let order_ok = match (pair[0], pair[1]) {
                (_, Layer::Lstm { .. }) => false,
                (Layer::Dense { .. }, Layer::Conv { .. }) => false,
                _ => true,
            };
            if !order_ok {
                return Err(invalid("recurrent and conv layers must precede all dense layers, and only one recurrent layer is allowed"));
            }
        }
        for layer in &self.layers {
            match *layer {
                Layer::Lstm { hidden, .. } if hidden < 1 => return Err(invalid("recurrent width must be at least 1")),
                Layer::Conv { kernel, .. } if kernel == 0 || kernel % 2 == 0 => {
                    return Err(invalid(format!("conv kernel width {kernel} must be odd")))
                }
                Layer::Dense { fan_out, .. } | Layer::Conv { c_out: fan_out, .. } if fan_out < 1 => {
                    return Err(invalid("layer width must be at least 1"))
                }
                _ => {}
            }
        }
        let shapes: Vec<(Vec<usize>, bool)> = self
            .layers
            .iter()
            .flat_map(|l| l.param_shapes().into_iter().map(|(_, s, w)| (s, w)))
            .collect();
        if shapes.len() != self.params.len() {
            return Err(Error::Shape(format!("{} parameter tensors for {} expected", self.params.len(), shapes.len())));
        }
        for (p, (shape, is_weight)) in self.params.iter().zip(&shapes) {
            if p.value.shape() != shape.as_slice() || p.is_weight != *is_weight {
                return Err(Error::Shape(format!("parameter shape {:?}, expected {shape:?}", p.value.shape())));
            }
            if let Some(m) = &p.mask {
                if m.shape() != p.value.shape() || m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(invalid("mask must be binary with the weight's shape"));
                }
            }
            p.value.check_finite("parameters")?;
        }
        Ok(())
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn n_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn topology(&self) -> Topology {
        match self.layers[0] {
            Layer::Lstm { .. } => Topology::Recurrent,
            Layer::Conv { .. } => Topology::CrossSectional,
            Layer::Dense { .. } => Topology::Dense,
        }
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Dense { fan_in, fan_out, .. } => Some((fan_in, fan_out)),
                _ => None,
            })
            .collect()
    }

    /// Symbols within this many rows of each other can influence each other's output.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| match *l {
                Layer::Conv { kernel, .. } => kernel - 1,
                _ => 0,
            })
            .sum::<usize>()
    }

    /// Runs the network on an `[n, 5, m]` window tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Forward> {
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != N_CHANNELS || shape[2] != self.lookback || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "input {shape:?}, network expects [n, {N_CHANNELS}, {}]",
                self.lookback
            )));
        }
        let (n, m) = (shape[0], shape[2]);
        let topology = self.topology();
        if let Topology::CrossSectional = topology {
            for l in &self.layers {
                if let Layer::Conv { kernel, .. } = *l {
                    if kernel > n.max(1) && kernel > 1 {
                        return Err(invalid(format!("conv kernel {kernel} is wider than a batch of {n} symbols")));
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let x = match topology {
            // time-major so each step is a contiguous 5-column slice
            Topology::Recurrent => {
                let mut data = vec![0.0; n * m * N_CHANNELS];
                for i in 0..n {
                    for c in 0..N_CHANNELS {
                        for t in 0..m {
                            data[i * m * N_CHANNELS + t * N_CHANNELS + c] = input.data()[(i * N_CHANNELS + c) * m + t];
                        }
                    }
                }
                Tensor::matrix(n, m * N_CHANNELS, data)?
            }
            _ => Tensor::matrix(n, N_CHANNELS * m, input.data().to_vec())?,
        };
        let x = tape.leaf(x)?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.effective()))
            .collect::<Result<_>>()?;

        let mut h = x;
        let mut k = 0;
        for layer in &self.layers {
            h = match *layer {
                Layer::Dense { activation, .. } | Layer::Conv { activation, .. } => {
                    let src = match layer {
                        Layer::Conv { kernel, .. } => tape.patches(h, *kernel)?,
                        _ => h,
                    };
                    let z = tape.matmul(src, params[k])?;
                    let z = tape.add_bias(z, params[k + 1])?;
                    k += 2;
                    match activation {
                        Activation::Tanh => tape.tanh(z)?,
                        Activation::Relu => tape.relu(z)?,
                        Activation::None => z,
                    }
                }
                Layer::Lstm { input: width, hidden } => {
                    let (wx, wh, b) = (params[k], params[k + 1], params[k + 2]);
                    k += 3;
                    lstm_unroll(&mut tape, h, m, width, hidden, wx, wh, b)?
                }
            };
        }
        Ok(Forward {
            tape,
            input: x,
            params,
            output: h,
            topology,
            shape: [n, N_CHANNELS, m],
        })
    }

    /// One factor value per row of the input.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<f64>> {
        let f = self.forward(input)?;
        Ok(f.tape.value(f.output).data().to_vec())
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_unroll(
    tape: &mut Tape,
    x: Var,
    steps: usize,
    width: usize,
    hidden: usize,
    wx: Var,
    wh: Var,
    b: Var,
) -> Result<Var> {
    let mut state: Option<(Var, Var)> = None;
    for t in 0..steps {
        let xt = tape.cols(x, t * width, width)?;
        let mut z = tape.matmul(xt, wx)?;
        if let Some((h, _)) = state {
            let zh = tape.matmul(h, wh)?;
            z = tape.add(z, zh)?;
        }
        let z = tape.add_bias(z, b)?;
        let zi = tape.cols(z, 0, hidden)?;
        let zf = tape.cols(z, hidden, hidden)?;
        let zg = tape.cols(z, 2 * hidden, hidden)?;
        let zo = tape.cols(z, 3 * hidden, hidden)?;
        let i = tape.sigmoid(zi)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let f = tape.sigmoid(zf)?;
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        state = Some((h, c));
    }
    Ok(state.expect("at least one step").0)
}

impl Forward {
    pub fn output(&self) -> &[f64] {
        self.tape.value(self.output).data()
    }

    /// Gradients of `sum(seed * output)` w.r.t. every parameter and the input.
    /// Parameter gradients are multiplied by their masks.
    pub fn backward(&self, net: &NetworkGraph, seed: &[f64]) -> Result<NetGradients> {
        let n = self.shape[0];
        if seed.len() != n {
            return Err(Error::Shape(format!("seed of {} for {n} outputs", seed.len())));
        }
        let grads = self.tape.backward(self.output, &Tensor::matrix(n, 1, seed.to_vec())?)?;
        let params = self
            .params
            .iter()
            .zip(net.params())
            .map(|(v, p)| {
                let mut g = grads.get(*v).reshape(p.value.shape().to_vec())?;
                if let Some(mask) = &p.mask {
                    g.data_mut().iter_mut().zip(mask.data()).for_each(|(a, k)| *a *= k);
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let gx = grads.get(self.input);
        let [n, c, m] = self.shape;
        let input = match self.topology {
            Topology::Recurrent => {
                let mut data = vec![0.0; n * c * m];
                for i in 0..n {
                    for ch in 0..c {
                        for t in 0..m {
                            data[(i * c + ch) * m + t] = gx.data()[i * m * c + t * c + ch];
                        }
                    }
                }
                Tensor::new(vec![n, c, m], data)?
            }
            _ => gx.reshape(vec![n, c, m])?,
        };
        Ok(NetGradients { params, input })
    }
}

/// Dense stack `5m -> width x hidden_layers -> 1` with depth 3..=5 and width 64..=128.
pub fn build_fcn(hidden_layers: usize, width: usize, activation: Activation, lookback: usize, seed: u64) -> Result<NetworkGraph> {
    if !(3..=5).contains(&hidden_layers) {
        return Err(invalid(format!("FCN depth {hidden_layers} outside 3..=5")));
    }
    if !(64..=128).contains(&width) {
        return Err(invalid(format!("FCN width {width} outside 64..=128")));
    }
    build_dense(&vec![width; hidden_layers], activation, lookback, seed)
}

/// Dense stack with arbitrary hidden widths (no range checks).
pub fn build_dense(hidden: &[usize], activation: Activation, lookback: usize, seed: u64) -> Result<NetworkGraph> {
    let mut layers = Vec::new();
    let mut fan_in = N_CHANNELS * lookback;
    for &w in hidden {
        layers.push(Layer::Dense {
            fan_in,
            fan_out: w,
            activation,
        });
        fan_in = w;
    }
    layers.push(Layer::Dense {
        fan_in,
        fan_out: 1,
        activation: Activation::None,
    });
    NetworkGraph::from_layers(lookback, layers, seed)
}

/// LSTM cell of the given width unrolled over the window, then a dense scalar head.
pub fn build_recurrent(hidden: usize, lookback: usize, seed: u64) -> Result<NetworkGraph> {
    if hidden < 1 {
        return Err(invalid("recurrent width must be at least 1"));
    }
    NetworkGraph::from_layers(
        lookback,
        vec![
            Layer::Lstm {
                input: N_CHANNELS,
                hidden,
            },
            Layer::Dense {
                fan_in: hidden,
                fan_out: 1,
                activation: Activation::None,
            },
        ],
        seed,
    )
}

/// Shape of a cross-sectional convolution network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_width: usize,
    pub n_layers: usize,
    pub channels: usize,
    pub head_width: usize,
    pub activation: Activation,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            kernel_width: 3,
            n_layers: 2,
            channels: 16,
            head_width: 16,
            activation: Activation::Tanh,
        }
    }
}

/// `n_layers` convolutions along the symbol axis followed by a per-symbol dense head.
pub fn build_cross_sectional_conv(kernel_width: usize, n_layers: usize, lookback: usize, seed: u64) -> Result<NetworkGraph> {
    build_conv(
        &ConvSpec {
            kernel_width,
            n_layers,
            ..ConvSpec::default()
        },
        lookback,
        seed,
    )
}

pub fn build_conv(spec: &ConvSpec, lookback: usize, seed: u64) -> Result<NetworkGraph> {
    if spec.n_layers < 1 {
        return Err(invalid("conv net needs at least one conv layer"));
    }
    let mut layers = Vec::new();
    let mut c_in = N_CHANNELS * lookback;
    for _ in 0..spec.n_layers {
        layers.push(Layer::Conv {
            c_in,
            c_out: spec.channels,
            kernel: spec.kernel_width,
            activation: spec.activation,
        });
        c_in = spec.channels;
    }
    if spec.head_width > 0 {
        layers.push(Layer::Dense {
            fan_in: c_in,
            fan_out: spec.head_width,
            activation: spec.activation,
        });
        c_in = spec.head_width;
    }
    layers.push(Layer::Dense {
        fan_in: c_in,
        fan_out: 1,
        activation: Activation::None,
    });
    NetworkGraph::from_layers(lookback, layers, seed)
}

/// Plain SGD: `theta <- theta - lr * (g * M)`, with the whole gradient rescaled
/// to `clip` norm when it exceeds it. Masked entries never change.
pub fn sgd_step(net: &mut NetworkGraph, grads: &NetGradients, lr: f64, clip: Option<f64>) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(invalid(format!("learning rate {lr} must be positive")));
    }
    if grads.params.len() != net.params.len() {
        return Err(Error::Shape("gradient count differs from parameter count".into()));
    }
    for (g, p) in grads.params.iter().zip(&net.params) {
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.value.shape())));
        }
        g.check_finite("gradient")?;
    }
    let norm = grads.norm();
    let scale = match clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for (g, p) in grads.params.iter().zip(net.params.iter_mut()) {
        let mask = p.mask.as_ref().map(|m| m.data().to_vec());
        for (k, (w, gv)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            if mask.as_ref().is_some_and(|m| m[k] == 0.0) {
                continue;
            }
            *w -= lr * scale * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(n: usize, m: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * N_CHANNELS * m).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::new(vec![n, N_CHANNELS, m], data).unwrap()
    }

    #[test]
    fn fcn_layer_shapes_and_ranges() {
        let net = build_fcn(3, 64, Activation::Relu, 30, 1).unwrap();
        assert_eq!(net.dense_shapes(), vec![(150, 64), (64, 64), (64, 64), (64, 1)]);
        assert!(build_fcn(6, 64, Activation::Relu, 30, 1).is_err());
        assert!(build_fcn(2, 64, Activation::Relu, 30, 1).is_err());
        assert!(build_fcn(3, 200, Activation::Relu, 30, 1).is_err());
        assert_eq!(net, build_fcn(3, 64, Activation::Relu, 30, 1).unwrap());
        assert_ne!(net, build_fcn(3, 64, Activation::Relu, 30, 2).unwrap());
    }

    #[test]
    fn identity_dense_layer_projects_input() {
        let m = 2;
        let d = N_CHANNELS * m;
        let mut eye = vec![0.0; d];
        eye[3] = 1.0;
        let layers = vec![Layer::Dense {
            fan_in: d,
            fan_out: 1,
            activation: Activation::None,
        }];
        let params = vec![
            Param {
                value: Tensor::matrix(d, 1, eye).unwrap(),
                mask: None,
                is_weight: true,
            },
            Param {
                value: Tensor::zeros(vec![1, 1]),
                mask: None,
                is_weight: false,
            },
        ];
        let net = NetworkGraph::with_params(m, layers, params).unwrap();
        let x = window(4, m, 3);
        let y = net.predict(&x).unwrap();
        for i in 0..4 {
            assert_eq!(y[i], x.data()[i * d + 3]);
        }
    }

    #[test]
    fn output_activation_is_rejected() {
        let layers = vec![Layer::Dense {
            fan_in: 5,
            fan_out: 1,
            activation: Activation::Tanh,
        }];
        assert!(NetworkGraph::from_layers(1, layers, 0).is_err());
    }

    #[test]
    fn plain_loop_forward_matches() {
        let m = 3;
        let net = build_dense(&[7], Activation::Tanh, m, 5).unwrap();
        let x = window(6, m, 9);
        let y = net.predict(&x).unwrap();
        let p = net.params();
        let d = N_CHANNELS * m;
        for i in 0..6 {
            let mut out = p[3].value.data()[0];
            for j in 0..7 {
                let mut z = p[1].value.data()[j];
                for k in 0..d {
                    z += x.data()[i * d + k] * p[0].value.data()[k * 7 + j];
                }
                out += z.tanh() * p[2].value.data()[j];
            }
            assert!((out - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_does_not_mix_symbols_except_for_conv() {
        let m = 4;
        let x = window(32, m, 11);
        let single = Tensor::new(vec![1, N_CHANNELS, m], x.data()[5 * N_CHANNELS * m..6 * N_CHANNELS * m].to_vec()).unwrap();
        for net in [
            build_dense(&[16, 16], Activation::Tanh, m, 1).unwrap(),
            build_recurrent(6, m, 2).unwrap(),
        ] {
            let all = net.predict(&x).unwrap();
            let one = net.predict(&single).unwrap();
            assert_eq!(all[5].to_bits(), one[0].to_bits());
        }
    }

    #[test]
    fn lstm_single_step_matches_cell_formula() {
        let net = build_recurrent(3, 1, 4).unwrap();
        let x = window(2, 1, 8);
        let y = net.predict(&x).unwrap();
        let p = net.params();
        let (wx, b, wo, bo) = (p[0].value.data(), p[2].value.data(), p[3].value.data(), p[4].value.data()[0]);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for i in 0..2 {
            let xi = &x.data()[i * 5..(i + 1) * 5];
            let z: Vec<f64> = (0..12).map(|j| b[j] + (0..5).map(|c| xi[c] * wx[c * 12 + j]).sum::<f64>()).collect();
            let mut out = bo;
            for u in 0..3 {
                let c = sig(z[u]) * z[6 + u].tanh();
                out += sig(z[9 + u]) * c.tanh() * wo[u];
            }
            assert!((out - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_lstm_is_predictable() {
        let mut net = build_recurrent(2, 4, 0).unwrap();
        for p in net.params_mut().iter_mut().take(2) {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        // gates open, candidate tanh(0.5)
        let b = net.params_mut()[2].value.data_mut();
        b.iter_mut().for_each(|v| *v = 50.0);
        b[4] = 0.5;
        b[5] = 0.5;
        let y = net.predict(&window(3, 4, 1)).unwrap();
        let p = net.params();
        let h = (4.0 * 0.5f64.tanh()).tanh();
        let expected = h * (p[3].value.data()[0] + p[3].value.data()[1]) + p[4].value.data()[0];
        for v in y {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_identity_kernel_is_per_symbol() {
        let m = 2;
        let mut net = build_conv(
            &ConvSpec {
                kernel_width: 1,
                n_layers: 1,
                channels: N_CHANNELS * m,
                head_width: 4,
                activation: Activation::Tanh,
            },
            m,
            3,
        )
        .unwrap();
        let d = N_CHANNELS * m;
        let w = net.params_mut()[0].value.data_mut();
        w.iter_mut().enumerate().for_each(|(k, v)| *v = if k / d == k % d { 1.0 } else { 0.0 });
        let x = window(5, m, 2);
        let all = net.predict(&x).unwrap();
        let single = Tensor::new(vec![1, N_CHANNELS, m], x.data()[2 * d..3 * d].to_vec()).unwrap();
        assert_eq!(all[2].to_bits(), net.predict(&single).unwrap()[0].to_bits());
    }

    #[test]
    fn conv_kernel_wider_than_batch_errors() {
        let net = build_cross_sectional_conv(5, 1, 2, 0).unwrap();
        assert!(net.forward(&window(3, 2, 0)).is_err());
    }

    #[test]
    fn sgd_step_on_square() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let f = tape.mul(w, w).unwrap();
        let g = tape.backward(f, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap().get(w);
        let layers = vec![Layer::Dense {
            fan_in: N_CHANNELS,
            fan_out: 1,
            activation: Activation::None,
        }];
        let mut net = NetworkGraph::from_layers(1, layers, 0).unwrap();
        net.params_mut()[0].value.data_mut()[0] = 1.0;
        let mut gw = Tensor::zeros(vec![N_CHANNELS, 1]);
        gw.data_mut()[0] = g.data()[0];
        let grads = NetGradients {
            params: vec![gw, Tensor::zeros(vec![1, 1])],
            input: Tensor::zeros(vec![1, N_CHANNELS, 1]),
        };
        sgd_step(&mut net, &grads, 0.1, None).unwrap();
        assert!((net.params()[0].value.data()[0] - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut net, &grads, 0.0, None).is_err());
        assert!(sgd_step(&mut net, &grads, -1.0, None).is_err());
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut net = build_dense(&[3], Activation::Tanh, 1, 0).unwrap();
        let before = net.clone();
        let grads = NetGradients {
            params: net.params().iter().map(|p| Tensor::filled(p.value.shape().to_vec(), 100.0)).collect(),
            input: Tensor::zeros(vec![1, N_CHANNELS, 1]),
        };
        sgd_step(&mut net, &grads, 1.0, Some(5.0)).unwrap();
        let moved: f64 = net
            .params()
            .iter()
            .zip(before.params())
            .map(|(a, b)| a.value.data().iter().zip(b.value.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .sum();
        assert!((moved.sqrt() - 5.0).abs() < 1e-9);
    }
}
