use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Cols { x: Var, start: usize },
    Patches { x: Var, kernel: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of 2-D matrix operations for reverse-mode differentiation.
///
/// Nodes are pushed in evaluation order, so the vector is already topologically
/// sorted and backward is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node reached by a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`; zeros if `v` did not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        let (r, c) = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::matrix(r, c, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(vec![r, c]),
        }
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b` for row-major `a: m x k`, `b: k x n`, with optional transposes
/// given as (row stride, col stride) pairs.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides describe matrices fully inside the given slices,
    // checked by the callers' shape logic.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        value.check_finite(what)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    /// Records a constant or parameter. Any shape is viewed as rows x trailing.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        let (r, c) = dims(&value);
        let value = value.reshape(vec![r, c])?;
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
        );
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(bias) != (1, c) {
            return Err(Error::Shape(format!("bias {:?} for {r}x{c}", self.dims(bias))));
        }
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        self.push(Tensor::matrix(r, c, out)?, Op::AddBias(x, bias), "bias add")
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(Tensor::matrix(r, c, out)?, op, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, what: &str) -> Result<Var> {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|v| f(*v)).collect();
        self.push(Tensor::matrix(r, c, out)?, op, what)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    /// Columns `start..start + len` of `x`.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::Shape(format!("columns {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        self.push(Tensor::matrix(r, len, out)?, Op::Cols { x, start }, "column slice")
    }

    /// Zero-padded neighbourhoods along the row axis: row `i` of the result is
    /// rows `i - h ..= i + h` of `x` concatenated, `h = (kernel - 1) / 2`.
    /// Multiplying by a `kernel*c x c_out` matrix is a 1-D convolution over rows.
    pub fn patches(&mut self, x: Var, kernel: usize) -> Result<Var> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel width {kernel} must be odd")));
        }
        let (r, c) = self.dims(x);
        let h = (kernel - 1) / 2;
        let src = self.value(x).data();
        let width = kernel * c;
        let mut out = vec![0.0; r * width];
        for i in 0..r {
            for j in 0..kernel {
                let Some(src_row) = (i + j).checked_sub(h).filter(|&s| s < r) else {
                    continue;
                };
                out[i * width + j * c..i * width + (j + 1) * c].copy_from_slice(&src[src_row * c..(src_row + 1) * c]);
            }
        }
        self.push(Tensor::matrix(r, width, out)?, Op::Patches { x, kernel }, "patches")
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument("backward on a node not recorded on this tape".into()));
        }
        let out_dims = self.dims(output);
        if dims(seed) != out_dims || seed.len() != out_dims.0 * out_dims.1 {
            return Err(Error::Shape(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                out_dims
            )));
        }
        seed.check_finite("seed gradient")?;
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[output.0] = Some(seed.data().to_vec());

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(a);
                    let (_, nn) = self.dims(b);
                    let av = self.value(a).data();
                    let bv = self.value(b).data();
                    // dA = G * B^T, dB = A^T * G
                    let ga = acc(&mut grads, a, m * k);
                    gemm(m, nn, k, &g, (nn as isize, 1), bv, (1, nn as isize), ga);
                    let gb = acc(&mut grads, b, k * nn);
                    gemm(k, m, nn, av, (1, k as isize), &g, (nn as isize, 1), gb);
                }
                Op::AddBias(x, bias) => {
                    let (r, c) = self.dims(x);
                    let gx = acc(&mut grads, x, r * c);
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    let gb = acc(&mut grads, bias, c);
                    for row in g.chunks(c.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let len = g.len();
                    let ga = acc(&mut grads, a, len);
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    let gb = acc(&mut grads, b, len);
                    gb.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                }
                Op::Mul(a, b) => {
                    let len = g.len();
                    let av = self.value(a).data();
                    let bv = self.value(b).data();
                    let ga = acc(&mut grads, a, len);
                    for k in 0..len {
                        ga[k] += g[k] * bv[k];
                    }
                    let gb = acc(&mut grads, b, len);
                    for k in 0..len {
                        gb[k] += g[k] * av[k];
                    }
                }
                Op::Tanh(x) | Op::Sigmoid(x) | Op::Relu(x) => {
                    let y = node.value.data();
                    let xv = self.value(x).data();
                    let gx = acc(&mut grads, x, g.len());
                    for k in 0..g.len() {
                        let d = match node.op {
                            Op::Tanh(_) => 1.0 - y[k] * y[k],
                            Op::Sigmoid(_) => y[k] * (1.0 - y[k]),
                            _ => {
                                if xv[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[k] += g[k] * d;
                    }
                }
                Op::Cols { x, start } => {
                    let (r, c) = self.dims(x);
                    let len = node.value.cols();
                    let gx = acc(&mut grads, x, r * c);
                    for row in 0..r {
                        for j in 0..len {
                            gx[row * c + start + j] += g[row * len + j];
                        }
                    }
                }
                Op::Patches { x, kernel } => {
                    let (r, c) = self.dims(x);
                    let h = (kernel - 1) / 2;
                    let width = kernel * c;
                    let gx = acc(&mut grads, x, r * c);
                    for i in 0..r {
                        for j in 0..kernel {
                            let Some(src_row) = (i + j).checked_sub(h).filter(|&s| s < r) else {
                                continue;
                            };
                            for ch in 0..c {
                                gx[src_row * c + ch] += g[i * width + j * c + ch];
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        let mut shapes: Vec<(usize, usize)> = self.nodes.iter().map(|nd| dims(&nd.value)).collect();
        shapes.truncate(n);
        shapes.resize(self.nodes.len(), (0, 0));
        let mut all = grads;
        all.resize(self.nodes.len(), None);
        Ok(Gradients { grads: all, shapes })
    }
}
