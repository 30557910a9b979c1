//! Dense row-major f64 tensors and the forward kernels.
//!
//! All model math runs in f64; file formats quantize to f32 at the boundary.
//! Every public operation checks its output for NaN/Inf so a numerical blowup
//! surfaces at the op that produced it instead of ten layers later.

use super::NumericsError;

/// Dense tensor, row-major. Shape is immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Construct with full validation: shape/length agreement and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, NumericsError> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Row vector (1 x n).
    pub fn row(data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let n = data.len();
        Tensor::from_vec(vec![1, n], data)
    }

    /// Column vector (n x 1).
    pub fn column(data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let n = data.len();
        Tensor::from_vec(vec![n, 1], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    fn check_finite(&self, op: &'static str) -> Result<(), NumericsError> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(NumericsError::NonFinite { op })
        }
    }

    fn finished(self, op: &'static str) -> Result<Tensor, NumericsError> {
        self.check_finite(op)?;
        Ok(self)
    }
}

/// Boolean attention mask; `true` means the (query, key) pair is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMask {
    pub fn all_allowed(rows: usize, cols: usize) -> BoolMask {
        BoolMask { rows, cols, data: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> BoolMask {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        BoolMask { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }
}

fn expect_matrix(t: &Tensor, what: &str) -> Result<(), NumericsError> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch(format!(
            "{what} must be rank-2, got shape {:?}",
            t.shape()
        )))
    }
}

/// C = A (m x k) @ B (k x n).
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    expect_matrix(a, "matmul lhs")?;
    expect_matrix(b, "matmul rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(NumericsError::ShapeMismatch(format!(
            "matmul: lhs {m}x{k} vs rhs {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }.finished("matmul")
}

/// C = A (m x k) @ B^T where B is (n x k).
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    expect_matrix(a, "matmul_nt lhs")?;
    expect_matrix(b, "matmul_nt rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(NumericsError::ShapeMismatch(format!(
            "matmul_nt: lhs {m}x{k} vs rhs {n}x{k2}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor { shape: vec![m, n], data: out }.finished("matmul_nt")
}

/// C = A^T (k x m) @ B (m x n), with A stored (m x k).
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    expect_matrix(a, "matmul_tn lhs")?;
    expect_matrix(b, "matmul_tn rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (m2, n) = (b.rows(), b.cols());
    if m != m2 {
        return Err(NumericsError::ShapeMismatch(format!(
            "matmul_tn: lhs {m}x{k} vs rhs {m2}x{n}"
        )));
    }
    let mut out = vec![0.0; k * n];
    for p in 0..m {
        let arow = &a.data[p * k..(p + 1) * k];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { shape: vec![k, n], data: out }.finished("matmul_tn")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor { shape: a.shape.clone(), data }.finished("add")
}

pub fn scale(a: &Tensor, factor: f64) -> Result<Tensor, NumericsError> {
    let data = a.data.iter().map(|x| x * factor).collect();
    Tensor { shape: a.shape.clone(), data }.finished("scale")
}

/// Add a (1 x d) bias row to every row of A (m x d).
pub fn add_row_broadcast(a: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    expect_matrix(a, "add_row_broadcast lhs")?;
    if bias.numel() != a.cols() {
        return Err(NumericsError::ShapeMismatch(format!(
            "add_row_broadcast: matrix {}x{} vs bias of {}",
            a.rows(),
            a.cols(),
            bias.numel()
        )));
    }
    let d = a.cols();
    let mut data = a.data.clone();
    for row in data.chunks_mut(d) {
        for (x, b) in row.iter_mut().zip(&bias.data) {
            *x += b;
        }
    }
    Tensor { shape: a.shape.clone(), data }.finished("add_row_broadcast")
}

/// Row-wise softmax with optional mask. Stabilized by row-max subtraction;
/// masked-out entries are exactly zero in the output.
pub fn softmax_rows(m: &Tensor, mask: Option<&BoolMask>) -> Result<Tensor, NumericsError> {
    expect_matrix(m, "softmax_rows input")?;
    let (rows, cols) = (m.rows(), m.cols());
    if let Some(mk) = mask {
        if mk.rows() != rows || mk.cols() != cols {
            return Err(NumericsError::ShapeMismatch(format!(
                "softmax mask {}x{} vs logits {rows}x{cols}",
                mk.rows(),
                mk.cols()
            )));
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let logits = m.row_slice(r);
        let mut row_max = f64::NEG_INFINITY;
        for (c, &z) in logits.iter().enumerate() {
            if mask.map_or(true, |mk| mk.allowed(r, c)) && z > row_max {
                row_max = z;
            }
        }
        if row_max == f64::NEG_INFINITY {
            return Err(NumericsError::DegenerateAttentionRow { row: r });
        }
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut denom = 0.0;
        for (c, &z) in logits.iter().enumerate() {
            if mask.map_or(true, |mk| mk.allowed(r, c)) {
                let e = (z - row_max).exp();
                orow[c] = e;
                denom += e;
            }
        }
        for v in orow.iter_mut() {
            *v /= denom;
        }
    }
    Tensor { shape: vec![rows, cols], data: out }.finished("softmax_rows")
}

/// Scaled dot-product attention. Returns (output, attention matrix); the
/// attention matrix is retained by callers for recording.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&BoolMask>,
) -> Result<(Tensor, Tensor), NumericsError> {
    expect_matrix(q, "attention q")?;
    expect_matrix(k, "attention k")?;
    expect_matrix(v, "attention v")?;
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(NumericsError::ShapeMismatch(format!(
            "attention: q {}x{}, k {}x{}, v {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    let scores = matmul_nt(q, k)?;
    let scaled = scale(&scores, 1.0 / (q.cols() as f64).sqrt())?;
    let a = softmax_rows(&scaled, mask)?;
    let out = matmul(&a, v)?;
    Ok((out, a))
}

/// GELU, tanh approximation. Smooth and cheap to differentiate.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn gelu_tensor(a: &Tensor) -> Result<Tensor, NumericsError> {
    let data = a.data.iter().map(|&x| gelu(x)).collect();
    Tensor { shape: a.shape.clone(), data }.finished("gelu")
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-row layer normalization: gamma * (x - mean) / sqrt(var + eps) + beta.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor, NumericsError> {
    expect_matrix(x, "layer_norm input")?;
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(NumericsError::ShapeMismatch(format!(
            "layer_norm: width {d} vs gamma {} / beta {}",
            gamma.numel(),
            beta.numel()
        )));
    }
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let (mean, rstd) = row_moments(row);
        let orow = &mut out[r * d..(r + 1) * d];
        for c in 0..d {
            orow[c] = gamma.data[c] * (row[c] - mean) * rstd + beta.data[c];
        }
    }
    Tensor { shape: x.shape.clone(), data: out }.finished("layer_norm")
}

/// Mean and reciprocal standard deviation of one row (biased variance).
pub(crate) fn row_moments(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}
