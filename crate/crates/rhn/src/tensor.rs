//! Minimal dense linear-algebra substrate: row-major f64 matrices, the few
//! vector ops the model needs, and softmax cross-entropy.
//!
//! Everything computes in f64. Checkpoints may round-trip through f32 (see
//! `serialize`), but in-memory math is always 64-bit so the finite-difference
//! gradient checks have headroom.

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Vector = Vec<f64>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix2D { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix2D { rows: r, cols: c, data }
    }

    /// Entries uniform in [-scale, scale).
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
        Matrix2D { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// m · v
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::contract(
                "matvec",
                format!("matrix is {}x{}, vector has length {}", self.rows, self.cols, v.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// out += mᵀ · v   (the backward companion of `matvec`)
    pub fn matvec_t_accum(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if self.rows != v.len() || self.cols != out.len() {
            return Err(Error::contract(
                "matvec_t_accum",
                format!(
                    "matrix is {}x{}, vector has length {}, out has length {}",
                    self.rows,
                    self.cols,
                    v.len(),
                    out.len()
                ),
            ));
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &r) in out.iter_mut().zip(row) {
                *o += vi * r;
            }
        }
        Ok(())
    }

    /// self += a ⊗ b  (rank-one update; gradient of matvec wrt the matrix)
    pub fn outer_accum(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        if self.rows != a.len() || self.cols != b.len() {
            return Err(Error::contract(
                "outer_accum",
                format!(
                    "matrix is {}x{}, outer product is {}x{}",
                    self.rows,
                    self.cols,
                    a.len(),
                    b.len()
                ),
            ));
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for (r, &bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vector {
    v.iter().map(|&x| x.tanh()).collect()
}

pub fn add_assign(acc: &mut [f64], v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cross-entropy loss of `logits` against `target`, and its gradient
/// softmax(logits) − onehot(target). Stabilized by max subtraction.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vector)> {
    if target >= logits.len() {
        return Err(Error::contract(
            "softmax_xent",
            format!("target {} out of range for {} logits", target, logits.len()),
        ));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vector = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = grad.iter().sum();
    let loss = z.ln() - (logits[target] - max);
    for g in grad.iter_mut() {
        *g /= z;
    }
    grad[target] -= 1.0;
    Ok((loss, grad))
}
