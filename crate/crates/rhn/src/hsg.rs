//! Highway State Gating: a per-neuron convex mix of the previous output state
//! and the RHN output.
//!
//! g = σ(W_R ŝ_prev + W_F s_L + b_G), ŝ = g·ŝ_prev + (1−g)·s_L.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{add_assign, hadamard, sigmoid, Matrix2D, Vector};

#[derive(Debug, Clone)]
pub struct HsgParams {
    pub w_r: Matrix2D,
    pub w_f: Matrix2D,
    pub b_g: Vector,
}

impl HsgParams {
    pub fn init(hidden: usize, gate_bias: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        HsgParams {
            w_r: Matrix2D::uniform(hidden, hidden, scale, rng),
            w_f: Matrix2D::uniform(hidden, hidden, scale, rng),
            b_g: vec![gate_bias; hidden],
        }
    }

    pub fn zeros_like(&self) -> Self {
        HsgParams {
            w_r: Matrix2D::zeros(self.w_r.rows, self.w_r.cols),
            w_f: Matrix2D::zeros(self.w_f.rows, self.w_f.cols),
            b_g: vec![0.0; self.b_g.len()],
        }
    }

    /// Pin the gate fully open (g = 1, state frozen) or fully closed
    /// (g = 0, pass-through of the RHN output). Saturating the bias makes the
    /// sigmoid exact in f64, so downstream arithmetic is bit-identical to the
    /// corresponding hand-wired graph.
    pub fn force_gate(&mut self, open: bool) {
        let n = self.b_g.len();
        self.w_r = Matrix2D::zeros(n, n);
        self.w_f = Matrix2D::zeros(n, n);
        self.b_g = vec![if open { 1e9 } else { -1e9 }; n];
    }
}

#[derive(Debug, Clone)]
pub struct HsgStepCache {
    pub s_hat_prev: Vector,
    pub s_l: Vector,
    pub g: Vector,
    pub s_hat: Vector,
}

pub fn hsg_forward(
    s_hat_prev: &[f64],
    s_l: &[f64],
    params: &HsgParams,
) -> Result<(Vector, HsgStepCache)> {
    let n = params.b_g.len();
    if s_hat_prev.len() != n || s_l.len() != n {
        return Err(Error::contract(
            "hsg_forward",
            format!("expected vectors of length {n}, got {} and {}", s_hat_prev.len(), s_l.len()),
        ));
    }
    let mut pre = params.w_r.matvec(s_hat_prev)?;
    add_assign(&mut pre, &params.w_f.matvec(s_l)?);
    add_assign(&mut pre, &params.b_g);
    let g = sigmoid(&pre);
    let s_hat: Vector =
        (0..n).map(|i| g[i] * s_hat_prev[i] + (1.0 - g[i]) * s_l[i]).collect();
    let cache = HsgStepCache {
        s_hat_prev: s_hat_prev.to_vec(),
        s_l: s_l.to_vec(),
        g: g.clone(),
        s_hat: s_hat.clone(),
    };
    Ok((s_hat, cache))
}

/// Exact reverse of `hsg_forward`, including the dependence of g on both
/// inputs. Parameter gradients accumulate into `grads`.
pub fn hsg_backward(
    grad_s_hat: &[f64],
    cache: &HsgStepCache,
    params: &HsgParams,
    grads: &mut HsgParams,
) -> Result<(Vector, Vector)> {
    let n = params.b_g.len();
    if grad_s_hat.len() != n || cache.g.len() != n {
        return Err(Error::contract(
            "hsg_backward",
            format!("expected vectors of length {n}, got {}", grad_s_hat.len()),
        ));
    }
    // ŝ = g·ŝ_prev + (1−g)·s_L
    let d_g: Vector =
        (0..n).map(|i| grad_s_hat[i] * (cache.s_hat_prev[i] - cache.s_l[i])).collect();
    let d_pre: Vector = (0..n).map(|i| d_g[i] * cache.g[i] * (1.0 - cache.g[i])).collect();

    let mut grad_prev = hadamard(grad_s_hat, &cache.g);
    let mut grad_s_l: Vector = (0..n).map(|i| grad_s_hat[i] * (1.0 - cache.g[i])).collect();
    params.w_r.matvec_t_accum(&d_pre, &mut grad_prev)?;
    params.w_f.matvec_t_accum(&d_pre, &mut grad_s_l)?;

    grads.w_r.outer_accum(&d_pre, &cache.s_hat_prev)?;
    grads.w_f.outer_accum(&d_pre, &cache.s_l)?;
    add_assign(&mut grads.b_g, &d_pre);
    Ok((grad_prev, grad_s_l))
}

/// Flatten the gate activations of a run, in step order, for histogramming.
pub fn collect_gate_values(caches: &[HsgStepCache]) -> Result<Vector> {
    if caches.is_empty() {
        return Err(Error::contract("collect_gate_values", "empty cache sequence"));
    }
    let mut out = Vec::with_capacity(caches.len() * caches[0].g.len());
    for c in caches {
        out.extend_from_slice(&c.g);
    }
    Ok(out)
}
