//! The recurrent highway transition: L stacked highway layers per time step,
//! with an exact hand-derived backward pass.
//!
//! Per layer: h = tanh(W_H x·1[l=1] + R_H s + b_H), t = σ(..T..), c = σ(..C..)
//! or c = 1 − t when the gates are coupled, and s' = h·t + s·c elementwise.
//! Input projections W apply at layer 1 only.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{add_assign, hadamard, sigmoid, tanh, Matrix2D, Vector};

#[derive(Debug, Clone)]
pub struct RhnLayerParams {
    pub r_h: Matrix2D,
    pub r_t: Matrix2D,
    /// Absent when gates are coupled (c = 1 − t).
    pub r_c: Option<Matrix2D>,
    pub b_h: Vector,
    pub b_t: Vector,
    pub b_c: Option<Vector>,
}

impl RhnLayerParams {
    pub fn init(hidden: usize, coupled: bool, gate_bias: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        RhnLayerParams {
            r_h: Matrix2D::uniform(hidden, hidden, scale, rng),
            r_t: Matrix2D::uniform(hidden, hidden, scale, rng),
            r_c: (!coupled).then(|| Matrix2D::uniform(hidden, hidden, scale, rng)),
            b_h: vec![0.0; hidden],
            b_t: vec![gate_bias; hidden],
            b_c: (!coupled).then(|| vec![0.0; hidden]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RhnLayerParams {
            r_h: Matrix2D::zeros(self.r_h.rows, self.r_h.cols),
            r_t: Matrix2D::zeros(self.r_t.rows, self.r_t.cols),
            r_c: self.r_c.as_ref().map(|m| Matrix2D::zeros(m.rows, m.cols)),
            b_h: vec![0.0; self.b_h.len()],
            b_t: vec![0.0; self.b_t.len()],
            b_c: self.b_c.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.r_h.rows
    }
}

/// Input projections, applied at layer 1 only.
#[derive(Debug, Clone)]
pub struct RhnInputParams {
    pub w_h: Matrix2D,
    pub w_t: Matrix2D,
    pub w_c: Option<Matrix2D>,
}

impl RhnInputParams {
    pub fn init(hidden: usize, embed: usize, coupled: bool, rng: &mut Rng) -> Self {
        let scale = 1.0 / (embed as f64).sqrt();
        RhnInputParams {
            w_h: Matrix2D::uniform(hidden, embed, scale, rng),
            w_t: Matrix2D::uniform(hidden, embed, scale, rng),
            w_c: (!coupled).then(|| Matrix2D::uniform(hidden, embed, scale, rng)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RhnInputParams {
            w_h: Matrix2D::zeros(self.w_h.rows, self.w_h.cols),
            w_t: Matrix2D::zeros(self.w_t.rows, self.w_t.cols),
            w_c: self.w_c.as_ref().map(|m| Matrix2D::zeros(m.rows, m.cols)),
        }
    }
}

/// Activations saved by one layer's forward pass.
#[derive(Debug, Clone)]
pub struct RhnLayerCache {
    pub s_prev: Vector,
    pub h: Vector,
    pub t: Vector,
    pub c: Vector,
    pub s_out: Vector,
}

/// All activations of one time step: layer caches in order l = 1..L.
#[derive(Debug, Clone)]
pub struct RhnStepCache {
    pub x: Vector,
    pub layers: Vec<RhnLayerCache>,
}

impl RhnStepCache {
    pub fn s_in(&self) -> &Vector {
        &self.layers[0].s_prev
    }

    pub fn s_out(&self) -> &Vector {
        &self.layers.last().unwrap().s_out
    }
}

/// One highway layer. `x`/`input_params` must be present iff this is layer 1.
pub fn rhn_layer_forward(
    x: Option<&[f64]>,
    s_prev: &[f64],
    layer: &RhnLayerParams,
    input_params: Option<&RhnInputParams>,
    coupled: bool,
) -> Result<RhnLayerCache> {
    if x.is_some() != input_params.is_some() {
        return Err(Error::contract(
            "rhn_layer_forward",
            "input vector and input params must both be present (layer 1) or both absent",
        ));
    }
    let n = layer.hidden();
    if s_prev.len() != n {
        return Err(Error::contract(
            "rhn_layer_forward",
            format!("state has length {}, layer expects {}", s_prev.len(), n),
        ));
    }

    let mut pre_h = layer.r_h.matvec(s_prev)?;
    let mut pre_t = layer.r_t.matvec(s_prev)?;
    add_assign(&mut pre_h, &layer.b_h);
    add_assign(&mut pre_t, &layer.b_t);
    let mut pre_c = if coupled {
        None
    } else {
        let rc = layer.r_c.as_ref().ok_or_else(|| {
            Error::contract("rhn_layer_forward", "uncoupled config but R_C is absent")
        })?;
        let mut p = rc.matvec(s_prev)?;
        add_assign(&mut p, layer.b_c.as_ref().unwrap());
        Some(p)
    };
    if let (Some(x), Some(w)) = (x, input_params) {
        add_assign(&mut pre_h, &w.w_h.matvec(x)?);
        add_assign(&mut pre_t, &w.w_t.matvec(x)?);
        if let Some(pc) = pre_c.as_mut() {
            let wc = w.w_c.as_ref().ok_or_else(|| {
                Error::contract("rhn_layer_forward", "uncoupled config but W_C is absent")
            })?;
            add_assign(pc, &wc.matvec(x)?);
        }
    }

    let h = tanh(&pre_h);
    let t = sigmoid(&pre_t);
    let c = match pre_c {
        Some(p) => sigmoid(&p),
        None => t.iter().map(|&ti| 1.0 - ti).collect(),
    };
    let s_out: Vector =
        (0..n).map(|i| h[i] * t[i] + s_prev[i] * c[i]).collect();
    Ok(RhnLayerCache { s_prev: s_prev.to_vec(), h, t, c, s_out })
}

/// Full transition: chains L layers with s_0 = `s_in`.
pub fn rhn_cell_forward(
    x: &[f64],
    s_in: &[f64],
    input_params: &RhnInputParams,
    layers: &[RhnLayerParams],
    coupled: bool,
) -> Result<(Vector, RhnStepCache)> {
    if layers.is_empty() {
        return Err(Error::contract("rhn_cell_forward", "at least one layer required"));
    }
    let mut caches = Vec::with_capacity(layers.len());
    let mut state = s_in.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let cache = if l == 0 {
            rhn_layer_forward(Some(x), &state, layer, Some(input_params), coupled)?
        } else {
            rhn_layer_forward(None, &state, layer, None, coupled)?
        };
        state = cache.s_out.clone();
        caches.push(cache);
    }
    Ok((state, RhnStepCache { x: x.to_vec(), layers: caches }))
}

/// Gradient holders for one step's backward pass.
#[derive(Debug)]
pub struct RhnGrads<'a> {
    pub input: &'a mut RhnInputParams,
    pub layers: &'a mut [RhnLayerParams],
}

/// Exact reverse of `rhn_cell_forward`. Parameter gradients accumulate into
/// `grads`; returns (grad wrt x, grad wrt s_in).
pub fn rhn_cell_backward(
    grad_s_out: &[f64],
    cache: &RhnStepCache,
    input_params: &RhnInputParams,
    layers: &[RhnLayerParams],
    coupled: bool,
    grads: RhnGrads,
) -> Result<(Vector, Vector)> {
    if layers.len() != cache.layers.len() || layers.len() != grads.layers.len() {
        return Err(Error::contract(
            "rhn_cell_backward",
            format!(
                "cache has {} layers, params {}, grads {}",
                cache.layers.len(),
                layers.len(),
                grads.layers.len()
            ),
        ));
    }
    let n = layers[0].hidden();
    let m = cache.x.len();
    let mut grad_state = grad_s_out.to_vec();
    let mut grad_x = vec![0.0; m];

    for l in (0..layers.len()).rev() {
        let lc = &cache.layers[l];
        let lp = &layers[l];
        let lg = &mut grads.layers[l];

        // s_out = h·t + s_prev·c
        let d_h = hadamard(&grad_state, &lc.t);
        let d_t = hadamard(&grad_state, &lc.h);
        let d_c = hadamard(&grad_state, &lc.s_prev);
        let mut grad_s_prev = hadamard(&grad_state, &lc.c);

        // h = tanh(pre_h)
        let d_pre_h: Vector =
            (0..n).map(|i| d_h[i] * (1.0 - lc.h[i] * lc.h[i])).collect();
        // t = σ(pre_t); when coupled, c = 1 − t feeds back into the same gate.
        let d_pre_t: Vector = if coupled {
            (0..n).map(|i| (d_t[i] - d_c[i]) * lc.t[i] * (1.0 - lc.t[i])).collect()
        } else {
            (0..n).map(|i| d_t[i] * lc.t[i] * (1.0 - lc.t[i])).collect()
        };
        let d_pre_c: Option<Vector> = if coupled {
            None
        } else {
            Some((0..n).map(|i| d_c[i] * lc.c[i] * (1.0 - lc.c[i])).collect())
        };

        lg.r_h.outer_accum(&d_pre_h, &lc.s_prev)?;
        lg.r_t.outer_accum(&d_pre_t, &lc.s_prev)?;
        add_assign(&mut lg.b_h, &d_pre_h);
        add_assign(&mut lg.b_t, &d_pre_t);
        lp.r_h.matvec_t_accum(&d_pre_h, &mut grad_s_prev)?;
        lp.r_t.matvec_t_accum(&d_pre_t, &mut grad_s_prev)?;
        if let Some(d_pre_c) = &d_pre_c {
            let rc = lp.r_c.as_ref().unwrap();
            lg.r_c.as_mut().unwrap().outer_accum(d_pre_c, &lc.s_prev)?;
            add_assign(lg.b_c.as_mut().unwrap(), d_pre_c);
            rc.matvec_t_accum(d_pre_c, &mut grad_s_prev)?;
        }

        if l == 0 {
            grads.input.w_h.outer_accum(&d_pre_h, &cache.x)?;
            grads.input.w_t.outer_accum(&d_pre_t, &cache.x)?;
            input_params.w_h.matvec_t_accum(&d_pre_h, &mut grad_x)?;
            input_params.w_t.matvec_t_accum(&d_pre_t, &mut grad_x)?;
            if let Some(d_pre_c) = &d_pre_c {
                let wc = input_params.w_c.as_ref().unwrap();
                grads.input.w_c.as_mut().unwrap().outer_accum(d_pre_c, &cache.x)?;
                wc.matvec_t_accum(d_pre_c, &mut grad_x)?;
            }
        }

        grad_state = grad_s_prev;
    }

    Ok((grad_x, grad_state))
}
