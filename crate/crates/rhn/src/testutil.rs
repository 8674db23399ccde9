//! Unit-test helpers. The scalar-loop reference here deliberately avoids the
//! Matrix2D ops so it can serve as an independent oracle for the forward pass.

use crate::rhn::{RhnInputParams, RhnLayerParams};

pub fn assert_close_rel(got: f64, want: f64, tol: f64, what: &str) {
    let denom = got.abs().max(want.abs()).max(1e-4);
    let rel = (got - want).abs() / denom;
    assert!(rel < tol, "{what}: got {got}, want {want}, rel err {rel:.3e}");
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// RHN transition recomputed with plain index loops over the raw buffers.
pub fn scalar_rhn_cell_forward(
    x: &[f64],
    s_in: &[f64],
    input: &RhnInputParams,
    layers: &[RhnLayerParams],
    coupled: bool,
) -> Vec<f64> {
    let n = s_in.len();
    let m = x.len();
    let mut s = s_in.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut ph = layer.b_h[i];
            let mut pt = layer.b_t[i];
            let mut pc = layer.b_c.as_ref().map_or(0.0, |b| b[i]);
            for j in 0..n {
                ph += layer.r_h.data[i * n + j] * s[j];
                pt += layer.r_t.data[i * n + j] * s[j];
                if let Some(rc) = &layer.r_c {
                    pc += rc.data[i * n + j] * s[j];
                }
            }
            if l == 0 {
                for j in 0..m {
                    ph += input.w_h.data[i * m + j] * x[j];
                    pt += input.w_t.data[i * m + j] * x[j];
                    if let Some(wc) = &input.w_c {
                        pc += wc.data[i * m + j] * x[j];
                    }
                }
            }
            let h = ph.tanh();
            let t = sig(pt);
            let c = if coupled { 1.0 - t } else { sig(pc) };
            next[i] = h * t + s[i] * c;
        }
        s = next;
    }
    s
}
