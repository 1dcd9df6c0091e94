use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use super::add_outer;
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

/// Bias-free GRU weights. `w_*` act on the input, `u_*` on the previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
}

impl GruWeights {
    pub const ENC_FWD_NAMES: [&'static str; 6] = [
        "enc_fwd.w_z",
        "enc_fwd.u_z",
        "enc_fwd.w_r",
        "enc_fwd.u_r",
        "enc_fwd.w_h",
        "enc_fwd.u_h",
    ];
    pub const ENC_BWD_NAMES: [&'static str; 6] = [
        "enc_bwd.w_z",
        "enc_bwd.u_z",
        "enc_bwd.w_r",
        "enc_bwd.u_r",
        "enc_bwd.w_h",
        "enc_bwd.u_h",
    ];
    pub const DEC_NAMES: [&'static str; 6] = [
        "dec.w_z", "dec.u_z", "dec.w_r", "dec.u_r", "dec.w_h", "dec.u_h",
    ];

    pub fn matrices(&self) -> [&Array2<f64>; 6] {
        [&self.w_z, &self.u_z, &self.w_r, &self.u_r, &self.w_h, &self.u_h]
    }

    pub fn matrices_mut(&mut self) -> [&mut Array2<f64>; 6] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.w_h,
            &mut self.u_h,
        ]
    }

    pub fn input_size(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.nrows()
    }
}

/// Intermediate values of one GRU step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub candidate: Array1<f64>,
}

/// One GRU step with shape checking.
pub fn gru_cell(x: ArrayView1<f64>, h_prev: ArrayView1<f64>, w: &GruWeights) -> Result<Array1<f64>> {
    let (input, hidden) = (w.input_size(), w.hidden_size());
    for (name, found, expected) in [("x", x.len(), input), ("h_prev", h_prev.len(), hidden)] {
        if found != expected {
            return Err(Error::Shape {
                name: name.into(),
                expected: vec![expected],
                found: vec![found],
            });
        }
    }
    for (i, m) in w.matrices().into_iter().enumerate() {
        let cols = if i % 2 == 0 { input } else { hidden };
        if m.dim() != (hidden, cols) {
            return Err(Error::Shape {
                name: GruWeights::DEC_NAMES[i].trim_start_matches("dec.").into(),
                expected: vec![hidden, cols],
                found: m.shape().to_vec(),
            });
        }
    }
    Ok(gru_forward(x, h_prev, w).0)
}

pub fn gru_forward(x: ArrayView1<f64>, h_prev: ArrayView1<f64>, w: &GruWeights) -> (Array1<f64>, GruCache) {
    let mut z = w.w_z.dot(&x) + w.u_z.dot(&h_prev);
    z.mapv_inplace(sigmoid);
    let mut r = w.w_r.dot(&x) + w.u_r.dot(&h_prev);
    r.mapv_inplace(sigmoid);
    let gated = &r * &h_prev;
    let mut candidate = w.w_h.dot(&x) + w.u_h.dot(&gated);
    candidate.mapv_inplace(f64::tanh);
    let mut h = Array1::zeros(h_prev.len());
    Zip::from(&mut h)
        .and(&z)
        .and(&candidate)
        .and(&h_prev)
        .for_each(|h, &z, &c, &hp| *h = z * c + (1.0 - z) * hp);
    let cache = GruCache {
        x: x.to_owned(),
        h_prev: h_prev.to_owned(),
        z,
        r,
        candidate,
    };
    (h, cache)
}

/// One GRU step for a batch of rows (`x`: batch×input, `h_prev`: batch×hidden).
pub fn gru_forward_batch(x: ArrayView2<f64>, h_prev: ArrayView2<f64>, w: &GruWeights) -> Array2<f64> {
    let mut z = x.dot(&w.w_z.t()) + h_prev.dot(&w.u_z.t());
    z.mapv_inplace(sigmoid);
    let mut r = x.dot(&w.w_r.t()) + h_prev.dot(&w.u_r.t());
    r.mapv_inplace(sigmoid);
    let gated = &r * &h_prev;
    let mut candidate = x.dot(&w.w_h.t()) + gated.dot(&w.u_h.t());
    candidate.mapv_inplace(f64::tanh);
    Zip::from(&mut candidate)
        .and(&z)
        .and(&h_prev)
        .for_each(|c, &z, &hp| *c = z * *c + (1.0 - z) * hp);
    candidate
}

/// Backpropagates `d_h` through one step. Weight gradients accumulate into
/// `grads`; returns `(d_x, d_h_prev)`.
pub fn gru_backward(
    cache: &GruCache,
    d_h: ArrayView1<f64>,
    w: &GruWeights,
    grads: &mut GruWeights,
) -> (Array1<f64>, Array1<f64>) {
    let GruCache {
        x,
        h_prev,
        z,
        r,
        candidate,
    } = cache;
    let mut d_h_prev = &d_h * &z.mapv(|z| 1.0 - z);
    // Pre-activation gradients of the candidate and update gate.
    let d_cand_pre = Zip::from(&d_h)
        .and(z)
        .and(candidate)
        .map_collect(|&dh, &z, &c| dh * z * (1.0 - c * c));
    let d_z_pre = Zip::from(&d_h)
        .and(z)
        .and(candidate)
        .and(h_prev)
        .map_collect(|&dh, &z, &c, &hp| dh * (c - hp) * z * (1.0 - z));

    let gated = r * h_prev;
    add_outer(&mut grads.w_h, 1.0, d_cand_pre.view(), x.view());
    add_outer(&mut grads.u_h, 1.0, d_cand_pre.view(), gated.view());
    let d_gated = w.u_h.t().dot(&d_cand_pre);
    let d_r_pre = Zip::from(&d_gated)
        .and(h_prev)
        .and(r)
        .map_collect(|&dg, &hp, &r| dg * hp * r * (1.0 - r));
    d_h_prev += &(&d_gated * r);

    add_outer(&mut grads.w_z, 1.0, d_z_pre.view(), x.view());
    add_outer(&mut grads.u_z, 1.0, d_z_pre.view(), h_prev.view());
    add_outer(&mut grads.w_r, 1.0, d_r_pre.view(), x.view());
    add_outer(&mut grads.u_r, 1.0, d_r_pre.view(), h_prev.view());

    let d_x = w.w_h.t().dot(&d_cand_pre) + w.w_z.t().dot(&d_z_pre) + w.w_r.t().dot(&d_r_pre);
    d_h_prev += &w.u_z.t().dot(&d_z_pre);
    d_h_prev += &w.u_r.t().dot(&d_r_pre);
    (d_x, d_h_prev)
}
