use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::encoder::{attention_keys, Encoding};
use super::{add_outer, ModelParams};
use crate::numeric::softmax_in_place;

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub context: Array1<f64>,
    pub weights: Array1<f64>,
}

pub(crate) struct AttentionCache {
    h_dec: Array1<f64>,
    // tanh(W_α [h_j; h_dec]) per memory row.
    activations: Array2<f64>,
    weights: Array1<f64>,
}

/// `e_j = vᵀ tanh(W_α [h_j; h_dec])`, `α = softmax(e)`, `c = Σ α_j h_j`.
pub fn attention(h_dec: ArrayView1<f64>, memory: ArrayView2<f64>, params: &ModelParams) -> Attention {
    let keys = attention_keys(memory, params);
    attend_keys(h_dec, memory, keys.view(), params).0
}

pub(crate) fn attend(h_dec: ArrayView1<f64>, enc: &Encoding, params: &ModelParams) -> (Attention, AttentionCache) {
    attend_keys(h_dec, enc.memory.view(), enc.keys.view(), params)
}

fn attend_keys(
    h_dec: ArrayView1<f64>,
    memory: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    params: &ModelParams,
) -> (Attention, AttentionCache) {
    let m = params.dims.hidden;
    let query = params.att_w.slice(s![.., m..]).dot(&h_dec);
    let mut activations = &keys + &query.view().insert_axis(Axis(0));
    activations.mapv_inplace(f64::tanh);
    let mut weights = activations.dot(&params.att_v);
    softmax_in_place(weights.as_slice_mut().expect("contiguous"));
    let context = weights.dot(&memory);
    let cache = AttentionCache {
        h_dec: h_dec.to_owned(),
        activations,
        weights: weights.clone(),
    };
    (Attention { context, weights }, cache)
}

/// Backpropagates `d_context`. Accumulates into `grads.att_v`, the decoder-side
/// half of `grads.att_w`, `d_keys` and `d_memory` (through the context sum);
/// returns the gradient w.r.t. the decoder state.
pub(crate) fn attend_backward(
    cache: &AttentionCache,
    d_context: ArrayView1<f64>,
    enc: &Encoding,
    params: &ModelParams,
    grads: &mut ModelParams,
    d_keys: &mut Array2<f64>,
    d_memory: &mut Array2<f64>,
) -> Array1<f64> {
    let m = params.dims.hidden;
    let alpha = &cache.weights;
    // c = Σ α_j h_j
    let d_alpha = enc.memory.dot(&d_context);
    for (mut row, &a) in d_memory.rows_mut().into_iter().zip(alpha.iter()) {
        row.scaled_add(a, &d_context);
    }
    let mean = alpha.dot(&d_alpha);
    let d_scores = alpha * &(d_alpha - mean);
    grads.att_v.scaled_add(1.0, &cache.activations.t().dot(&d_scores));
    // Gradient through tanh for every row: d_pre[j] = d_e_j * v ⊙ (1 - a_j²)
    let mut d_pre = cache.activations.mapv(|a| 1.0 - a * a);
    d_pre *= &params.att_v.view().insert_axis(Axis(0));
    d_pre *= &d_scores.view().insert_axis(Axis(1));
    *d_keys += &d_pre;
    let d_query = d_pre.sum_axis(Axis(0));
    add_outer(&mut grads.att_w.slice_mut(s![.., m..]), 1.0, d_query.view(), cache.h_dec.view());
    params.att_w.slice(s![.., m..]).t().dot(&d_query)
}

/// Folds accumulated key gradients into `W_α[:, ..m]` and the memory rows.
pub(crate) fn keys_backward(
    d_keys: &Array2<f64>,
    enc: &Encoding,
    params: &ModelParams,
    grads: &mut ModelParams,
    d_memory: &mut Array2<f64>,
) {
    let m = params.dims.hidden;
    let mut w_grad = grads.att_w.slice_mut(s![.., ..m]);
    w_grad += &d_keys.t().dot(&enc.memory);
    *d_memory += &d_keys.dot(&params.att_w.slice(s![.., ..m]));
}
