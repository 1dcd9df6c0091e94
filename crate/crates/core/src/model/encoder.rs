use ndarray::{s, Array1, Array2, ArrayView2};

use super::gru::{gru_backward, gru_forward, GruCache};
use super::ModelParams;
use crate::error::{Error, Result};

/// Encoder output for one message.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Row `i` is `[h_fwd_i ; h_bwd_i]`.
    pub memory: Array2<f64>,
    /// Equal to the last memory row; the decoder's initial state.
    pub final_state: Array1<f64>,
    /// `memory · W_α[:, ..m]ᵀ`, the state-independent half of the attention scores.
    pub keys: Array2<f64>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.memory.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.nrows() == 0
    }
}

pub struct EncoderTape {
    tokens: Vec<usize>,
    forward: Vec<GruCache>,
    // backward[i] produced the state at position i.
    backward: Vec<GruCache>,
}

pub fn encode(message: &[usize], params: &ModelParams) -> Result<Encoding> {
    encode_with_tape(message, params).map(|(enc, _)| enc)
}

pub fn encode_with_tape(message: &[usize], params: &ModelParams) -> Result<(Encoding, EncoderTape)> {
    if message.is_empty() {
        return Err(Error::EmptyMessage);
    }
    if let Some(&bad) = message.iter().find(|&&t| t >= params.dims.vocab) {
        return Err(Error::InvalidArgument(format!(
            "token {bad} outside vocabulary of {}",
            params.dims.vocab
        )));
    }
    let t = message.len();
    let half = params.dims.encoder_hidden();
    let mut memory = Array2::zeros((t, 2 * half));

    let mut forward = Vec::with_capacity(t);
    let mut h = Array1::zeros(half);
    for (i, &tok) in message.iter().enumerate() {
        let (next, cache) = gru_forward(params.embed(tok), h.view(), &params.enc_fwd);
        memory.slice_mut(s![i, ..half]).assign(&next);
        forward.push(cache);
        h = next;
    }

    let mut backward: Vec<Option<GruCache>> = vec![None; t];
    let mut h = Array1::zeros(half);
    for (i, &tok) in message.iter().enumerate().rev() {
        let (next, cache) = gru_forward(params.embed(tok), h.view(), &params.enc_bwd);
        memory.slice_mut(s![i, half..]).assign(&next);
        backward[i] = Some(cache);
        h = next;
    }

    let final_state = memory.row(t - 1).to_owned();
    let keys = attention_keys(memory.view(), params);
    let tape = EncoderTape {
        tokens: message.to_vec(),
        forward,
        backward: backward.into_iter().map(|c| c.expect("every position visited")).collect(),
    };
    Ok((
        Encoding {
            memory,
            final_state,
            keys,
        },
        tape,
    ))
}

pub(crate) fn attention_keys(memory: ArrayView2<f64>, params: &ModelParams) -> Array2<f64> {
    let m = params.dims.hidden;
    memory.dot(&params.att_w.slice(s![.., ..m]).t())
}

/// Backpropagates `d_memory` (gradient w.r.t. every memory row, with the
/// final-state gradient already folded into the last row) into the encoder
/// weights and the embedding table.
pub fn encoder_backward(
    tape: &EncoderTape,
    d_memory: &Array2<f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    let t = tape.tokens.len();
    let half = params.dims.encoder_hidden();

    let mut carry = Array1::zeros(half);
    for i in (0..t).rev() {
        let d_h = &d_memory.slice(s![i, ..half]) + &carry;
        let (d_x, d_prev) = gru_backward(&tape.forward[i], d_h.view(), &params.enc_fwd, &mut grads.enc_fwd);
        grads.embedding.row_mut(tape.tokens[i]).scaled_add(1.0, &d_x);
        carry = d_prev;
    }

    let mut carry = Array1::zeros(half);
    for i in 0..t {
        let d_h = &d_memory.slice(s![i, half..]) + &carry;
        let (d_x, d_prev) = gru_backward(&tape.backward[i], d_h.view(), &params.enc_bwd, &mut grads.enc_bwd);
        grads.embedding.row_mut(tape.tokens[i]).scaled_add(1.0, &d_x);
        carry = d_prev;
    }
}
