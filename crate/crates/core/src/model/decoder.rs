use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, CowArray, Ix1, Ix2};

use super::attention::{attend, attend_backward, attention, keys_backward, AttentionCache};
use super::encoder::Encoding;
use super::gru::{gru_backward, gru_forward, gru_forward_batch, GruCache};
use super::predictor::DynamicVocab;
use super::ModelParams;
use crate::corpus::BOS;
use crate::error::{Error, Result};
use crate::numeric::{masked_softmax, softmax_in_place};

/// Projection rows restricted to a dynamic vocabulary. Borrows the full
/// matrix when every word is selected, otherwise gathers the selected rows.
pub struct Projection<'p> {
    selected: Vec<usize>,
    weights: CowArray<'p, f64, Ix2>,
    bias: CowArray<'p, f64, Ix1>,
}

impl<'p> Projection<'p> {
    pub fn new(dyn_vocab: &DynamicVocab, params: &'p ModelParams) -> Self {
        let selected = dyn_vocab.selected().to_vec();
        if dyn_vocab.is_full() {
            Self {
                selected,
                weights: params.proj_w.view().into(),
                bias: params.proj_b.view().into(),
            }
        } else {
            Self {
                weights: params.proj_w.select(Axis(0), &selected).into(),
                bias: params.proj_b.select(Axis(0), &selected).into(),
                selected,
            }
        }
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Scores for one input row.
    fn scores(&self, input: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&input) + &self.bias
    }

    /// Scores for a batch of input rows (`batch × |T|`).
    fn batch_scores(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        inputs.dot(&self.weights.t()) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Probabilities aligned with `DynamicVocab::selected`.
    pub probs: Vec<f64>,
    pub hidden: Array1<f64>,
}

/// Output of a batched decoding step.
pub struct BatchStep {
    /// `batch × |T|` log-probabilities, columns aligned with the projection's selection.
    pub log_probs: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// One decoding step for several hypotheses sharing an encoding and a vocabulary.
pub fn decode_batch(
    prev_tokens: &[usize],
    prev_hidden: ArrayView2<f64>,
    enc: &Encoding,
    projection: &Projection<'_>,
    params: &ModelParams,
) -> BatchStep {
    let embedded = params.embedding.select(Axis(0), prev_tokens);
    let hidden = gru_forward_batch(embedded.view(), prev_hidden, &params.dec);
    let m = params.dims.hidden;
    let queries = hidden.dot(&params.att_w.slice(s![.., m..]).t());
    let mut contexts = Array2::zeros((prev_tokens.len(), m));
    for (query, mut ctx) in queries.rows().into_iter().zip(contexts.rows_mut()) {
        let mut act = &enc.keys + &query.insert_axis(Axis(0));
        act.mapv_inplace(f64::tanh);
        let mut weights = act.dot(&params.att_v);
        softmax_in_place(weights.as_slice_mut().expect("contiguous"));
        ctx.assign(&weights.dot(&enc.memory));
    }
    let inputs = concatenate![Axis(1), embedded, prev_hidden, contexts];
    let mut log_probs = projection.batch_scores(inputs.view());
    for mut row in log_probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    BatchStep { log_probs, hidden }
}

/// Distribution over `dyn_vocab` for the next word, and the updated decoder state.
pub fn decode_step(
    y_prev: usize,
    h_prev: ArrayView1<f64>,
    enc: &Encoding,
    dyn_vocab: &DynamicVocab,
    params: &ModelParams,
) -> StepOutput {
    let projection = Projection::new(dyn_vocab, params);
    let out = decode_batch(&[y_prev], h_prev.insert_axis(Axis(0)), enc, &projection, params);
    StepOutput {
        probs: out.log_probs.row(0).iter().map(|lp| lp.exp()).collect(),
        hidden: out.hidden.row(0).to_owned(),
    }
}

/// Static-vocabulary step: dense scores over every word, then softmax.
pub fn decode_step_full(
    y_prev: usize,
    h_prev: ArrayView1<f64>,
    memory: ArrayView2<f64>,
    params: &ModelParams,
) -> StepOutput {
    let e = params.embed(y_prev);
    let (hidden, _) = gru_forward(e, h_prev, &params.dec);
    let ctx = attention(hidden.view(), memory, params).context;
    let input = concatenate![Axis(0), e, h_prev, ctx];
    let scores = params.proj_w.dot(&input) + &params.proj_b;
    let probs = masked_softmax(scores.as_slice().expect("contiguous"), &vec![true; scores.len()])
        .expect("nonempty vocabulary");
    StepOutput { probs, hidden }
}

struct StepTape {
    y_prev: usize,
    gru: GruCache,
    attention: AttentionCache,
    input: Array1<f64>,
    probs: Array1<f64>,
    target: usize,
}

/// Teacher-forced decoding record for one response.
pub struct DecodeTape<'p> {
    projection: Projection<'p>,
    steps: Vec<StepTape>,
    /// Per-step `log p(y_l | y_<l, T, X)`.
    pub token_log_probs: Vec<f64>,
}

impl DecodeTape<'_> {
    pub fn log_prob(&self) -> f64 {
        self.token_log_probs.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Teacher-forced forward pass returning `log p(Y | T, X)` and the tape for backprop.
pub fn sequence_forward<'p>(
    response: &[usize],
    enc: &Encoding,
    dyn_vocab: &DynamicVocab,
    params: &'p ModelParams,
) -> Result<(f64, DecodeTape<'p>)> {
    let mut targets = Vec::with_capacity(response.len());
    for (position, &token) in response.iter().enumerate() {
        let slot = dyn_vocab
            .position(token)
            .ok_or(Error::TokenOutsideVocab { token, position })?;
        targets.push(slot);
    }
    let projection = Projection::new(dyn_vocab, params);
    let mut steps = Vec::with_capacity(response.len());
    let mut token_log_probs = Vec::with_capacity(response.len());
    let mut h = enc.final_state.clone();
    let mut y_prev = BOS;
    for (&token, &target) in response.iter().zip(&targets) {
        let e = params.embed(y_prev);
        let (h_new, gru) = gru_forward(e, h.view(), &params.dec);
        let (att, att_cache) = attend(h_new.view(), enc, params);
        let input = concatenate![Axis(0), e, h.view(), att.context.view()];
        let mut probs = projection.scores(input.view());
        softmax_in_place(probs.as_slice_mut().expect("contiguous"));
        token_log_probs.push(probs[target].ln());
        steps.push(StepTape {
            y_prev,
            gru,
            attention: att_cache,
            input,
            probs,
            target,
        });
        h = h_new;
        y_prev = token;
    }
    let total = token_log_probs.iter().sum();
    Ok((
        total,
        DecodeTape {
            projection,
            steps,
            token_log_probs,
        },
    ))
}

/// Accumulates `weight · ∂ log p(Y | T, X)` into `grads` and the encoder-memory
/// gradient `d_memory` (the decoder's initial state is the last memory row).
pub fn sequence_backward(
    tape: &DecodeTape<'_>,
    enc: &Encoding,
    params: &ModelParams,
    weight: f64,
    grads: &mut ModelParams,
    d_memory: &mut Array2<f64>,
) {
    let (p, m) = (params.dims.embed, params.dims.hidden);
    let mut d_keys = Array2::zeros(enc.keys.raw_dim());
    let mut carry = Array1::<f64>::zeros(m);
    let proj = &tape.projection;
    for step in tape.steps.iter().rev() {
        // ∂ log softmax[target] / ∂ scores = onehot - probs
        let mut d_scores = step.probs.mapv(|q| -weight * q);
        d_scores[step.target] += weight;
        for (&k, &ds) in proj.selected.iter().zip(d_scores.iter()) {
            grads.proj_w.row_mut(k).scaled_add(ds, &step.input);
            grads.proj_b[k] += ds;
        }
        let d_input = proj.weights.t().dot(&d_scores);
        let d_embed = d_input.slice(s![..p]);
        let d_h_prev_direct = d_input.slice(s![p..p + m]);
        let d_context = d_input.slice(s![p + m..]);

        let mut d_h_new = carry;
        d_h_new += &attend_backward(
            &step.attention,
            d_context,
            enc,
            params,
            grads,
            &mut d_keys,
            d_memory,
        );
        let (d_x, d_h_prev) = gru_backward(&step.gru, d_h_new.view(), &params.dec, &mut grads.dec);
        let mut emb_row = grads.embedding.row_mut(step.y_prev);
        emb_row += &d_x;
        emb_row += &d_embed;
        carry = &d_h_prev + &d_h_prev_direct;
    }
    let last = d_memory.nrows() - 1;
    d_memory.row_mut(last).scaled_add(1.0, &carry);
    keys_backward(&d_keys, enc, params, grads, d_memory);
}

/// `Σ_l log p(y_l | y_<l, T, X)` with BOS as the first input and the encoder's
/// final state as the initial decoder state.
pub fn sequence_log_prob(
    response: &[usize],
    enc: &Encoding,
    dyn_vocab: &DynamicVocab,
    params: &ModelParams,
) -> Result<f64> {
    sequence_forward(response, enc, dyn_vocab, params).map(|(lp, _)| lp)
}
