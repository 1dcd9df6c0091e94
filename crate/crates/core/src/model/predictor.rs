use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::{add_outer, Encoding, ModelParams};
use crate::corpus::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

/// Content-word probabilities are clipped to `[BETA_CLIP, 1 - BETA_CLIP]` before logs.
pub const BETA_CLIP: f64 = 1e-7;

/// Per-word inclusion probabilities over the full vocabulary; exactly 1 at function words.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliParams {
    pub beta: Vec<f64>,
}

impl BernoulliParams {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// A per-input decoding vocabulary: a sorted index list and the matching bit mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DynamicVocab {
    selected: Vec<usize>,
    mask: Vec<bool>,
}

impl DynamicVocab {
    pub fn from_mask(mask: Vec<bool>) -> Result<Self> {
        let selected: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        if selected.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self { selected, mask })
    }

    pub fn full(size: usize) -> Self {
        Self::from_mask(vec![true; size]).expect("nonempty vocabulary")
    }

    /// Function words only.
    pub fn function_words(vocab: &Vocabulary) -> Self {
        Self::from_mask(vocab.function_mask()).expect("specials are function words")
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.mask.len()
    }

    pub fn is_full(&self) -> bool {
        self.selected.len() == self.mask.len()
    }

    pub fn contains(&self, token: usize) -> bool {
        self.mask.get(token).copied().unwrap_or(false)
    }

    /// Position of `token` within `selected`.
    pub fn position(&self, token: usize) -> Option<usize> {
        self.selected.binary_search(&token).ok()
    }

    /// Adds every token in `tokens`.
    pub fn augmented_with(&self, tokens: &[usize]) -> Self {
        let mut mask = self.mask.clone();
        for &t in tokens {
            mask[t] = true;
        }
        Self::from_mask(mask).expect("superset of a nonempty mask")
    }
}

/// `β_c = σ(W_c h_t + b_c)` for content words, exactly 1 for function words.
pub fn predict_beta(enc: &Encoding, params: &ModelParams, vocab: &Vocabulary) -> BernoulliParams {
    let logits = content_logits(enc.final_state.view(), params);
    let mut beta = vec![1.0; vocab.len()];
    for (&idx, &z) in vocab.content_indices().iter().zip(logits.iter()) {
        beta[idx] = sigmoid(z);
    }
    BernoulliParams { beta }
}

pub(crate) fn content_logits(h_final: ArrayView1<f64>, params: &ModelParams) -> Array1<f64> {
    params.pred_w.dot(&h_final) + &params.pred_b
}

/// Independent Bernoulli draw per content word; every function word is kept.
pub fn sample_vocab<R: Rng + ?Sized>(beta: &BernoulliParams, vocab: &Vocabulary, rng: &mut R) -> DynamicVocab {
    let mut mask = vocab.function_mask();
    for &idx in vocab.content_indices() {
        mask[idx] = rng.gen::<f64>() < beta.beta[idx];
    }
    DynamicVocab::from_mask(mask).expect("function words present")
}

/// Function words plus the `k` content words of largest β (ties to the lower index).
pub fn top_k_vocab(beta: &BernoulliParams, vocab: &Vocabulary, k: usize) -> Result<DynamicVocab> {
    let content = vocab.content_indices();
    if k > content.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {} content words",
            content.len()
        )));
    }
    let mut ranked = content.to_vec();
    let by_beta = |a: &usize, b: &usize| {
        beta.beta[*b]
            .partial_cmp(&beta.beta[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < ranked.len() && k > 0 {
        ranked.select_nth_unstable_by(k - 1, by_beta);
    }
    let mut mask = vocab.function_mask();
    for &idx in &ranked[..k] {
        mask[idx] = true;
    }
    debug_assert!(mask[EOS]);
    DynamicVocab::from_mask(mask)
}

/// `log p(T | X) = Σ_c t_c log β_c + (1 - t_c) log(1 - β_c)` over content words.
pub fn vocab_log_prob(dyn_vocab: &DynamicVocab, beta: &BernoulliParams, vocab: &Vocabulary) -> f64 {
    vocab_log_prob_clipped(dyn_vocab, beta, vocab, BETA_CLIP)
}

/// [`vocab_log_prob`] with β clipped to `[clip, 1 - clip]`.
pub fn vocab_log_prob_clipped(
    dyn_vocab: &DynamicVocab,
    beta: &BernoulliParams,
    vocab: &Vocabulary,
    clip: f64,
) -> f64 {
    vocab
        .content_indices()
        .iter()
        .map(|&idx| {
            let b = beta.beta[idx].clamp(clip, 1.0 - clip);
            if dyn_vocab.contains(idx) {
                b.ln()
            } else {
                (1.0 - b).ln()
            }
        })
        .sum()
}

/// Gradient of `vocab_log_prob` w.r.t. the content logits: `t_c - β_c`.
pub fn vocab_log_prob_logit_grad(
    dyn_vocab: &DynamicVocab,
    beta: &BernoulliParams,
    vocab: &Vocabulary,
) -> Array1<f64> {
    vocab
        .content_indices()
        .iter()
        .map(|&idx| f64::from(u8::from(dyn_vocab.contains(idx))) - beta.beta[idx])
        .collect()
}

/// Backpropagates content-logit gradients into the predictor weights and,
/// when `d_memory` is given, into the encoder's final state (the last memory row).
pub fn predictor_backward(
    d_logits: ArrayView1<f64>,
    enc: &Encoding,
    params: &ModelParams,
    grads: &mut ModelParams,
    d_memory: Option<&mut Array2<f64>>,
) {
    add_outer(&mut grads.pred_w, 1.0, d_logits, enc.final_state.view());
    grads.pred_b.scaled_add(1.0, &d_logits);
    if let Some(d_memory) = d_memory {
        let last = d_memory.nrows() - 1;
        let d_h = params.pred_w.t().dot(&d_logits);
        d_memory.row_mut(last).scaled_add(1.0, &d_h);
    }
}
