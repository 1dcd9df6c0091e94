//! Exhaustive enumeration over content-word subsets.

use dvs2s::corpus::{DialogPair, Vocabulary};
use dvs2s::model::{BernoulliParams, DynamicVocab};
use dvs2s::numeric::{DoubleDouble, Real};

use super::reference::RefModel;

/// Every vocabulary `function words ∪ S` for `S ⊆ content`, with its inclusion bits
/// in content-slot order.
pub fn all_vocabularies(vocab: &Vocabulary) -> Vec<(DynamicVocab, Vec<bool>)> {
    let content = vocab.content_indices();
    assert!(content.len() <= 16);
    (0u32..1 << content.len())
        .map(|bits| {
            let included: Vec<bool> = (0..content.len()).map(|i| bits >> i & 1 == 1).collect();
            let mut mask = vocab.function_mask();
            for (&c, &t) in content.iter().zip(&included) {
                mask[c] = t;
            }
            (DynamicVocab::from_mask(mask).unwrap(), included)
        })
        .collect()
}

/// `Π_c β_c^t (1 - β_c)^(1-t)` without clipping.
pub fn subset_prob<R: Real>(beta_content: &[R], included: &[bool]) -> R {
    let mut p = R::one();
    for (&b, &t) in beta_content.iter().zip(included) {
        p = p * if t { b } else { R::one() - b };
    }
    p
}

pub fn content_beta(beta: &BernoulliParams, vocab: &Vocabulary) -> Vec<f64> {
    vocab.content_indices().iter().map(|&c| beta.beta[c]).collect()
}

/// Lower bound `L = Σ_T p(T|X) log p(Y | T ∪ Y, X)` in double-double precision.
pub fn lower_bound_dd(model: &RefModel<DoubleDouble>, vocab: &Vocabulary, pair: &DialogPair) -> DoubleDouble {
    let memory = model.encode(&pair.message);
    let beta = model.beta_from_memory(&memory);
    let mut total = DoubleDouble::ZERO;
    for (t, bits) in all_vocabularies(vocab) {
        let aug = t.augmented_with(&pair.response);
        let lp = model.log_prob_from_memory(&memory, &pair.response, aug.selected());
        total += subset_prob(&beta, &bits) * lp;
    }
    total
}

/// Per-subset `(p(T|X), log p(Y | T ∪ Y, X))` in double-double precision.
pub fn subset_terms(model: &RefModel<DoubleDouble>, vocab: &Vocabulary, pair: &DialogPair) -> Vec<(DoubleDouble, DoubleDouble)> {
    let memory = model.encode(&pair.message);
    let beta = model.beta_from_memory(&memory);
    all_vocabularies(vocab)
        .into_iter()
        .map(|(t, bits)| {
            let aug = t.augmented_with(&pair.response);
            (subset_prob(&beta, &bits), model.log_prob_from_memory(&memory, &pair.response, aug.selected()))
        })
        .collect()
}

/// Surrogate whose gradient at `θ' = θ` is the expected estimator with reward `r`:
/// `F(θ') = Σ_T p_θ(T) log p_θ'(Y|T∪Y) + p_θ'(T) r_θ(T)`.
pub fn surrogate_dd(
    model: &RefModel<DoubleDouble>,
    vocab: &Vocabulary,
    pair: &DialogPair,
    frozen: &[(DoubleDouble, DoubleDouble)],
) -> DoubleDouble {
    let len = DoubleDouble::from(pair.response.len() as f64);
    let live = subset_terms(model, vocab, pair);
    let mut total = DoubleDouble::ZERO;
    for ((p0, lp0), (p1, lp1)) in frozen.iter().zip(&live) {
        total += *p0 * *lp1 + *p1 * (*lp0 / len);
    }
    total
}
