//! Response generation: top-K vocabulary construction and beam search over it.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, Axis};

use crate::corpus::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{decode_batch, encode, predict_beta, top_k_vocab, DynamicVocab, Encoding, ModelParams, Projection};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub hidden: Array1<f64>,
    pub finished: bool,
}

impl BeamHypothesis {
    fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Rank final hypotheses by `log_prob / length`. Off by default.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 20,
            max_len: 50,
            length_normalize: false,
        }
    }
}

/// Higher score first, then shorter, then lexicographically smaller tokens.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then(a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

pub fn beam_search(
    enc: &Encoding,
    dyn_vocab: &DynamicVocab,
    params: &ModelParams,
    beam: usize,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    beam_search_with(
        enc,
        dyn_vocab,
        params,
        &BeamConfig {
            beam,
            max_len,
            length_normalize: false,
        },
    )
}

/// Beam search restricted to `dyn_vocab`. Finished hypotheses leave the
/// active beam, which shrinks to `beam - finished`. Returns up to `beam`
/// hypotheses: every finished one, padded with the best unfinished ones when
/// fewer than `beam` finish, ranked together.
pub fn beam_search_with(
    enc: &Encoding,
    dyn_vocab: &DynamicVocab,
    params: &ModelParams,
    config: &BeamConfig,
) -> Result<Vec<BeamHypothesis>> {
    if config.beam == 0 || config.max_len == 0 {
        return Err(Error::InvalidArgument("beam and max_len must be at least 1".into()));
    }
    let projection = Projection::new(dyn_vocab, params);
    let selected = projection.selected();
    let mut active = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        hidden: enc.final_state.clone(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..config.max_len {
        let live = config.beam - finished.len();
        if live == 0 || active.is_empty() {
            break;
        }
        let prev: Vec<usize> = active.iter().map(|h| *h.tokens.last().unwrap_or(&BOS)).collect();
        let mut hidden = Array2::zeros((active.len(), params.dims.hidden));
        for (mut row, h) in hidden.rows_mut().into_iter().zip(&active) {
            row.assign(&h.hidden);
        }
        let step = decode_batch(&prev, hidden.view(), enc, &projection, params);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(active.len() * selected.len());
        for (i, row) in step.log_probs.axis_iter(Axis(0)).enumerate() {
            let base = active[i].log_prob;
            candidates.extend(row.iter().enumerate().map(|(j, &lp)| (base + lp, i, j)));
        }
        // Candidates share a length, so ties fall to the token sequence.
        let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| active[a.1].tokens.cmp(&active[b.1].tokens))
                .then(selected[a.2].cmp(&selected[b.2]))
        };
        if candidates.len() > live {
            candidates.select_nth_unstable_by(live - 1, cmp);
            candidates.truncate(live);
        }
        candidates.sort_unstable_by(cmp);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, i, j) in candidates {
            let token = selected[j];
            let mut tokens = active[i].tokens.clone();
            tokens.push(token);
            let hyp = BeamHypothesis {
                tokens,
                log_prob: score,
                hidden: step.hidden.row(i).to_owned(),
                finished: token == EOS,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
    }
    let norm = config.length_normalize;
    let by_rank = |a: &BeamHypothesis, b: &BeamHypothesis| rank(a.score(norm), &a.tokens, b.score(norm), &b.tokens);
    finished.sort_by(by_rank);
    if finished.len() < config.beam {
        active.sort_by(by_rank);
        active.truncate(config.beam - finished.len());
        finished.extend(active);
        finished.sort_by(by_rank);
    }
    finished.truncate(config.beam);
    Ok(finished)
}

/// Top-1 response for a message: encode, predict β, keep the top `k` content
/// words plus function words, beam search. EOS is stripped.
pub fn generate(
    message: &[usize],
    params: &ModelParams,
    vocab: &Vocabulary,
    k: usize,
    beam: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let enc = encode(message, params)?;
    let beta = predict_beta(&enc, params, vocab);
    let dyn_vocab = top_k_vocab(&beta, vocab, k)?;
    let hyps = beam_search(&enc, &dyn_vocab, params, beam, max_len)?;
    let mut tokens = hyps.into_iter().next().map(|h| h.tokens).unwrap_or_default();
    if tokens.last() == Some(&EOS) {
        tokens.pop();
    }
    Ok(tokens)
}

/// [`generate`] on whitespace-tokenized text, returning detokenized text.
pub fn generate_text(
    message: &str,
    params: &ModelParams,
    vocab: &Vocabulary,
    k: usize,
    beam: usize,
    max_len: usize,
) -> Result<String> {
    let tokens = generate(&vocab.encode(message), params, vocab, k, beam, max_len)?;
    Ok(vocab.decode(&tokens))
}
