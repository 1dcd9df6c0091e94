//! The dynamic-vocabulary encoder-decoder: a bidirectional GRU encoder, an
//! attention GRU decoder whose output softmax is restricted to a per-input
//! vocabulary, and a Bernoulli word predictor that builds that vocabulary.
//!
//! Every forward routine that takes part in training has a matching backward
//! routine that accumulates into a [`ModelParams`] used as a gradient buffer.

mod attention;
mod decoder;
mod encoder;
mod gru;
mod predictor;

pub use attention::{attention, Attention};
pub use decoder::{
    decode_batch, decode_step, decode_step_full, sequence_backward, sequence_forward,
    sequence_log_prob, BatchStep, DecodeTape, Projection, StepOutput,
};
pub use encoder::{encode, encode_with_tape, encoder_backward, EncoderTape, Encoding};
pub use gru::{gru_backward, gru_cell, gru_forward, gru_forward_batch, GruCache, GruWeights};
pub use predictor::{
    predict_beta, predictor_backward, sample_vocab, top_k_vocab, vocab_log_prob,
    vocab_log_prob_clipped, vocab_log_prob_logit_grad, BernoulliParams, DynamicVocab, BETA_CLIP,
};

use ndarray::{Array1, Array2, ArrayBase, ArrayView1, ArrayViewD, ArrayViewMutD, DataMut, Ix2};

use crate::error::{Error, Result};
use crate::numeric::{init_params, InitScheme, ParamKind, ParamSet, ParamSpec, Tensor};

/// Network sizes. `hidden` is the decoder state size `m`; each encoder
/// direction uses `hidden / 2` so concatenated encoder states are `m` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub content: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.hidden == 0 || self.attention == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive: {self:?}"
            )));
        }
        if !self.hidden.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "hidden size {} must be even (split across encoder directions)",
                self.hidden
            )));
        }
        if self.content > self.vocab {
            return Err(Error::InvalidArgument(
                "more content words than vocabulary entries".into(),
            ));
        }
        Ok(())
    }

    pub fn encoder_hidden(&self) -> usize {
        self.hidden / 2
    }

    /// Width of the projection input `[y_prev; h_prev; c]`.
    pub fn projection_input(&self) -> usize {
        self.embed + 2 * self.hidden
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (v, p, m, a, h) = (
            self.vocab,
            self.embed,
            self.hidden,
            self.attention,
            self.encoder_hidden(),
        );
        let w = |name, shape: Vec<usize>| ParamSpec {
            name,
            shape,
            kind: ParamKind::Weight,
        };
        let b = |name, shape: Vec<usize>| ParamSpec {
            name,
            shape,
            kind: ParamKind::Bias,
        };
        let mut specs = vec![w("embedding", vec![v, p])];
        for (names, hidden) in [
            (&GruWeights::ENC_FWD_NAMES, h),
            (&GruWeights::ENC_BWD_NAMES, h),
            (&GruWeights::DEC_NAMES, m),
        ] {
            for (i, name) in names.iter().enumerate() {
                let cols = if i % 2 == 0 { p } else { hidden };
                specs.push(w(name, vec![hidden, cols]));
            }
        }
        specs.extend([
            w("att_w", vec![a, 2 * m]),
            w("att_v", vec![a]),
            w("proj_w", vec![v, p + 2 * m]),
            b("proj_b", vec![v]),
            w("pred_w", vec![self.content, m]),
            b("pred_b", vec![self.content]),
        ]);
        specs
    }

    pub fn num_parameters(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub embedding: Array2<f64>,
    pub enc_fwd: GruWeights,
    pub enc_bwd: GruWeights,
    pub dec: GruWeights,
    /// `W_α`: columns `0..m` act on encoder states, `m..2m` on the decoder state.
    pub att_w: Array2<f64>,
    pub att_v: Array1<f64>,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// One row per content word, in `Vocabulary::content_indices` order.
    pub pred_w: Array2<f64>,
    pub pred_b: Array1<f64>,
}

fn into_2d(t: Tensor) -> Array2<f64> {
    t.into_dimensionality().expect("rank-2 spec")
}

fn into_1d(t: Tensor) -> Array1<f64> {
    t.into_dimensionality().expect("rank-1 spec")
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64, scheme: InitScheme) -> Result<Self> {
        dims.validate()?;
        let bytes = dims.num_parameters().saturating_mul(std::mem::size_of::<f64>());
        let mut probe: Vec<f64> = Vec::new();
        if probe.try_reserve_exact(dims.num_parameters()).is_err() {
            return Err(Error::Allocation { bytes });
        }
        drop(probe);
        let mut it = init_params(&dims.param_specs(), seed, scheme).into_iter();
        let mut next = || it.next().expect("spec count");
        let embedding = into_2d(next());
        let gru = |next: &mut dyn FnMut() -> Tensor| GruWeights {
            w_z: into_2d(next()),
            u_z: into_2d(next()),
            w_r: into_2d(next()),
            u_r: into_2d(next()),
            w_h: into_2d(next()),
            u_h: into_2d(next()),
        };
        let enc_fwd = gru(&mut next);
        let enc_bwd = gru(&mut next);
        let dec = gru(&mut next);
        Ok(Self {
            dims,
            embedding,
            enc_fwd,
            enc_bwd,
            dec,
            att_w: into_2d(next()),
            att_v: into_1d(next()),
            proj_w: into_2d(next()),
            proj_b: into_1d(next()),
            pred_w: into_2d(next()),
            pred_b: into_1d(next()),
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::init(dims, 0, InitScheme::Zeros)
    }

    /// A zero-filled buffer with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims).expect("dims already validated")
    }

    /// Builds a parameter set from tensors in `param_specs` order.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        let specs = dims.param_specs();
        if tensors.len() != specs.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&specs) {
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Shape {
                    name: s.name.to_string(),
                    expected: s.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mut out = Self::zeros(dims)?;
        for ((_, mut dst), src) in out.tensors_mut().into_iter().zip(&tensors) {
            dst.assign(src);
        }
        Ok(out)
    }

    pub fn embed(&self, token: usize) -> ArrayView1<'_, f64> {
        self.embedding.row(token)
    }

    /// Zeroes the predictor weights, as done at the end of S2S pretraining.
    pub fn reset_predictor(&mut self) {
        self.pred_w.fill(0.0);
        self.pred_b.fill(0.0);
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let mut out = vec![("embedding", self.embedding.view().into_dyn())];
        for (names, g) in [
            (&GruWeights::ENC_FWD_NAMES, &self.enc_fwd),
            (&GruWeights::ENC_BWD_NAMES, &self.enc_bwd),
            (&GruWeights::DEC_NAMES, &self.dec),
        ] {
            out.extend(names.iter().copied().zip(g.matrices().map(|m| m.view().into_dyn())));
        }
        out.extend([
            ("att_w", self.att_w.view().into_dyn()),
            ("att_v", self.att_v.view().into_dyn()),
            ("proj_w", self.proj_w.view().into_dyn()),
            ("proj_b", self.proj_b.view().into_dyn()),
            ("pred_w", self.pred_w.view().into_dyn()),
            ("pred_b", self.pred_b.view().into_dyn()),
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![("embedding", self.embedding.view_mut().into_dyn())];
        for (names, g) in [
            (&GruWeights::ENC_FWD_NAMES, &mut self.enc_fwd),
            (&GruWeights::ENC_BWD_NAMES, &mut self.enc_bwd),
            (&GruWeights::DEC_NAMES, &mut self.dec),
        ] {
            out.extend(
                names
                    .iter()
                    .copied()
                    .zip(g.matrices_mut().map(|m| m.view_mut().into_dyn())),
            );
        }
        out.extend([
            ("att_w", self.att_w.view_mut().into_dyn()),
            ("att_v", self.att_v.view_mut().into_dyn()),
            ("proj_w", self.proj_w.view_mut().into_dyn()),
            ("proj_b", self.proj_b.view_mut().into_dyn()),
            ("pred_w", self.pred_w.view_mut().into_dyn()),
            ("pred_b", self.pred_b.view_mut().into_dyn()),
        ]);
        out
    }
}

/// `dst += alpha * a bᵀ`
pub(crate) fn add_outer<S>(dst: &mut ArrayBase<S, Ix2>, alpha: f64, a: ArrayView1<f64>, b: ArrayView1<f64>)
where
    S: DataMut<Elem = f64>,
{
    for (mut row, &ai) in dst.rows_mut().into_iter().zip(a.iter()) {
        let s = alpha * ai;
        if s != 0.0 {
            row.scaled_add(s, &b);
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::{VocabEntry, Vocabulary, WordClass};

    /// A vocabulary with `function` extra function words and `content` content words.
    pub fn vocab(function: usize, content: usize) -> Vocabulary {
        let entries = (0..function)
            .map(|i| (format!("f{i}"), WordClass::Function))
            .chain((0..content).map(|i| (format!("c{i}"), WordClass::Content)))
            .map(|(word, class)| VocabEntry {
                word,
                count: 50,
                class,
            });
        Vocabulary::from_entries(entries).unwrap()
    }

    pub fn dims(vocab: &Vocabulary, embed: usize, hidden: usize) -> ModelDims {
        ModelDims {
            vocab: vocab.len(),
            content: vocab.num_content(),
            embed,
            hidden,
            attention: hidden,
        }
    }

    /// Random parameters with every tensor (biases included) drawn from `U(-scale, scale)`.
    pub fn random_params(dims: ModelDims, seed: u64, scale: f64) -> ModelParams {
        use rand::{Rng, SeedableRng};
        let mut p = ModelParams::zeros(dims).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for (_, mut t) in p.tensors_mut() {
            t.mapv_inplace(|_| rng.gen_range(-scale..scale));
        }
        p
    }
}
