//! Training: static S2S pretraining, predictor pretraining with a frozen
//! encoder, and joint optimization of the variational lower bound with a
//! Monte-Carlo score-function estimator and a moving-average baseline.

use std::fmt;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batches, target_indicator, DialogPair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    encode, encode_with_tape, encoder_backward, predict_beta, predictor_backward, sample_vocab,
    sequence_backward, sequence_forward, sequence_log_prob, top_k_vocab, vocab_log_prob_clipped,
    vocab_log_prob_logit_grad, DynamicVocab, ModelDims, ModelParams, BETA_CLIP,
};
use crate::numeric::{adadelta_step, clip_grad_norm, sigmoid, InitScheme, OptimizerState, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Word embedding size `p`.
    pub embed: usize,
    /// Decoder hidden size `m`.
    pub hidden: usize,
    /// Attention size `a`; `None` means `m`.
    pub attention: Option<usize>,
    /// Monte-Carlo samples `S` per example.
    pub samples: usize,
    pub batch_size: usize,
    /// Initial `lr_scale` multiplying the AdaDelta update.
    pub lr: f64,
    pub baseline_decay: f64,
    pub max_epochs: usize,
    pub pretrain_epochs: usize,
    pub predictor_epochs: usize,
    pub seed: u64,
    pub topk_content: usize,
    pub beta_clip: f64,
    pub grad_clip: f64,
    /// Use the length-normalized log-likelihood as the score-function reward.
    pub normalize_reward: bool,
    pub rho: f64,
    pub adadelta_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed: 620,
            hidden: 1024,
            attention: None,
            samples: 5,
            batch_size: 64,
            lr: 1.0,
            baseline_decay: 0.9,
            max_epochs: 10,
            pretrain_epochs: 5,
            predictor_epochs: 5,
            seed: 1,
            topk_content: 1000,
            beta_clip: BETA_CLIP,
            grad_clip: 5.0,
            normalize_reward: true,
            rho: OptimizerState::DEFAULT_RHO,
            adadelta_eps: OptimizerState::DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "embed",
        "hidden",
        "attention",
        "samples",
        "batch_size",
        "lr",
        "baseline_decay",
        "max_epochs",
        "pretrain_epochs",
        "predictor_epochs",
        "seed",
        "topk_content",
        "beta_clip",
        "grad_clip",
        "normalize_reward",
        "rho",
        "adadelta_eps",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.embed == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return bad("embed must be positive and hidden positive and even");
        }
        if self.attention == Some(0) {
            return bad("attention must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1]");
        }
        if !(self.beta_clip > 0.0 && self.beta_clip < 0.5) {
            return bad("beta_clip must lie in (0, 0.5)");
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) || self.adadelta_eps.is_nan() || self.adadelta_eps <= 0.0 {
            return bad("rho must lie in [0, 1) and adadelta_eps be positive");
        }
        Ok(())
    }

    pub fn model_dims(&self, vocab: &Vocabulary) -> ModelDims {
        ModelDims {
            vocab: vocab.len(),
            content: vocab.num_content(),
            embed: self.embed,
            hidden: self.hidden,
            attention: self.attention.unwrap_or(self.hidden),
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("invalid value {value:?} for {key}"))
            })
        }
        match key {
            "embed" => self.embed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "attention" => {
                self.attention = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "samples" => self.samples = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "baseline_decay" => self.baseline_decay = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "predictor_epochs" => self.predictor_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "topk_content" => self.topk_content = parse(key, value)?,
            "beta_clip" => self.beta_clip = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "normalize_reward" => self.normalize_reward = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "adadelta_eps" => self.adadelta_eps = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` pairs in [`Self::KEYS`] order. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embed", self.embed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("attention", self.attention.map_or("auto".into(), |a| a.to_string())),
            ("samples", self.samples.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("baseline_decay", format!("{:?}", self.baseline_decay)),
            ("max_epochs", self.max_epochs.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("predictor_epochs", self.predictor_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("topk_content", self.topk_content.to_string()),
            ("beta_clip", format!("{:?}", self.beta_clip)),
            ("grad_clip", format!("{:?}", self.grad_clip)),
            ("normalize_reward", self.normalize_reward.to_string()),
            ("rho", format!("{:?}", self.rho)),
            ("adadelta_eps", format!("{:?}", self.adadelta_eps)),
        ]
    }
}

/// Everything the joint trainer mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub baseline: f64,
    pub lr_scale: f64,
    pub epoch: usize,
    pub batches: u64,
    pub best_valid: Option<f64>,
    pub prev_valid: Option<f64>,
    /// Successive epochs whose validation loss increased.
    pub increases: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(&params, config.rho, config.adadelta_eps);
        Self {
            params,
            optimizer,
            baseline: 0.0,
            lr_scale: config.lr,
            epoch: 0,
            batches: 0,
            best_valid: None,
            prev_valid: None,
            increases: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Predictor,
    Joint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Predictor => "predictor",
            Stage::Joint => "joint",
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub batch: usize,
    /// Per-token negative log-likelihood (per-word BCE for the predictor stage).
    pub loss: f64,
    pub baseline: f64,
    pub lr_scale: f64,
}

impl fmt::Display for BatchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.6} {:.6} {}",
            self.epoch, self.batch, self.loss, self.baseline, self.lr_scale
        )
    }
}

fn check_finite(loss: f64, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} became {loss} at epoch {epoch}, batch {batch}; lower lr or grad_clip"
        )))
    }
}

fn descend(
    params: &mut ModelParams,
    grads: &mut ModelParams,
    optimizer: &mut OptimizerState,
    lr_scale: f64,
    clip: f64,
) -> Result<()> {
    clip_grad_norm(grads, clip);
    // The accumulated gradients point uphill in log-likelihood.
    grads.scale(-1.0);
    adadelta_step(params, grads, optimizer, lr_scale)
}

/// Adds `∂ log p(Y | full V, X)` to `grads` and returns `log p(Y | X)`.
pub fn s2s_gradient(pair: &DialogPair, params: &ModelParams, grads: &mut ModelParams) -> Result<f64> {
    let full = DynamicVocab::full(params.dims.vocab);
    let (enc, tape) = encode_with_tape(&pair.message, params)?;
    let (lp, dt) = sequence_forward(&pair.response, &enc, &full, params)?;
    let mut d_memory = Array2::zeros(enc.memory.raw_dim());
    sequence_backward(&dt, &enc, params, 1.0, grads, &mut d_memory);
    encoder_backward(&tape, &d_memory, params, grads);
    Ok(lp)
}

/// Mean per-token NLL of `pairs` under the full vocabulary.
pub fn s2s_loss(pairs: &[DialogPair], params: &ModelParams) -> Result<f64> {
    let full = DynamicVocab::full(params.dims.vocab);
    let (mut nll, mut tokens) = (0.0, 0usize);
    for pair in pairs {
        let enc = encode(&pair.message, params)?;
        nll -= sequence_log_prob(&pair.response, &enc, &full, params)?;
        tokens += pair.response.len();
    }
    Ok(nll / tokens.max(1) as f64)
}

/// Trains encoder and decoder with the static full-vocabulary objective,
/// starting from Glorot-initialized weights. The predictor weights of the
/// result are zero.
pub fn pretrain_s2s(
    train: &[DialogPair],
    vocab: &Vocabulary,
    config: &TrainConfig,
    on_batch: &mut dyn FnMut(&BatchRecord),
) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::init(config.model_dims(vocab), config.seed, InitScheme::GlorotUniform)?;
    params.reset_predictor();
    let mut optimizer = OptimizerState::new(&params, config.rho, config.adadelta_eps);
    for epoch in 1..=config.pretrain_epochs {
        let batches = make_batches(train, config.batch_size, config.seed.wrapping_add(epoch as u64))?;
        for (b, batch) in batches.iter().enumerate() {
            let mut grads = params.zeros_like();
            let (mut nll, mut tokens) = (0.0, 0usize);
            for pair in batch.pairs() {
                nll -= s2s_gradient(&pair, &params, &mut grads)?;
                tokens += pair.response.len();
            }
            let loss = nll / tokens as f64;
            check_finite(loss, "pretraining loss", epoch, b)?;
            grads.scale(1.0 / batch.len() as f64);
            descend(&mut params, &mut grads, &mut optimizer, config.lr, config.grad_clip)?;
            on_batch(&BatchRecord {
                stage: Stage::Pretrain,
                epoch,
                batch: b,
                loss,
                baseline: 0.0,
                lr_scale: config.lr,
            });
        }
    }
    params.reset_predictor();
    Ok(params)
}

/// The predictor's trainable tensors `W_c` and `b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl PredictorWeights {
    pub fn of(params: &ModelParams) -> Self {
        Self {
            w: params.pred_w.clone(),
            b: params.pred_b.clone(),
        }
    }

    pub fn install(self, params: &mut ModelParams) {
        params.pred_w = self.w;
        params.pred_b = self.b;
    }
}

impl ParamSet for PredictorWeights {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        vec![("pred_w", self.w.view().into_dyn()), ("pred_b", self.b.view().into_dyn())]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        vec![
            ("pred_w", self.w.view_mut().into_dyn()),
            ("pred_b", self.b.view_mut().into_dyn()),
        ]
    }
}

/// Fits `W_c, b_c` by maximizing `Σ_i Σ_j log p(t_ij | X_i)` against the
/// response indicators. The encoder is only read.
pub fn pretrain_predictor(
    train: &[DialogPair],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &TrainConfig,
    on_batch: &mut dyn FnMut(&BatchRecord),
) -> Result<PredictorWeights> {
    config.validate()?;
    let content = vocab.content_indices();
    // Final encoder states and targets never change, so compute them once.
    let mut finals = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for pair in train {
        finals.push(encode(&pair.message, params)?.final_state);
        let bits = target_indicator(&pair.response, vocab);
        targets.push(content.iter().map(|&c| f64::from(u8::from(bits[c]))).collect::<Array1<f64>>());
    }
    let mut weights = PredictorWeights::of(params);
    let mut optimizer = OptimizerState::new(&weights, config.rho, config.adadelta_eps);
    let clip = config.beta_clip;
    for epoch in 1..=config.predictor_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1000 + epoch as u64)));
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = PredictorWeights {
                w: Array2::zeros(weights.w.raw_dim()),
                b: Array1::zeros(weights.b.raw_dim()),
            };
            let mut bce = 0.0;
            for &i in batch {
                let h = &finals[i];
                let t = &targets[i];
                let beta = (weights.w.dot(h) + &weights.b).mapv(sigmoid);
                for (&b, &t) in beta.iter().zip(t) {
                    let b = b.clamp(clip, 1.0 - clip);
                    bce -= t * b.ln() + (1.0 - t) * (1.0 - b).ln();
                }
                let d_logits = t - &beta;
                crate::model::add_outer(&mut grads.w, 1.0, d_logits.view(), h.view());
                grads.b += &d_logits;
            }
            let loss = bce / (batch.len() * content.len().max(1)) as f64;
            check_finite(loss, "predictor loss", epoch, b)?;
            grads.scale(1.0 / batch.len() as f64);
            clip_grad_norm(&mut grads, config.grad_clip);
            grads.scale(-1.0);
            adadelta_step(&mut weights, &grads, &mut optimizer, config.lr)?;
            on_batch(&BatchRecord {
                stage: Stage::Predictor,
                epoch,
                batch: b,
                loss,
                baseline: 0.0,
                lr_scale: config.lr,
            });
        }
    }
    Ok(weights)
}

/// One Monte-Carlo sample's contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDiagnostics {
    /// Sampled vocabulary size before augmentation with the response.
    pub sampled_size: usize,
    pub augmented_size: usize,
    /// `log p(Y | T̃ ∪ Y, X)`.
    pub log_prob: f64,
    /// Score-function reward before the baseline is subtracted.
    pub reward: f64,
    /// `log p(T̃ | X)`.
    pub vocab_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct McGradient {
    /// Ascent direction for the lower bound (not yet averaged over a batch).
    pub grads: ModelParams,
    pub samples: Vec<SampleDiagnostics>,
}

/// The estimator evaluated at given sampled vocabularies:
/// `(1/S) Σ_s [∂ log p(Y | T̃_s ∪ Y, X) + (r_s - b) ∂ log p(T̃_s | X)]`,
/// where `r_s` is the log-likelihood, divided by `|Y|` when `normalize_reward`.
pub fn estimator_for_samples(
    pair: &DialogPair,
    params: &ModelParams,
    vocab: &Vocabulary,
    baseline: f64,
    samples: &[DynamicVocab],
    normalize_reward: bool,
    beta_clip: f64,
) -> Result<McGradient> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let (enc, tape) = encode_with_tape(&pair.message, params)?;
    let beta = predict_beta(&enc, params, vocab);
    let weight = 1.0 / samples.len() as f64;
    let mut grads = params.zeros_like();
    let mut d_memory = Array2::zeros(enc.memory.raw_dim());
    let mut d_logits = Array1::<f64>::zeros(vocab.num_content());
    let mut diagnostics = Vec::with_capacity(samples.len());
    let len = pair.response.len() as f64;
    for sample in samples {
        let augmented = sample.augmented_with(&pair.response);
        let (lp, dt) = sequence_forward(&pair.response, &enc, &augmented, params)?;
        let reward = if normalize_reward { lp / len } else { lp };
        let vlp = vocab_log_prob_clipped(sample, &beta, vocab, beta_clip);
        if !lp.is_finite() || !vlp.is_finite() {
            return Err(Error::NonFinite(format!(
                "sample log-likelihood {lp}, vocabulary log-probability {vlp}"
            )));
        }
        sequence_backward(&dt, &enc, params, weight, &mut grads, &mut d_memory);
        d_logits.scaled_add(weight * (reward - baseline), &vocab_log_prob_logit_grad(sample, &beta, vocab));
        diagnostics.push(SampleDiagnostics {
            sampled_size: sample.len(),
            augmented_size: augmented.len(),
            log_prob: lp,
            reward,
            vocab_log_prob: vlp,
        });
    }
    predictor_backward(d_logits.view(), &enc, params, &mut grads, Some(&mut d_memory));
    encoder_backward(&tape, &d_memory, params, &mut grads);
    if !grads.all_finite() {
        return Err(Error::NonFinite("estimator gradient".into()));
    }
    Ok(McGradient {
        grads,
        samples: diagnostics,
    })
}

/// Draws `config.samples` vocabularies from `β(X)` and evaluates the estimator.
pub fn mc_gradient<R: Rng + ?Sized>(
    pair: &DialogPair,
    params: &ModelParams,
    vocab: &Vocabulary,
    baseline: f64,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<McGradient> {
    let enc = encode(&pair.message, params)?;
    let beta = predict_beta(&enc, params, vocab);
    let samples: Vec<DynamicVocab> = (0..config.samples)
        .map(|_| sample_vocab(&beta, vocab, rng))
        .collect();
    estimator_for_samples(
        pair,
        params,
        vocab,
        baseline,
        &samples,
        config.normalize_reward,
        config.beta_clip,
    )
}

/// `b_{k+1} = decay · b_k + (1 - decay) · mean(rewards)`; unchanged when empty.
pub fn update_baseline(baseline: f64, rewards: &[f64], decay: f64) -> f64 {
    if rewards.is_empty() {
        return baseline;
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    decay * baseline + (1.0 - decay) * mean
}

/// Mean per-token NLL where each example decodes over its top-K vocabulary
/// (K capped at the number of content words) augmented with its response.
pub fn validation_loss(valid: &[DialogPair], params: &ModelParams, vocab: &Vocabulary, topk: usize) -> Result<f64> {
    let k = topk.min(vocab.num_content());
    let (mut nll, mut tokens) = (0.0, 0usize);
    for pair in valid {
        let enc = encode(&pair.message, params)?;
        let beta = predict_beta(&enc, params, vocab);
        let dyn_vocab = top_k_vocab(&beta, vocab, k)?.augmented_with(&pair.response);
        nll -= sequence_log_prob(&pair.response, &enc, &dyn_vocab, params)?;
        tokens += pair.response.len();
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    Ok(nll / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Halved,
    Stop,
}

/// Applies the validation schedule: halve `lr_scale` when the loss rises
/// over the previous epoch, stop after two successive rises.
pub fn observe_validation(state: &mut TrainState, loss: f64) -> ScheduleAction {
    let rose = state.prev_valid.is_some_and(|prev| loss > prev);
    state.prev_valid = Some(loss);
    if state.best_valid.is_none_or(|best| loss < best) {
        state.best_valid = Some(loss);
    }
    if !rose {
        state.increases = 0;
        return ScheduleAction::Continue;
    }
    state.increases += 1;
    state.lr_scale *= 0.5;
    if state.increases >= 2 {
        ScheduleAction::Stop
    } else {
        ScheduleAction::Halved
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub valid_loss: f64,
    pub lr_scale: f64,
    pub action: ScheduleAction,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    /// State after the last epoch run.
    pub state: TrainState,
    /// Parameters with the lowest validation loss; epoch 0 is the starting point.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Joint optimization of the lower bound starting from `state`.
pub fn train_joint(
    train: &[DialogPair],
    valid: &[DialogPair],
    mut state: TrainState,
    vocab: &Vocabulary,
    config: &TrainConfig,
    on_batch: &mut dyn FnMut(&BatchRecord),
) -> Result<JointOutcome> {
    config.validate()?;
    let valid_loss = |params: &ModelParams| -> Result<f64> {
        let loss = validation_loss(valid, params, vocab, config.topk_content)?;
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite(format!("validation loss {loss}")))
        }
    };
    let start = valid_loss(&state.params)?;
    observe_validation(&mut state, start);
    let mut best = (state.params.clone(), state.epoch, start);
    let mut history = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(7));
    for _ in 0..config.max_epochs {
        state.epoch += 1;
        let epoch = state.epoch;
        let batches = make_batches(train, config.batch_size, config.seed.wrapping_add(2000 + epoch as u64))?;
        for (b, batch) in batches.iter().enumerate() {
            let mut grads = state.params.zeros_like();
            let mut rewards = Vec::with_capacity(batch.len() * config.samples);
            let mut nll = 0.0;
            for pair in batch.pairs() {
                let est = mc_gradient(&pair, &state.params, vocab, state.baseline, config, &mut rng)?;
                grads.add_scaled(&est.grads, 1.0);
                let len = pair.response.len() as f64;
                for s in &est.samples {
                    nll -= s.log_prob / len;
                    rewards.push(s.reward);
                }
            }
            let loss = nll / rewards.len() as f64;
            check_finite(loss, "joint loss", epoch, b)?;
            grads.scale(1.0 / batch.len() as f64);
            descend(&mut state.params, &mut grads, &mut state.optimizer, state.lr_scale, config.grad_clip)?;
            state.baseline = update_baseline(state.baseline, &rewards, config.baseline_decay);
            state.batches += 1;
            on_batch(&BatchRecord {
                stage: Stage::Joint,
                epoch,
                batch: b,
                loss,
                baseline: state.baseline,
                lr_scale: state.lr_scale,
            });
        }
        let loss = valid_loss(&state.params)?;
        if loss < best.2 {
            best = (state.params.clone(), epoch, loss);
        }
        let action = observe_validation(&mut state, loss);
        history.push(EpochRecord {
            epoch,
            valid_loss: loss,
            lr_scale: state.lr_scale,
            action,
        });
        if action == ScheduleAction::Stop {
            break;
        }
    }
    Ok(JointOutcome {
        state,
        best: best.0,
        best_epoch: best.1,
        history,
    })
}
