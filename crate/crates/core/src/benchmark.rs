//! Static vs. dynamic vocabulary decoding cost: closed-form operation counts,
//! an instrumented counter, and wall-clock timing on random-weight models.

use std::fmt;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{VocabEntry, Vocabulary, WordClass, BOS, SPECIAL_TOKENS};
use crate::error::{Error, Result};
use crate::model::{decode_batch, encode, predict_beta, top_k_vocab, DynamicVocab, ModelDims, ModelParams, Projection};
use crate::numeric::InitScheme;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionFlops {
    pub static_ops: u64,
    pub dynamic_ops: u64,
    pub ratio: f64,
}

/// Complexity-model multiply-accumulates for one response of `len_r` words:
/// `len_r·(m+p)·|V|` with the full vocabulary, `len_r·(m+p)·|T| + m·|V|`
/// with a dynamic one. `len_m` does not enter the dominant terms.
pub fn projection_flops(p: u64, m: u64, v: u64, t: u64, len_r: u64, len_m: u64) -> Result<ProjectionFlops> {
    if [p, m, v, t, len_r, len_m].contains(&0) {
        return Err(Error::InvalidArgument("projection_flops arguments must be positive".into()));
    }
    let static_ops = len_r * (m + p) * v;
    let dynamic_ops = len_r * (m + p) * t + m * v;
    Ok(ProjectionFlops {
        static_ops,
        dynamic_ops,
        ratio: dynamic_ops as f64 / static_ops as f64,
    })
}

/// Work performed while decoding, tallied as it happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    /// Projection rows scored, one per (hypothesis, step, vocabulary word).
    pub projection_rows: u64,
    /// Vocabulary entries visited while building dynamic vocabularies.
    pub vocab_entries: u64,
    /// Predictor rows scored (content words only).
    pub predictor_rows: u64,
    pub embed: u64,
    pub hidden: u64,
}

impl OpCounter {
    /// Charges `m+p` per projection row and `m` per vocabulary entry.
    pub fn model_macs(&self) -> u64 {
        self.projection_rows * (self.hidden + self.embed) + self.vocab_entries * self.hidden
    }

    /// MACs as executed: projection rows read `[emb; h_prev; c]` of width
    /// `p+2m`, and only content words reach the predictor.
    pub fn executed_macs(&self) -> u64 {
        self.projection_rows * (self.embed + 2 * self.hidden) + self.predictor_rows * self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub vocab_size: usize,
    /// Function words, specials included.
    pub function_words: usize,
    /// Content words kept in the dynamic vocabulary.
    pub topk: usize,
    pub beam: usize,
    pub len_r: usize,
    pub len_m: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            embed: 620,
            hidden: 1024,
            attention: 1024,
            vocab_size: 30_000,
            function_words: 701,
            topk: 1000,
            beam: 20,
            len_r: 15,
            len_m: 15,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.function_words < SPECIAL_TOKENS.len() {
            return bad(format!("function_words must be at least {}", SPECIAL_TOKENS.len()));
        }
        if self.vocab_size <= self.function_words {
            return bad("vocab_size must exceed function_words".into());
        }
        if self.topk > self.content_words() {
            return bad(format!("topk {} exceeds {} content words", self.topk, self.content_words()));
        }
        if !self.hidden.is_multiple_of(2) {
            return bad("hidden size must be even".into());
        }
        if [self.embed, self.hidden, self.attention, self.beam, self.len_r, self.len_m].contains(&0) {
            return bad("dimensions, beam and lengths must be positive".into());
        }
        Ok(())
    }

    pub fn content_words(&self) -> usize {
        self.vocab_size - self.function_words
    }

    /// Size of the dynamic vocabulary `|T|`.
    pub fn dynamic_size(&self) -> usize {
        self.function_words + self.topk
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.vocab_size,
            content: self.content_words(),
            embed: self.embed,
            hidden: self.hidden,
            attention: self.attention,
        }
    }

    pub fn flops(&self) -> Result<ProjectionFlops> {
        projection_flops(
            self.embed as u64,
            self.hidden as u64,
            self.vocab_size as u64,
            self.dynamic_size() as u64,
            self.len_r as u64,
            self.len_m as u64,
        )
    }
}

/// Synthetic vocabulary: specials, then `f*` function words, then `c*` content words.
pub fn synthetic_vocab(config: &BenchConfig) -> Vocabulary {
    let function = (SPECIAL_TOKENS.len()..config.function_words).map(|i| (format!("f{i}"), WordClass::Function));
    let content = (0..config.content_words()).map(|i| (format!("c{i}"), WordClass::Content));
    Vocabulary::from_entries(function.chain(content).map(|(word, class)| VocabEntry { word, count: 1, class }))
        .expect("distinct synthetic words")
}

fn available_memory() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Random-weight model at the benchmark dimensions. Fails with
/// [`Error::Allocation`] when the parameters would not fit in memory.
pub fn random_model(config: &BenchConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let dims = config.dims();
    let bytes = dims.num_parameters().saturating_mul(8);
    if let Some(avail) = available_memory() {
        // Room for the gathered projection and decoding buffers as well.
        if bytes.saturating_add(bytes / 4) > avail {
            return Err(Error::Allocation { bytes });
        }
    }
    let mut params = ModelParams::init(dims, seed, InitScheme::GlorotUniform)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    params.pred_b.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Static,
    Dynamic,
}

/// Beam decoding for exactly `len_r` steps, EOS treated like any word.
/// Returns the best token sequence.
pub fn fixed_length_decode(
    message: &[usize],
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &BenchConfig,
    mode: Mode,
    mut counter: Option<&mut OpCounter>,
) -> Result<Vec<usize>> {
    let enc = encode(message, params)?;
    let dyn_vocab = match mode {
        Mode::Static => DynamicVocab::full(vocab.len()),
        Mode::Dynamic => {
            let beta = predict_beta(&enc, params, vocab);
            if let Some(c) = counter.as_deref_mut() {
                c.vocab_entries += vocab.len() as u64;
                c.predictor_rows += vocab.num_content() as u64;
            }
            top_k_vocab(&beta, vocab, config.topk)?
        }
    };
    let projection = Projection::new(&dyn_vocab, params);
    let selected = projection.selected();
    let m = params.dims.hidden;

    let mut tokens: Vec<Vec<usize>> = vec![Vec::new()];
    let mut scores = vec![0.0];
    let mut hidden = enc.final_state.clone().insert_axis(Axis(0));
    for _ in 0..config.len_r {
        let prev: Vec<usize> = tokens.iter().map(|t| *t.last().unwrap_or(&BOS)).collect();
        let step = decode_batch(&prev, hidden.view(), &enc, &projection, params);
        if let Some(c) = counter.as_deref_mut() {
            c.projection_rows += (prev.len() * selected.len()) as u64;
        }
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(step.log_probs.len());
        for (i, row) in step.log_probs.axis_iter(Axis(0)).enumerate() {
            cand.extend(row.iter().enumerate().map(|(j, &lp)| (scores[i] + lp, i, j)));
        }
        let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then((a.1, selected[a.2]).cmp(&(b.1, selected[b.2])))
        };
        let keep = config.beam.min(cand.len());
        if cand.len() > keep {
            cand.select_nth_unstable_by(keep - 1, cmp);
            cand.truncate(keep);
        }
        cand.sort_unstable_by(cmp);
        let mut next_hidden = Array2::zeros((cand.len(), m));
        let mut next_tokens = Vec::with_capacity(cand.len());
        scores.clear();
        for (row, &(score, i, j)) in cand.iter().enumerate() {
            next_hidden.row_mut(row).assign(&step.hidden.row(i));
            let mut t = tokens[i].clone();
            t.push(selected[j]);
            next_tokens.push(t);
            scores.push(score);
        }
        tokens = next_tokens;
        hidden = next_hidden;
    }
    Ok(tokens.swap_remove(0))
}

/// Operation counts for one greedy response in each mode, taken by the
/// instrumented decoder.
pub fn count_ops(params: &ModelParams, vocab: &Vocabulary, config: &BenchConfig, message: &[usize]) -> Result<(OpCounter, OpCounter)> {
    let greedy = BenchConfig { beam: 1, ..*config };
    let fresh = OpCounter {
        embed: config.embed as u64,
        hidden: config.hidden as u64,
        ..OpCounter::default()
    };
    let (mut s, mut d) = (fresh, fresh);
    fixed_length_decode(message, params, vocab, &greedy, Mode::Static, Some(&mut s))?;
    fixed_length_decode(message, params, vocab, &greedy, Mode::Dynamic, Some(&mut d))?;
    Ok((s, d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    /// Seconds per generated word.
    pub mean: f64,
    pub stddev: f64,
    pub kept: usize,
}

/// Mean and standard deviation after dropping the slowest tenth.
pub fn trimmed_stats(samples: &[f64]) -> TimingStats {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    sorted.truncate(samples.len() - samples.len() / 10);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = if sorted.len() > 1 {
        sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    TimingStats {
        mean,
        stddev: var.sqrt(),
        kept: sorted.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub config: BenchConfig,
    pub repetitions: usize,
    pub seed: u64,
    pub static_time: TimingStats,
    pub dynamic_time: TimingStats,
    /// `dynamic / static` mean time per word.
    pub ratio: f64,
    pub flops: ProjectionFlops,
    pub static_ops: OpCounter,
    pub dynamic_ops: OpCounter,
}

impl TimingReport {
    /// Whether the instrumented counts agree with [`projection_flops`].
    pub fn counts_match(&self) -> bool {
        self.static_ops.model_macs() == self.flops.static_ops && self.dynamic_ops.model_macs() == self.flops.dynamic_ops
    }

    pub fn to_key_values(&self) -> String {
        let c = &self.config;
        [
            format!("p={}", c.embed),
            format!("m={}", c.hidden),
            format!("a={}", c.attention),
            format!("vocab_size={}", c.vocab_size),
            format!("dynamic_size={}", c.dynamic_size()),
            format!("topk={}", c.topk),
            format!("beam={}", c.beam),
            format!("len_r={}", c.len_r),
            format!("len_m={}", c.len_m),
            format!("repetitions={}", self.repetitions),
            format!("seed={}", self.seed),
            format!("static_mean_s={:e}", self.static_time.mean),
            format!("static_std_s={:e}", self.static_time.stddev),
            format!("dynamic_mean_s={:e}", self.dynamic_time.mean),
            format!("dynamic_std_s={:e}", self.dynamic_time.stddev),
            format!("ratio={:.6}", self.ratio),
            format!("static_ops={}", self.flops.static_ops),
            format!("dynamic_ops={}", self.flops.dynamic_ops),
            format!("ops_ratio={:.6}", self.flops.ratio),
            format!("counted_static_ops={}", self.static_ops.model_macs()),
            format!("counted_dynamic_ops={}", self.dynamic_ops.model_macs()),
            format!("executed_static_macs={}", self.static_ops.executed_macs()),
            format!("executed_dynamic_macs={}", self.dynamic_ops.executed_macs()),
        ]
        .join("\n")
            + "\n"
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "p={} m={} |V|={} |T|={} beam={} len_r={} repetitions={}",
            c.embed,
            c.hidden,
            c.vocab_size,
            c.dynamic_size(),
            c.beam,
            c.len_r,
            self.repetitions
        )?;
        writeln!(
            f,
            "static   {:9.3} ms/word (sd {:.3})",
            1e3 * self.static_time.mean,
            1e3 * self.static_time.stddev
        )?;
        writeln!(
            f,
            "dynamic  {:9.3} ms/word (sd {:.3})",
            1e3 * self.dynamic_time.mean,
            1e3 * self.dynamic_time.stddev
        )?;
        writeln!(f, "time ratio {:.4}", self.ratio)?;
        writeln!(
            f,
            "ops static {} dynamic {} ratio {:.4} (counted {} / {})",
            self.flops.static_ops,
            self.flops.dynamic_ops,
            self.flops.ratio,
            self.static_ops.model_macs(),
            self.dynamic_ops.model_macs()
        )
    }
}

/// Times fixed-length beam decoding in both modes on a random-weight model.
/// One warm-up run per mode precedes the measured repetitions, which
/// alternate between modes.
pub fn run_decode_benchmark(config: &BenchConfig, seed: u64, repetitions: usize) -> Result<TimingReport> {
    if repetitions < 5 {
        return Err(Error::InvalidArgument("at least 5 repetitions are required".into()));
    }
    let params = random_model(config, seed)?;
    let vocab = synthetic_vocab(config);
    run_with_model(&params, &vocab, config, seed, repetitions)
}

pub fn run_with_model(
    params: &ModelParams,
    vocab: &Vocabulary,
    config: &BenchConfig,
    seed: u64,
    repetitions: usize,
) -> Result<TimingReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut message = || -> Vec<usize> {
        (0..config.len_m)
            .map(|_| rng.gen_range(SPECIAL_TOKENS.len()..vocab.len()))
            .collect()
    };
    let probe = message();
    let (static_ops, dynamic_ops) = count_ops(params, vocab, config, &probe)?;
    for mode in [Mode::Static, Mode::Dynamic] {
        fixed_length_decode(&probe, params, vocab, config, mode, None)?;
    }
    let (mut st, mut dy) = (Vec::with_capacity(repetitions), Vec::with_capacity(repetitions));
    for _ in 0..repetitions {
        let msg = message();
        for (mode, out) in [(Mode::Static, &mut st), (Mode::Dynamic, &mut dy)] {
            let start = Instant::now();
            fixed_length_decode(&msg, params, vocab, config, mode, None)?;
            out.push(start.elapsed().as_secs_f64() / config.len_r as f64);
        }
    }
    let static_time = trimmed_stats(&st);
    let dynamic_time = trimmed_stats(&dy);
    Ok(TimingReport {
        config: *config,
        repetitions,
        seed,
        ratio: dynamic_time.mean / static_time.mean,
        static_time,
        dynamic_time,
        flops: config.flops()?,
        static_ops,
        dynamic_ops,
    })
}
