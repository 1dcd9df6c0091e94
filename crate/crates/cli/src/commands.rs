use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dvs2s::benchmark::{run_decode_benchmark, BenchConfig};
use dvs2s::checkpoint::Checkpoint;
use dvs2s::corpus::{build_vocabulary, load_corpus, Vocabulary, EOS};
use dvs2s::inference::generate;
use dvs2s::metrics::{recall_coverage, EmbeddingTable, MetricReport};
use dvs2s::model::{encode, predict_beta, top_k_vocab, ModelParams};
use dvs2s::synth::{generate_corpus, SynthConfig};
use dvs2s::training::{pretrain_predictor, pretrain_s2s, train_joint, BatchRecord, TrainConfig, TrainState};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "dvs2s", version, about = "Dynamic-vocabulary sequence-to-sequence response generation")]
pub struct Cli {
    /// Config file of key=value lines (default: $DVS2S_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the response-side vocabulary from a corpus.
    BuildVocab(BuildVocab),
    /// Train the static-vocabulary encoder-decoder.
    Pretrain(Pretrain),
    /// Fit the word predictor on a pretrained checkpoint.
    PretrainPredictor(Pretrain),
    /// Joint training of generator and predictor.
    Train(Train),
    /// Generate one response per input message line.
    Generate(Generate),
    /// Score generated responses against references.
    Eval(Eval),
    /// Time static vs. dynamic vocabulary decoding on a random model.
    Bench(Bench),
    /// Interactive session with a trained checkpoint.
    Chat(Chat),
    /// Write a synthetic topical corpus.
    Synth(Synth),
}

#[derive(Args, Debug)]
struct BuildVocab {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    max_size: Option<String>,
    #[arg(long)]
    function_min_count: Option<String>,
    /// Content-word lexicon, one word per line.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    embed: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    attention: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long = "batch")]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    baseline_decay: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    pretrain_epochs: Option<String>,
    #[arg(long)]
    predictor_epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "topk")]
    topk_content: Option<String>,
    #[arg(long)]
    beta_clip: Option<String>,
    #[arg(long)]
    grad_clip: Option<String>,
    #[arg(long)]
    normalize_reward: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    adadelta_eps: Option<String>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("embed", self.embed.clone()),
            ("hidden", self.hidden.clone()),
            ("attention", self.attention.clone()),
            ("samples", self.samples.clone()),
            ("batch_size", self.batch_size.clone()),
            ("lr", self.lr.clone()),
            ("baseline_decay", self.baseline_decay.clone()),
            ("max_epochs", self.max_epochs.clone()),
            ("pretrain_epochs", self.pretrain_epochs.clone()),
            ("predictor_epochs", self.predictor_epochs.clone()),
            ("seed", self.seed.clone()),
            ("topk_content", self.topk_content.clone()),
            ("beta_clip", self.beta_clip.clone()),
            ("grad_clip", self.grad_clip.clone()),
            ("normalize_reward", self.normalize_reward.clone()),
            ("rho", self.rho.clone()),
            ("adadelta_eps", self.adadelta_eps.clone()),
        ]
    }
}

#[derive(Args, Debug)]
struct Pretrain {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Input checkpoint (pretrain-predictor only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Batch log file; default stderr.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct DecodeFlags {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Content words kept in the dynamic vocabulary.
    #[arg(long)]
    topk: Option<String>,
    #[arg(long)]
    beam: Option<String>,
    #[arg(long)]
    max_len: Option<String>,
}

impl DecodeFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("checkpoint", path_str(&self.checkpoint)),
            ("vocab", path_str(&self.vocab)),
            ("topk_content", self.topk.clone()),
            ("beam", self.beam.clone()),
            ("max_len", self.max_len.clone()),
        ]
    }
}

#[derive(Args, Debug)]
struct Generate {
    #[command(flatten)]
    decode: DecodeFlags,
    /// Messages, one per line (text before a TAB is used); default stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Default stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Eval {
    /// Generated responses, one per line.
    #[arg(long)]
    hypotheses: Option<PathBuf>,
    /// Reference responses, one per line.
    #[arg(long)]
    references: Option<PathBuf>,
    /// Test corpus; its response side serves as references.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Word vectors for the embedding metrics.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// With --vocab and --corpus, also report vocabulary recall.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    topk: Option<String>,
    /// `text` or `kv`.
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args, Debug)]
struct Bench {
    /// Model sizes, e.g. `p=620,m=1024` (optional `a=` for attention).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Function words including the four specials.
    #[arg(long)]
    function_words: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    /// Response length `len_r`.
    #[arg(long)]
    len: Option<usize>,
    /// Message length.
    #[arg(long)]
    message_len: Option<usize>,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Args, Debug)]
struct Chat {
    #[command(flatten)]
    decode: DecodeFlags,
    /// Also print the ten content words of largest β.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct Synth {
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 40)]
    words_per_topic: usize,
    #[arg(long, default_value_t = 5000)]
    pairs: usize,
    /// Pairs held out for validation.
    #[arg(long, default_value_t = 250)]
    valid: usize,
    /// Pairs held out for testing.
    #[arg(long, default_value_t = 250)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Runtime(dvs2s::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildVocab(a) => {
            config.apply_flags(&[
                ("corpus", path_str(&a.corpus)),
                ("max_size", a.max_size),
                ("function_min_count", a.function_min_count),
                ("lexicon", path_str(&a.lexicon)),
                ("output", path_str(&a.output)),
            ])?;
            build_vocab(&config)
        }
        Command::Pretrain(a) => {
            apply_pretrain(&mut config, &a)?;
            pretrain(&config)
        }
        Command::PretrainPredictor(a) => {
            apply_pretrain(&mut config, &a)?;
            predictor(&config)
        }
        Command::Train(a) => {
            let mut flags = vec![
                ("corpus", path_str(&a.corpus)),
                ("valid", path_str(&a.valid)),
                ("vocab", path_str(&a.vocab)),
                ("checkpoint", path_str(&a.checkpoint)),
                ("output", path_str(&a.output)),
                ("log", path_str(&a.log)),
            ];
            flags.extend(a.train.pairs());
            config.apply_flags(&flags)?;
            train(&config)
        }
        Command::Generate(a) => {
            let mut flags = a.decode.pairs();
            flags.push(("input", path_str(&a.input)));
            flags.push(("output", path_str(&a.output)));
            config.apply_flags(&flags)?;
            generate_cmd(&config)
        }
        Command::Eval(a) => {
            config.apply_flags(&[
                ("hypotheses", path_str(&a.hypotheses)),
                ("references", path_str(&a.references)),
                ("corpus", path_str(&a.corpus)),
                ("embeddings", path_str(&a.embeddings)),
                ("checkpoint", path_str(&a.checkpoint)),
                ("vocab", path_str(&a.vocab)),
                ("topk_content", a.topk),
            ])?;
            eval(&config, &a.format)
        }
        Command::Bench(a) => bench(&a),
        Command::Chat(a) => {
            config.apply_flags(&a.decode.pairs())?;
            chat(&config, a.verbose)
        }
        Command::Synth(a) => synth(&a),
    }
}

fn apply_pretrain(config: &mut RunConfig, a: &Pretrain) -> Result<(), CliError> {
    let mut flags = vec![
        ("corpus", path_str(&a.corpus)),
        ("vocab", path_str(&a.vocab)),
        ("checkpoint", path_str(&a.checkpoint)),
        ("output", path_str(&a.output)),
        ("log", path_str(&a.log)),
    ];
    flags.extend(a.train.pairs());
    config.apply_flags(&flags)
}

fn build_vocab(config: &RunConfig) -> Result<(), CliError> {
    let corpus = config.require_path("corpus")?;
    let output = config.require_path("output")?;
    let vocab = build_vocabulary(
        &corpus,
        config.parsed("max_size", 30_000usize)?,
        config.parsed("function_min_count", 10u64)?,
        config.path("lexicon").as_deref(),
    )?;
    vocab.save(&output)?;
    eprintln!(
        "vocabulary: {} words, {} content, written to {}",
        vocab.len(),
        vocab.num_content(),
        output.display()
    );
    Ok(())
}

/// Batch log sink: the `log` file when configured, stderr otherwise.
fn log_sink(config: &RunConfig) -> Result<Box<dyn Write>, CliError> {
    Ok(match config.path("log") {
        Some(p) => Box::new(BufWriter::new(File::create(&p).map_err(|e| io_err(&p, e))?)),
        None => Box::new(io::stderr()),
    })
}

fn logger(sink: &mut dyn Write) -> impl FnMut(&BatchRecord) + '_ {
    move |r: &BatchRecord| {
        let _ = writeln!(sink, "{r}");
    }
}

fn load_checkpoint(config: &RunConfig, vocab: &Vocabulary) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(&config.require_path("checkpoint")?)?;
    ck.check_vocab(vocab)?;
    Ok(ck)
}

/// Checkpoint configuration under file and flag overrides; sizes must agree
/// with the stored tensors.
fn resumed_config(config: &RunConfig, ck: &Checkpoint) -> Result<TrainConfig, CliError> {
    let merged = config.train_config(ck.config.clone())?;
    let d = ck.params.dims;
    if merged.embed != d.embed || merged.hidden != d.hidden || merged.attention.unwrap_or(merged.hidden) != d.attention {
        return Err(usage(format!(
            "model sizes embed={} hidden={} attention={} differ from the checkpoint",
            d.embed, d.hidden, d.attention
        )));
    }
    Ok(merged)
}

fn pretrain(config: &RunConfig) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&config.require_path("vocab")?)?;
    let corpus = config.require_path("corpus")?;
    let output = config.require_path("output")?;
    let train_config = config.train_config(TrainConfig::default())?;
    let pairs = load_corpus(&corpus, &vocab)?;
    let mut sink = log_sink(config)?;
    let params = pretrain_s2s(&pairs, &vocab, &train_config, &mut logger(&mut *sink))?;
    sink.flush().map_err(|e| io_err(&output, e))?;
    Checkpoint::new(train_config, &vocab, params).save(&output)?;
    Ok(())
}

fn predictor(config: &RunConfig) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&config.require_path("vocab")?)?;
    let mut ck = load_checkpoint(config, &vocab)?;
    let corpus = config.require_path("corpus")?;
    let output = config.require_path("output")?;
    ck.config = resumed_config(config, &ck)?;
    let pairs = load_corpus(&corpus, &vocab)?;
    let mut sink = log_sink(config)?;
    let weights = pretrain_predictor(&pairs, &ck.params, &vocab, &ck.config, &mut logger(&mut *sink))?;
    sink.flush().map_err(|e| io_err(&output, e))?;
    weights.install(&mut ck.params);
    ck.save(&output)?;
    Ok(())
}

fn train(config: &RunConfig) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&config.require_path("vocab")?)?;
    let mut ck = load_checkpoint(config, &vocab)?;
    let train_pairs = load_corpus(&config.require_path("corpus")?, &vocab)?;
    let valid_pairs = load_corpus(&config.require_path("valid")?, &vocab)?;
    let output = config.require_path("output")?;
    let train_config = resumed_config(config, &ck)?;
    let state = TrainState::new(ck.params.clone(), &train_config);
    let mut sink = log_sink(config)?;
    let outcome = train_joint(
        &train_pairs,
        &valid_pairs,
        state,
        &vocab,
        &train_config,
        &mut logger(&mut *sink),
    )?;
    sink.flush().map_err(|e| io_err(&output, e))?;
    for h in &outcome.history {
        eprintln!(
            "epoch {} validation loss {:.6} lr_scale {} {:?}",
            h.epoch, h.valid_loss, h.lr_scale, h.action
        );
    }
    eprintln!("best epoch {}", outcome.best_epoch);
    ck.config = train_config;
    ck.params = outcome.best;
    ck.baseline = outcome.state.baseline;
    ck.lr_scale = outcome.state.lr_scale;
    ck.epoch = outcome.best_epoch;
    ck.save(&output)?;
    Ok(())
}

struct Decoder {
    vocab: Vocabulary,
    params: ModelParams,
    topk: usize,
    beam: usize,
    max_len: usize,
}

impl Decoder {
    fn from_config(config: &RunConfig) -> Result<Self, CliError> {
        let vocab = Vocabulary::load(&config.require_path("vocab")?)?;
        let ck = load_checkpoint(config, &vocab)?;
        let topk = config.parsed("topk_content", ck.config.topk_content)?.min(vocab.num_content());
        let beam = config.parsed("beam", 20usize)?;
        let max_len = config.parsed("max_len", 50usize)?;
        if beam == 0 || max_len == 0 {
            return Err(usage("beam and max_len must be at least 1"));
        }
        Ok(Self {
            vocab,
            params: ck.params,
            topk,
            beam,
            max_len,
        })
    }

    fn respond(&self, message: &str) -> Result<String, CliError> {
        let tokens = self.vocab.encode(message);
        if tokens.is_empty() {
            return Ok(String::new());
        }
        let out = generate(&tokens, &self.params, &self.vocab, self.topk, self.beam, self.max_len)?;
        Ok(self.vocab.decode(&out))
    }

    /// Up to ten content words of largest β, best first.
    fn keywords(&self, message: &str) -> Result<Vec<String>, CliError> {
        let tokens = self.vocab.encode(message);
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let enc = encode(&tokens, &self.params)?;
        let beta = predict_beta(&enc, &self.params, &self.vocab);
        let top = top_k_vocab(&beta, &self.vocab, 10.min(self.vocab.num_content()))?;
        let mut words: Vec<usize> = top
            .selected()
            .iter()
            .copied()
            .filter(|&w| !self.vocab.is_function(w))
            .collect();
        words.sort_by(|&a, &b| beta.beta[b].partial_cmp(&beta.beta[a]).unwrap().then(a.cmp(&b)));
        Ok(words.into_iter().map(|w| self.vocab.word(w).to_string()).collect())
    }
}

fn read_lines(path: Option<&Path>) -> Result<Vec<String>, CliError> {
    match path {
        Some(p) => Ok(fs::read_to_string(p)
            .map_err(|e| io_err(p, e))?
            .lines()
            .map(str::to_string)
            .collect()),
        None => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(|e| io_err(Path::new("<stdin>"), e)),
    }
}

fn generate_cmd(config: &RunConfig) -> Result<(), CliError> {
    let decoder = Decoder::from_config(config)?;
    let lines = read_lines(config.path("input").as_deref())?;
    let mut out: Box<dyn Write> = match config.path("output") {
        Some(p) => Box::new(BufWriter::new(File::create(&p).map_err(|e| io_err(&p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let out_path = config.path("output").unwrap_or_else(|| PathBuf::from("<stdout>"));
    for line in lines {
        let message = line.split('\t').next().unwrap_or("");
        let response = decoder.respond(message)?;
        writeln!(out, "{response}").map_err(|e| io_err(&out_path, e))?;
    }
    out.flush().map_err(|e| io_err(&out_path, e))
}

fn eval(config: &RunConfig, format: &str) -> Result<(), CliError> {
    if format != "text" && format != "kv" {
        return Err(usage(format!("unknown format {format:?}; use text or kv")));
    }
    let hypotheses = read_lines(Some(&config.require_path("hypotheses")?))?;
    let corpus = config.path("corpus");
    let references: Vec<String> = match (config.path("references"), &corpus) {
        (Some(r), _) => read_lines(Some(&r))?,
        (None, Some(c)) => read_lines(Some(c))?
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('\t').map_or("", |(_, r)| r).to_string())
            .collect(),
        (None, None) => return Err(usage("eval needs --references or --corpus")),
    };
    if hypotheses.len() != references.len() {
        return Err(usage(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let table = config.path("embeddings").map(|p| EmbeddingTable::load(&p)).transpose()?;
    let mut report = MetricReport::compute(&hypotheses, &references, table.as_ref())?;
    if let (Some(_), Some(corpus)) = (config.path("checkpoint"), corpus) {
        let decoder = Decoder::from_config(config)?;
        let pairs = load_corpus(&corpus, &decoder.vocab)?;
        let mut vocabs = Vec::with_capacity(pairs.len());
        let mut responses = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            let enc = encode(&pair.message, &decoder.params)?;
            let beta = predict_beta(&enc, &decoder.params, &decoder.vocab);
            vocabs.push(top_k_vocab(&beta, &decoder.vocab, decoder.topk)?);
            responses.push(pair.response.iter().copied().filter(|&w| w != EOS).collect());
        }
        report.recall = Some(recall_coverage(&vocabs, &responses)?);
    }
    if format == "kv" {
        print!("{}", report.to_key_values());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn parse_dims(spec: &str, config: &mut BenchConfig) -> Result<(), CliError> {
    let mut attention = None;
    for part in spec.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("--dims expects key=value items, got {part:?}")))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("--dims: invalid number in {part:?}")))?;
        match k.trim() {
            "p" => config.embed = v,
            "m" => config.hidden = v,
            "a" => attention = Some(v),
            other => return Err(usage(format!("--dims: unknown dimension {other:?}"))),
        }
    }
    config.attention = attention.unwrap_or(config.hidden);
    Ok(())
}

fn bench(a: &Bench) -> Result<(), CliError> {
    if a.format != "text" && a.format != "kv" {
        return Err(usage(format!("unknown format {:?}; use text or kv", a.format)));
    }
    let mut config = BenchConfig::default();
    if let Some(d) = &a.dims {
        parse_dims(d, &mut config)?;
    }
    if let Some(v) = a.vocab_size {
        config.vocab_size = v;
    }
    if let Some(f) = a.function_words {
        config.function_words = f;
    } else if a.vocab_size.is_some() {
        // Keep the default function-word share for smaller vocabularies.
        config.function_words = (config.vocab_size * 701 / 30_000).max(4);
    }
    if let Some(k) = a.topk {
        config.topk = k;
    }
    if let Some(b) = a.beam {
        config.beam = b;
    }
    if let Some(l) = a.len {
        config.len_r = l;
    }
    if let Some(l) = a.message_len {
        config.len_m = l;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    if a.repeat < 5 {
        return Err(usage("--repeat must be at least 5"));
    }
    let report = run_decode_benchmark(&config, a.seed, a.repeat)?;
    if a.format == "kv" {
        print!("{}", report.to_key_values());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn chat(config: &RunConfig, verbose: bool) -> Result<(), CliError> {
    let decoder = Decoder::from_config(config)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let out = Path::new("<stdout>");
    loop {
        eprint!("> ");
        let mut line = String::new();
        let n = stdin.lock().read_line(&mut line).map_err(|e| io_err(Path::new("<stdin>"), e))?;
        if n == 0 {
            eprintln!();
            return Ok(());
        }
        let message = line.trim();
        if message.is_empty() {
            continue;
        }
        writeln!(stdout, "{}", decoder.respond(message)?).map_err(|e| io_err(out, e))?;
        if verbose {
            writeln!(stdout, "keywords: {}", decoder.keywords(message)?.join(" ")).map_err(|e| io_err(out, e))?;
        }
        stdout.flush().map_err(|e| io_err(out, e))?;
    }
}

fn synth(a: &Synth) -> Result<(), CliError> {
    let corpus = generate_corpus(&SynthConfig {
        topics: a.topics,
        words_per_topic: a.words_per_topic,
        pairs: a.pairs,
        seed: a.seed,
    })
    .map_err(|e| usage(e.to_string()))?;
    if a.valid + a.test >= a.pairs {
        return Err(usage("--valid plus --test must leave training pairs"));
    }
    corpus.write(&a.output)?;
    let (rest, test) = corpus.pairs.split_at(a.pairs - a.test);
    let (train, valid) = rest.split_at(rest.len() - a.valid);
    for (name, part) in [("train.tsv", train), ("valid.tsv", valid), ("test.tsv", test)] {
        let path = a.output.join(name);
        let text: String = part.iter().map(|p| format!("{}\t{}\n", p.message, p.response)).collect();
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    eprintln!(
        "wrote {} pairs ({} train, {} valid, {} test) to {}",
        a.pairs,
        train.len(),
        valid.len(),
        test.len(),
        a.output.display()
    );
    Ok(())
}
