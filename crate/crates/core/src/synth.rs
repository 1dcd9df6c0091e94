//! Synthetic topical dialogue corpus.
//!
//! Every pair belongs to one topic. Message and response content words are
//! drawn from that topic's word list and slotted into fixed templates, so the
//! content vocabulary of a response is determined by the message's topic.
//! Messages end with a topic word.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const TOPIC_NAMES: [&str; 12] = [
    "music", "sport", "food", "travel", "movie", "game", "pet", "weather", "work", "study", "garden", "car",
];

const MESSAGE_TEMPLATES: [&str; 6] = [
    "what about {}",
    "do you like {} and {}",
    "i love my {}",
    "tell me about {} and {}",
    "how is your {}",
    "my friend says {} is better than {}",
];

const RESPONSE_TEMPLATES: [&str; 6] = [
    "i like the {} and the {} .",
    "you should try {} with {} !",
    "the {} is very good .",
    "we can do {} and {} too .",
    "my {} and {} are with the {} .",
    "it is about {} , not {} .",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 10,
            words_per_topic: 40,
            pairs: 5000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPair {
    pub topic: usize,
    pub message: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub topic_words: Vec<Vec<String>>,
    pub pairs: Vec<SynthPair>,
}

fn fill<R: Rng>(template: &str, words: &[String], rng: &mut R) -> String {
    let slots = template.matches("{}").count();
    let picks: Vec<&String> = words.choose_multiple(rng, slots).collect();
    let mut out = String::new();
    let mut rest = template;
    for w in picks {
        let (head, tail) = rest.split_once("{}").expect("counted slots");
        out.push_str(head);
        out.push_str(w);
        rest = tail;
    }
    out.push_str(rest);
    out
}

fn topic_name(k: usize) -> String {
    match TOPIC_NAMES.get(k) {
        Some(n) => n.to_string(),
        None => format!("topic{k}"),
    }
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.topics == 0 || config.pairs == 0 || config.words_per_topic < 3 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs topics ≥ 1, pairs ≥ 1 and at least 3 words per topic".into(),
        ));
    }
    let topic_words: Vec<Vec<String>> = (0..config.topics)
        .map(|k| {
            let name = topic_name(k);
            (0..config.words_per_topic).map(|j| format!("{name}_{j}")).collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs = (0..config.pairs)
        .map(|_| {
            let topic = rng.gen_range(0..config.topics);
            let words = &topic_words[topic];
            let message = fill(MESSAGE_TEMPLATES.choose(&mut rng).expect("nonempty"), words, &mut rng);
            let response = fill(RESPONSE_TEMPLATES.choose(&mut rng).expect("nonempty"), words, &mut rng);
            SynthPair {
                topic,
                message,
                response,
            }
        })
        .collect();
    Ok(SynthCorpus { topic_words, pairs })
}

impl SynthCorpus {
    /// Corpus file text: `message TAB response` per line.
    pub fn corpus_text(&self) -> String {
        self.pairs.iter().map(|p| format!("{}\t{}\n", p.message, p.response)).collect()
    }

    /// Every topic word, one per line.
    pub fn lexicon_text(&self) -> String {
        self.topic_words.iter().flatten().map(|w| format!("{w}\n")).collect()
    }

    pub fn topic_of_word(&self, word: &str) -> Option<usize> {
        let (name, idx) = word.rsplit_once('_')?;
        idx.parse::<usize>().ok()?;
        self.topic_words.iter().position(|ws| ws[0].rsplit_once('_').map(|(n, _)| n) == Some(name))
    }

    /// Splits off the last `held_out` pairs.
    pub fn split(&self, held_out: usize) -> (&[SynthPair], &[SynthPair]) {
        self.pairs.split_at(self.pairs.len().saturating_sub(held_out))
    }

    /// Writes `corpus.tsv` and `lexicon.txt` under `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus = dir.join("corpus.tsv");
        let lexicon = dir.join("lexicon.txt");
        fs::write(&corpus, self.corpus_text()).map_err(|e| Error::io(&corpus, e))?;
        fs::write(&lexicon, self.lexicon_text()).map_err(|e| Error::io(&lexicon, e))?;
        Ok((corpus, lexicon))
    }
}
