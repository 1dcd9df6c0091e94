//! Corpus ingestion: vocabulary construction with the function/content split,
//! message/response pairs, mini-batching and predictor supervision targets.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Used to classify frequent words when no content lexicon is supplied.
const BUILTIN_FUNCTION_WORDS: &[&str] = &[
    "a", "about", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he",
    "her", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "my",
    "no", "not", "of", "oh", "on", "or", "our", "she", "so", "some", "than", "that", "the",
    "their", "them", "then", "there", "these", "they", "this", "those", "to", "too", "us",
    "very", "was", "we", "were", "what", "when", "where", "which", "who", "why", "will", "with",
    "would", "yes", "you", "your", ",", ".", "!", "?", "'s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordClass {
    Function,
    Content,
}

impl WordClass {
    fn tag(self) -> &'static str {
        match self {
            WordClass::Function => "F",
            WordClass::Content => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub word: String,
    pub count: u64,
    pub class: WordClass,
}

/// Ordered word table. Indices `0..4` hold the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    lookup: HashMap<String, usize>,
    // Sorted word indices of content words; row i of the predictor scores content[i].
    content: Vec<usize>,
    content_slot: Vec<Option<usize>>,
}

impl Vocabulary {
    /// Builds a table from explicit entries, prepending the special tokens.
    pub fn from_entries(entries: impl IntoIterator<Item = VocabEntry>) -> Result<Self> {
        let mut all: Vec<VocabEntry> = SPECIAL_TOKENS
            .iter()
            .map(|w| VocabEntry {
                word: (*w).to_string(),
                count: 0,
                class: WordClass::Function,
            })
            .collect();
        for e in entries {
            if SPECIAL_TOKENS.contains(&e.word.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "`{}` is a reserved token",
                    e.word
                )));
            }
            all.push(e);
        }
        Self::from_full_table(all)
    }

    fn from_full_table(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if lookup.insert(e.word.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary word `{}`",
                    e.word
                )));
            }
        }
        let content: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class == WordClass::Content)
            .map(|(i, _)| i)
            .collect();
        let mut content_slot = vec![None; entries.len()];
        for (slot, &idx) in content.iter().enumerate() {
            content_slot[idx] = Some(slot);
        }
        Ok(Self {
            entries,
            lookup,
            content,
            content_slot,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn word(&self, index: usize) -> &str {
        &self.entries[index].word
    }

    pub fn class(&self, index: usize) -> WordClass {
        self.entries[index].class
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }

    /// Maps a word to its index, falling back to `UNK`.
    pub fn encode_word(&self, word: &str) -> usize {
        self.index_of(word).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.encode_word(w)).collect()
    }

    /// Joins words with single spaces, stopping at the first `EOS` and skipping `BOS`/`PAD`.
    pub fn decode(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        for &t in tokens {
            if t == EOS {
                break;
            }
            if t == BOS || t == PAD {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.word(t));
        }
        out
    }

    /// Sorted indices of content words.
    pub fn content_indices(&self) -> &[usize] {
        &self.content
    }

    pub fn num_content(&self) -> usize {
        self.content.len()
    }

    /// Position of a content word among `content_indices`, `None` for function words.
    pub fn content_slot(&self, index: usize) -> Option<usize> {
        self.content_slot[index]
    }

    pub fn is_function(&self, index: usize) -> bool {
        self.entries[index].class == WordClass::Function
    }

    /// Bit vector with `true` at every function index (specials included).
    pub fn function_mask(&self) -> Vec<bool> {
        self.entries
            .iter()
            .map(|e| e.class == WordClass::Function)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.word, e.count, e.class.tag());
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let malformed = |line: usize, reason: &str| Error::Malformed {
            path: origin.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            if raw.is_empty() {
                continue;
            }
            let mut fields = raw.split('\t');
            let (Some(word), Some(count), Some(class), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(malformed(line_no, "expected `word TAB count TAB F|C`"));
            };
            let count = count
                .parse::<u64>()
                .map_err(|_| malformed(line_no, "count is not a nonnegative integer"))?;
            let class = match class {
                "F" => WordClass::Function,
                "C" => WordClass::Content,
                _ => return Err(malformed(line_no, "class must be F or C")),
            };
            if word.is_empty() {
                return Err(malformed(line_no, "empty word"));
            }
            entries.push(VocabEntry {
                word: word.to_string(),
                count,
                class,
            });
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            match entries.get(i) {
                Some(e) if e.word == *special && e.class == WordClass::Function => {}
                _ => {
                    return Err(malformed(
                        i + 1,
                        &format!("expected special token `{special}` classed F"),
                    ))
                }
            }
        }
        Self::from_full_table(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Hex SHA-256 of the serialized table.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogPair {
    pub message: Vec<usize>,
    /// Ends with `EOS`.
    pub response: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub messages: Vec<Vec<usize>>,
    pub message_lens: Vec<usize>,
    pub responses: Vec<Vec<usize>>,
    pub response_lens: Vec<usize>,
}

impl Batch {
    fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a DialogPair>) -> Self {
        let pairs: Vec<&DialogPair> = pairs.into_iter().collect();
        let pad = |rows: Vec<&Vec<usize>>| -> (Vec<Vec<usize>>, Vec<usize>) {
            let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            let lens = rows.iter().map(|r| r.len()).collect();
            let padded = rows
                .into_iter()
                .map(|r| {
                    let mut row = r.clone();
                    row.resize(width, PAD);
                    row
                })
                .collect();
            (padded, lens)
        };
        let (messages, message_lens) = pad(pairs.iter().map(|p| &p.message).collect());
        let (responses, response_lens) = pad(pairs.iter().map(|p| &p.response).collect());
        Self {
            messages,
            message_lens,
            responses,
            response_lens,
        }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Row `i` with padding stripped.
    pub fn pair(&self, i: usize) -> DialogPair {
        DialogPair {
            message: self.messages[i][..self.message_lens[i]].to_vec(),
            response: self.responses[i][..self.response_lens[i]].to_vec(),
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = DialogPair> + '_ {
        (0..self.len()).map(|i| self.pair(i))
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        )
    })
}

/// Splits one corpus line into message and response token slices.
fn split_line<'a>(raw: &'a str, path: &Path, line: usize) -> Result<(Vec<&'a str>, Vec<&'a str>)> {
    let malformed = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let (msg, resp) = raw
        .split_once('\t')
        .ok_or_else(|| malformed("missing TAB between message and response"))?;
    let msg: Vec<&str> = msg.split_whitespace().collect();
    let resp: Vec<&str> = resp.split_whitespace().collect();
    if msg.is_empty() {
        return Err(malformed("empty message"));
    }
    if resp.is_empty() {
        return Err(malformed("empty response"));
    }
    Ok((msg, resp))
}

fn corpus_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<DialogPair>> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (line, raw) in corpus_lines(&text) {
        let (msg, resp) = split_line(raw, path, line)?;
        let message = msg.iter().map(|w| vocab.encode_word(w)).collect();
        let mut response: Vec<usize> = resp.iter().map(|w| vocab.encode_word(w)).collect();
        response.push(EOS);
        pairs.push(DialogPair { message, response });
    }
    Ok(pairs)
}

pub fn load_lexicon(path: &Path) -> Result<HashSet<String>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect())
}

/// Builds the decoding vocabulary from the response side of a corpus file.
pub fn build_vocabulary(
    corpus: &Path,
    max_size: usize,
    function_min_count: u64,
    content_lexicon: Option<&Path>,
) -> Result<Vocabulary> {
    if max_size < SPECIAL_TOKENS.len() {
        return Err(Error::InvalidArgument(format!(
            "max_size must be at least {}, got {max_size}",
            SPECIAL_TOKENS.len()
        )));
    }
    let lexicon = content_lexicon.map(load_lexicon).transpose()?;
    let text = read_text(corpus)?;
    let mut responses = Vec::new();
    for (line, raw) in corpus_lines(&text) {
        let (_, resp) = split_line(raw, corpus, line)?;
        responses.push(resp);
    }
    Ok(vocabulary_from_responses(
        responses.iter().map(|r| r.as_slice()),
        max_size,
        function_min_count,
        lexicon.as_ref(),
    ))
}

/// Frequency ranking and classification over tokenized responses.
pub fn vocabulary_from_responses<'a, I>(
    responses: I,
    max_size: usize,
    function_min_count: u64,
    lexicon: Option<&HashSet<String>>,
) -> Vocabulary
where
    I: IntoIterator<Item = &'a [&'a str]>,
{
    // word -> (count, first occurrence)
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    let mut seen = 0usize;
    for resp in responses {
        for &w in resp {
            if SPECIAL_TOKENS.contains(&w) {
                continue;
            }
            let entry = counts.entry(w).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    let mut ranked: Vec<(&str, u64, usize)> =
        counts.into_iter().map(|(w, (c, first))| (w, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size.saturating_sub(SPECIAL_TOKENS.len()));

    let entries = ranked.into_iter().map(|(word, count, _)| {
        let frequent = count > function_min_count;
        let functional = match lexicon {
            Some(lex) => !lex.contains(word),
            None => BUILTIN_FUNCTION_WORDS.contains(&word),
        };
        VocabEntry {
            word: word.to_string(),
            count,
            class: if frequent && functional {
                WordClass::Function
            } else {
                WordClass::Content
            },
        }
    });
    Vocabulary::from_entries(entries).expect("ranked words are unique and non-special")
}

/// Predictor supervision: function words plus every word occurring in the response.
pub fn target_indicator(response: &[usize], vocab: &Vocabulary) -> Vec<bool> {
    let mut bits = vocab.function_mask();
    for &w in response {
        bits[w] = true;
    }
    bits
}

/// Shuffles `pairs` under `seed` and chunks them; the last batch may be short.
pub fn make_batches(pairs: &[DialogPair], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch::from_pairs(chunk.iter().map(|&i| &pairs[i])))
        .collect())
}
