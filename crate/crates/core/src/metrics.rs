//! Automatic response evaluation: BLEU, embedding similarity, distinct-n and
//! ground-truth vocabulary coverage.
//!
//! Sentences are whitespace-tokenized strings.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DynamicVocab;

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngram_counts<'a>(toks: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n with uniform weights, clipped precision, brevity
/// penalty and no smoothing, scaled to 0..100.
pub fn bleu_n<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R], n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument("BLEU needs at least one hypothesis".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (tokens(h.as_ref()), tokens(r.as_ref()));
        hyp_len += h.len();
        ref_len += r.len();
        for k in 1..=n {
            let rc = ngram_counts(&r, k);
            for (gram, c) in ngram_counts(&h, k) {
                matched[k - 1] += c.min(rc.get(&gram).copied().unwrap_or(0));
                total[k - 1] += c;
            }
        }
    }
    if matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_p.exp())
}

/// Distinct n-grams over total n-grams, pooled across responses.
pub fn distinct_n<S: AsRef<str>>(responses: &[S], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks = tokens(r.as_ref());
        if n == 0 || toks.len() < n {
            continue;
        }
        for w in toks.windows(n) {
            seen.insert(w.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Mean over instances of the fraction of distinct response words that the
/// instance's dynamic vocabulary contains.
pub fn recall_coverage(vocabs: &[DynamicVocab], responses: &[Vec<usize>]) -> Result<f64> {
    if vocabs.len() != responses.len() {
        return Err(Error::InvalidArgument(format!(
            "{} vocabularies but {} responses",
            vocabs.len(),
            responses.len()
        )));
    }
    if vocabs.is_empty() {
        return Err(Error::InvalidArgument("coverage needs at least one instance".into()));
    }
    let mut sum = 0.0;
    for (t, y) in vocabs.iter().zip(responses) {
        let words: HashSet<usize> = y.iter().copied().collect();
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty ground-truth response".into()));
        }
        let covered = words.iter().filter(|&&w| t.contains(w)).count();
        sum += covered as f64 / words.len() as f64;
    }
    Ok(sum / vocabs.len() as f64)
}

/// Pretrained word vectors. Tokens missing from the table are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                name: format!("embedding of {word:?}"),
                expected: vec![self.dim],
                found: vec![vector.len()],
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of {word:?}")));
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Text format: a `count dim` header, then `word v1 ... vd` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let malformed = |line: usize, reason: String| Error::Malformed {
            path: "<embeddings>".into(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(1, format!("bad header {header:?}")))?;
        if head.len() != 2 || head[1] == 0 {
            return Err(malformed(1, "header must be `count dim` with dim > 0".into()));
        }
        let (count, dim) = (head[0], head[1]);
        let mut table = Self::new(dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("nonblank line");
            let vector: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed(i + 1, format!("bad number in vector of {word:?}")))?;
            if vector.len() != dim {
                return Err(malformed(i + 1, format!("{word:?} has {} values, expected {dim}", vector.len())));
            }
            table.insert(word, vector).map_err(|e| malformed(i + 1, e.to_string()))?;
        }
        if table.len() != count {
            return Err(malformed(1, format!("header promises {count} vectors, found {}", table.len())));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Malformed { line, reason, .. } => Error::Malformed {
                path: path.to_path_buf(),
                line,
                reason,
            },
            other => other,
        })
    }

    fn lookup<'a>(&'a self, sentence: &str) -> Vec<&'a [f64]> {
        tokens(sentence).into_iter().filter_map(|w| self.get(w)).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= vs.len() as f64);
    out
}

/// Per dimension, the value of largest magnitude; positive wins ties.
fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            vs.iter().map(|v| v[d]).fold(0.0f64, |best, x| {
                if x.abs() > best.abs() || (x.abs() == best.abs() && x > best) {
                    x
                } else {
                    best
                }
            })
        })
        .collect()
}

fn greedy_direction(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / from.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingScores {
    pub average: f64,
    pub extrema: f64,
    pub greedy: f64,
}

/// `None` when either side has no token in the table.
pub fn embedding_metrics(hypothesis: &str, reference: &str, table: &EmbeddingTable) -> Option<EmbeddingScores> {
    let h = table.lookup(hypothesis);
    let r = table.lookup(reference);
    if h.is_empty() || r.is_empty() {
        return None;
    }
    let dim = table.dim();
    Some(EmbeddingScores {
        average: cosine(&mean_vector(&h, dim), &mean_vector(&r, dim)),
        extrema: cosine(&extrema_vector(&h, dim), &extrema_vector(&r, dim)),
        greedy: 0.5 * (greedy_direction(&h, &r) + greedy_direction(&r, &h)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub pairs: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    /// Embedding scores are absent without a table.
    pub embedding: Option<EmbeddingScores>,
    pub embedding_pairs: usize,
    pub embedding_skipped: usize,
    pub distinct1: f64,
    pub distinct2: f64,
    pub recall: Option<f64>,
}

impl MetricReport {
    pub fn compute<H: AsRef<str>, R: AsRef<str>>(
        hypotheses: &[H],
        references: &[R],
        table: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        let mut embedding = None;
        let (mut used, mut skipped) = (0, 0);
        if let Some(table) = table {
            let mut sum = (0.0, 0.0, 0.0);
            for (h, r) in hypotheses.iter().zip(references) {
                match embedding_metrics(h.as_ref(), r.as_ref(), table) {
                    Some(s) => {
                        sum.0 += s.average;
                        sum.1 += s.extrema;
                        sum.2 += s.greedy;
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
            if used > 0 {
                let n = used as f64;
                embedding = Some(EmbeddingScores {
                    average: sum.0 / n,
                    extrema: sum.1 / n,
                    greedy: sum.2 / n,
                });
            }
        }
        Ok(Self {
            pairs: hypotheses.len(),
            bleu1: bleu_n(hypotheses, references, 1)?,
            bleu2: bleu_n(hypotheses, references, 2)?,
            bleu3: bleu_n(hypotheses, references, 3)?,
            embedding,
            embedding_pairs: used,
            embedding_skipped: skipped,
            distinct1: distinct_n(hypotheses, 1),
            distinct2: distinct_n(hypotheses, 2),
            recall: None,
        })
    }

    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "pairs={}\nbleu1={:.6}\nbleu2={:.6}\nbleu3={:.6}\n",
            self.pairs, self.bleu1, self.bleu2, self.bleu3
        );
        if let Some(e) = self.embedding {
            out.push_str(&format!(
                "average={:.6}\nextrema={:.6}\ngreedy={:.6}\n",
                e.average, e.extrema, e.greedy
            ));
        }
        out.push_str(&format!(
            "embedding_pairs={}\nembedding_skipped={}\ndistinct1={:.6}\ndistinct2={:.6}\n",
            self.embedding_pairs, self.embedding_skipped, self.distinct1, self.distinct2
        ));
        if let Some(r) = self.recall {
            out.push_str(&format!("recall={r:.6}\n"));
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs evaluated   {}", self.pairs)?;
        writeln!(f, "BLEU-1/2/3        {:.2} / {:.2} / {:.2}", self.bleu1, self.bleu2, self.bleu3)?;
        match self.embedding {
            Some(e) => writeln!(
                f,
                "Average/Extrema/Greedy {:.4} / {:.4} / {:.4} ({} pairs, {} skipped)",
                e.average, e.extrema, e.greedy, self.embedding_pairs, self.embedding_skipped
            )?,
            None => writeln!(f, "embedding metrics n/a")?,
        }
        writeln!(f, "Distinct-1/2      {:.4} / {:.4}", self.distinct1, self.distinct2)?;
        if let Some(r) = self.recall {
            writeln!(f, "Recall            {r:.4}")?;
        }
        Ok(())
    }
}
