#![allow(dead_code)]

pub mod enumerate;
pub mod reference;

use dvs2s::corpus::{VocabEntry, Vocabulary, WordClass};
use dvs2s::model::{ModelDims, ModelParams};
use dvs2s::numeric::ParamSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Specials, then `function` words `f{i}`, then `content` words `c{i}`.
pub fn toy_vocab(function: usize, content: usize) -> Vocabulary {
    let entries = (0..function)
        .map(|i| (format!("f{i}"), WordClass::Function))
        .chain((0..content).map(|i| (format!("c{i}"), WordClass::Content)))
        .map(|(word, class)| VocabEntry { word, count: 50, class });
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

/// Every tensor, biases included, drawn from `U(-scale, scale)`.
pub fn random_params(dims: ModelDims, seed: u64, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(dims).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, mut t) in p.tensors_mut() {
        t.mapv_inplace(|_| rng.gen_range(-scale..scale));
    }
    p
}

/// A random token sequence over `lo..hi` followed by `tail`.
pub fn random_tokens(rng: &mut ChaCha8Rng, len: usize, lo: usize, hi: usize, tail: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    out.extend_from_slice(tail);
    out
}

/// Central differences of a double-double valued function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> dvs2s::numeric::DoubleDouble, flat: &[f64], eps: f64) -> Vec<f64> {
    let mut theta = flat.to_vec();
    (0..flat.len())
        .map(|i| {
            let (up, down) = (flat[i] + eps, flat[i] - eps);
            theta[i] = up;
            let plus = f(&theta);
            theta[i] = down;
            let minus = f(&theta);
            theta[i] = flat[i];
            ((plus - minus) / (up - down)).to_f64()
        })
        .collect()
}

/// A small random estimator instance: 2 function and `content` content words,
/// p = 3, m = 4, a two-word message and a response of two words plus EOS.
pub fn estimator_instance(seed: u64, content: usize) -> (Vocabulary, ModelParams, dvs2s::corpus::DialogPair) {
    let v = toy_vocab(2, content);
    let d = dims(&v, 3, 4);
    let p = random_params(d, seed, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let first_content = v.content_indices()[0];
    let message = random_tokens(&mut rng, 2, 4, v.len(), &[]);
    let response = vec![
        rng.gen_range(first_content..v.len()),
        rng.gen_range(4..first_content),
        dvs2s::corpus::EOS,
    ];
    (v, p, dvs2s::corpus::DialogPair { message, response })
}
