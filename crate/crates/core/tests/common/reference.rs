//! Naive scalar re-implementation of the network, generic over precision.
//! Shares nothing with the library's forward code beyond the parameter layout.

use std::collections::HashMap;

use dvs2s::model::ModelDims;
use dvs2s::numeric::Real;

pub struct RefModel<R> {
    pub dims: ModelDims,
    tensors: HashMap<&'static str, (Vec<usize>, Vec<R>)>,
}

impl<R: Real> RefModel<R> {
    pub fn from_flat(dims: ModelDims, flat: &[f64]) -> Self {
        let mut tensors = HashMap::new();
        let mut offset = 0;
        for spec in dims.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = flat[offset..offset + n].iter().map(|&v| R::from(v)).collect();
            tensors.insert(spec.name, (spec.shape.clone(), data));
            offset += n;
        }
        assert_eq!(offset, flat.len());
        Self { dims, tensors }
    }

    fn get(&self, name: &str, row: usize, col: usize) -> R {
        let (shape, data) = &self.tensors[name];
        let cols = if shape.len() == 2 { shape[1] } else { 1 };
        data[row * cols + col]
    }

    fn rows(&self, name: &str) -> usize {
        self.tensors[name].0[0]
    }

    /// `W x` for the named matrix.
    fn mat_vec(&self, name: &str, x: &[R]) -> Vec<R> {
        (0..self.rows(name))
            .map(|i| {
                let mut acc = R::zero();
                for (j, &xj) in x.iter().enumerate() {
                    acc += self.get(name, i, j) * xj;
                }
                acc
            })
            .collect()
    }

    fn embed(&self, token: usize) -> Vec<R> {
        (0..self.dims.embed).map(|j| self.get("embedding", token, j)).collect()
    }

    fn gru(&self, prefix: &str, x: &[R], h: &[R]) -> Vec<R> {
        let n = |w: &str| format!("{prefix}.{w}");
        let add = |a: Vec<R>, b: Vec<R>| a.into_iter().zip(b).map(|(a, b)| a + b).collect::<Vec<R>>();
        let z: Vec<R> = add(self.mat_vec(&n("w_z"), x), self.mat_vec(&n("u_z"), h))
            .into_iter()
            .map(R::sigmoid)
            .collect();
        let r: Vec<R> = add(self.mat_vec(&n("w_r"), x), self.mat_vec(&n("u_r"), h))
            .into_iter()
            .map(R::sigmoid)
            .collect();
        let rh: Vec<R> = r.iter().zip(h).map(|(&r, &h)| r * h).collect();
        let cand: Vec<R> = add(self.mat_vec(&n("w_h"), x), self.mat_vec(&n("u_h"), &rh))
            .into_iter()
            .map(R::tanh)
            .collect();
        (0..h.len())
            .map(|i| z[i] * cand[i] + (R::one() - z[i]) * h[i])
            .collect()
    }

    /// Memory rows `[h→_i; h←_i]`.
    pub fn encode(&self, message: &[usize]) -> Vec<Vec<R>> {
        let half = self.dims.hidden / 2;
        let mut fwd = Vec::new();
        let mut h = vec![R::zero(); half];
        for &tok in message {
            h = self.gru("enc_fwd", &self.embed(tok), &h);
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); message.len()];
        let mut h = vec![R::zero(); half];
        for (i, &tok) in message.iter().enumerate().rev() {
            h = self.gru("enc_bwd", &self.embed(tok), &h);
            bwd[i] = h.clone();
        }
        fwd.into_iter().zip(bwd).map(|(mut f, b)| {
            f.extend(b);
            f
        }).collect()
    }

    fn context(&self, h_dec: &[R], memory: &[Vec<R>]) -> Vec<R> {
        let m = self.dims.hidden;
        let scores: Vec<R> = memory
            .iter()
            .map(|row| {
                let mut e = R::zero();
                for k in 0..self.dims.attention {
                    let mut pre = R::zero();
                    for j in 0..m {
                        pre += self.get("att_w", k, j) * row[j] + self.get("att_w", k, m + j) * h_dec[j];
                    }
                    e += self.get("att_v", k, 0) * pre.tanh();
                }
                e
            })
            .collect();
        let weights = softmax(&scores);
        (0..m)
            .map(|j| {
                let mut c = R::zero();
                for (w, row) in weights.iter().zip(memory) {
                    c += *w * row[j];
                }
                c
            })
            .collect()
    }

    /// `log p(Y | T, X)` with `selected` the sorted dynamic vocabulary.
    pub fn log_prob(&self, message: &[usize], response: &[usize], selected: &[usize]) -> R {
        let memory = self.encode(message);
        self.log_prob_from_memory(&memory, response, selected)
    }

    pub fn log_prob_from_memory(&self, memory: &[Vec<R>], response: &[usize], selected: &[usize]) -> R {
        let mut h = memory.last().unwrap().clone();
        let mut y_prev = dvs2s::corpus::BOS;
        let mut total = R::zero();
        for &y in response {
            let emb = self.embed(y_prev);
            let h_new = self.gru("dec", &emb, &h);
            let c = self.context(&h_new, memory);
            let input: Vec<R> = emb.iter().chain(&h).chain(&c).copied().collect();
            let scores: Vec<R> = selected
                .iter()
                .map(|&k| {
                    let mut s = self.get("proj_b", k, 0);
                    for (j, &u) in input.iter().enumerate() {
                        s += self.get("proj_w", k, j) * u;
                    }
                    s
                })
                .collect();
            let pos = selected.iter().position(|&k| k == y).expect("target selected");
            total += scores[pos] - log_sum_exp(&scores);
            h = h_new;
            y_prev = y;
        }
        total
    }

    /// Unclipped content-word inclusion probabilities, in content-slot order.
    pub fn beta(&self, message: &[usize]) -> Vec<R> {
        let memory = self.encode(message);
        self.beta_from_memory(&memory)
    }

    pub fn beta_from_memory(&self, memory: &[Vec<R>]) -> Vec<R> {
        let last = memory.last().unwrap();
        self.mat_vec("pred_w", last)
            .into_iter()
            .enumerate()
            .map(|(c, l)| (l + self.get("pred_b", c, 0)).sigmoid())
            .collect()
    }
}

pub fn softmax<R: Real>(scores: &[R]) -> Vec<R> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|&s| (s - lse).exp()).collect()
}

pub fn log_sum_exp<R: Real>(scores: &[R]) -> R {
    let max = scores
        .iter()
        .copied()
        .fold(scores[0], |a, b| if b > a { b } else { a });
    let mut sum = R::zero();
    for &s in scores {
        sum += (s - max).exp();
    }
    max + sum.ln()
}

/// `log p(T | X)` for content-slot inclusion bits, with β clipped like the library.
pub fn bernoulli_log_prob<R: Real>(beta: &[R], included: &[bool]) -> R {
    let lo = R::from(1e-7);
    let hi = R::from(1.0 - 1e-7);
    let mut total = R::zero();
    for (&b, &t) in beta.iter().zip(included) {
        let b = if b < lo { lo } else if b > hi { hi } else { b };
        total += if t { b.ln() } else { (R::one() - b).ln() };
    }
    total
}
