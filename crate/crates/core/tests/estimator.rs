mod common;

use common::enumerate::{all_vocabularies, content_beta, lower_bound_dd, subset_prob, subset_terms, surrogate_dd};
use common::reference::RefModel;
use common::{estimator_instance, fd_gradient};
use dvs2s::model::{encode, predict_beta, sequence_log_prob, vocab_log_prob_logit_grad};
use dvs2s::numeric::{DoubleDouble, ParamSet};
use dvs2s::training::estimator_for_samples;

/// `Σ_T p(T|X) · estimator(T)` with one sample per evaluation.
fn expected_estimator(seed: u64, baseline: f64, normalize: bool) -> (Vec<f64>, Vec<f64>) {
    let (v, p, pair) = estimator_instance(seed, 6);
    let enc = encode(&pair.message, &p).unwrap();
    let beta = content_beta(&predict_beta(&enc, &p, &v), &v);
    let mut expected = vec![0.0; p.num_scalars()];
    for (t, bits) in all_vocabularies(&v) {
        let w = subset_prob(&beta, &bits);
        let est = estimator_for_samples(&pair, &p, &v, baseline, &[t], normalize, 1e-7).unwrap();
        for (e, g) in expected.iter_mut().zip(est.grads.to_flat()) {
            *e += w * g;
        }
    }
    let d = p.dims;
    let exact = if normalize {
        let frozen = subset_terms(&RefModel::from_flat(d, &p.to_flat()), &v, &pair);
        fd_gradient(|f| surrogate_dd(&RefModel::from_flat(d, f), &v, &pair, &frozen), &p.to_flat(), 1e-6)
    } else {
        fd_gradient(|f| lower_bound_dd(&RefModel::from_flat(d, f), &v, &pair), &p.to_flat(), 1e-6)
    };
    (expected, exact)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn expected_estimator_is_the_lower_bound_gradient() {
    for seed in 0..2 {
        let (expected, exact) = expected_estimator(seed, -1.3, false);
        let err = max_abs_diff(&expected, &exact);
        assert!(err < 1e-8, "seed {seed}: {err:e}");
        assert!(exact.iter().any(|g| g.abs() > 1e-3));
    }
}

#[test]
fn expected_normalized_estimator_is_the_surrogate_gradient() {
    let (expected, exact) = expected_estimator(3, -0.4, true);
    let err = max_abs_diff(&expected, &exact);
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn baseline_does_not_change_the_expectation() {
    let (v, p, pair) = estimator_instance(5, 6);
    let enc = encode(&pair.message, &p).unwrap();
    let beta = content_beta(&predict_beta(&enc, &p, &v), &v);
    let expect = |b: f64| {
        let mut out = vec![0.0; p.num_scalars()];
        for (t, bits) in all_vocabularies(&v) {
            let w = subset_prob(&beta, &bits);
            let est = estimator_for_samples(&pair, &p, &v, b, &[t], true, 1e-7).unwrap();
            for (e, g) in out.iter_mut().zip(est.grads.to_flat()) {
                *e += w * g;
            }
        }
        out
    };
    let err = max_abs_diff(&expect(0.0), &expect(100.0));
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn score_function_has_zero_mean() {
    for seed in 0..4 {
        let (v, p, pair) = estimator_instance(seed, 6);
        let enc = encode(&pair.message, &p).unwrap();
        let beta = predict_beta(&enc, &p, &v);
        let cb = content_beta(&beta, &v);
        let mut total = vec![0.0; v.num_content()];
        for (t, bits) in all_vocabularies(&v) {
            let w = subset_prob(&cb, &bits);
            for (acc, g) in total.iter_mut().zip(vocab_log_prob_logit_grad(&t, &beta, &v)) {
                *acc += w * g;
            }
        }
        assert!(total.iter().all(|g| g.abs() < 1e-10), "{total:?}");
    }
}

#[test]
fn lower_bound_holds() {
    for seed in 0..20 {
        let (v, p, pair) = estimator_instance(100 + seed, 8);
        let enc = encode(&pair.message, &p).unwrap();
        let beta = content_beta(&predict_beta(&enc, &p, &v), &v);
        let mut bound = 0.0;
        let mut terms = Vec::new();
        for (t, bits) in all_vocabularies(&v) {
            let w = subset_prob(&beta, &bits);
            let lp = sequence_log_prob(&pair.response, &enc, &t.augmented_with(&pair.response), &p).unwrap();
            bound += w * lp;
            terms.push(w.ln() + lp);
        }
        let log_marginal = dvs2s::numeric::log_sum_exp(terms.iter().copied());
        assert!(bound <= log_marginal + 1e-10, "seed {seed}: {bound} > {log_marginal}");
        // Matches the independent double-double computation.
        let dd = lower_bound_dd(&RefModel::<DoubleDouble>::from_flat(p.dims, &p.to_flat()), &v, &pair);
        assert!((dd.to_f64() - bound).abs() < 1e-10);
    }
}
