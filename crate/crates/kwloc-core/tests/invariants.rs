//! Property tests for the numeric invariants the models rely on.

use kwloc_core::model::{aggregate_logsumexp, attend};
use kwloc_core::numerics::{argmax_first, softmax_stable};
use kwloc_core::tape::Tape;
use kwloc_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_normalized_and_nonnegative(logits in prop::collection::vec(-30.0f32..30.0, 1..128)) {
        let w = softmax_stable(&logits);
        let sum: f64 = w.iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-6, "sum = {sum}");
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_shift_invariant(
        logits in prop::collection::vec(-10.0f32..10.0, 2..64),
        shift in -20.0f32..20.0,
    ) {
        let base = softmax_stable(&logits);
        let shifted_logits: Vec<f32> = logits.iter().map(|&v| v + shift).collect();
        let shifted = softmax_stable(&shifted_logits);
        for (a, b) in base.iter().zip(shifted.iter()) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        prop_assert_eq!(argmax_first(&base), argmax_first(&shifted));
    }

    #[test]
    fn log_mean_exp_between_mean_and_max(
        scores in prop::collection::vec(0.0f64..1.0, 1..64),
        r_exp in -3.0f64..3.0,
    ) {
        let r = 10f64.powf(r_exp);
        let g = aggregate_logsumexp(&scores, r).unwrap();
        let mean: f64 = scores.iter().sum::<f64>() / scores.len() as f64;
        let max = scores.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(g >= mean - 1e-9, "g {g} < mean {mean}");
        prop_assert!(g <= max + 1e-9, "g {g} > max {max}");
    }

    #[test]
    fn maxpool_matches_oracle(
        t in 1usize..40,
        c in 1usize..5,
        window in 1usize..6,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..t * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.input_slice(&data, vec![t, c]);
        let out = tape.maxpool1d(x, window).unwrap();
        let t_out = t.div_ceil(window);
        prop_assert_eq!(tape.shape(out), &[t_out, c]);
        for p in 0..t_out {
            for ch in 0..c {
                let lo = p * window;
                let hi = ((p + 1) * window).min(t);
                let want = (lo..hi).map(|i| data[i * c + ch]).fold(f64::MIN, f64::max);
                prop_assert_eq!(tape.value(out)[p * c + ch], want);
            }
        }
    }

    #[test]
    fn attention_weights_form_distribution(
        t in 1usize..50,
        u in 1usize..8,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let h = Tensor::<f32>::new(
            vec![t, u],
            (0..t * u).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        ).unwrap();
        let q: Vec<f32> = (0..u).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let trace = attend(&h, &q).unwrap();
        let sum: f64 = trace.weights.iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(trace.weights.iter().all(|&v| v >= 0.0));
        // argmax invariance under uniform logit shift
        let shifted: Vec<f32> = trace.scores.iter().map(|&e| e + 7.5).collect();
        let reweighted = softmax_stable(&shifted);
        prop_assert_eq!(argmax_first(&trace.weights), argmax_first(&reweighted));
    }

    #[test]
    fn corpus_spans_partition_frames(seed in 0u64..200) {
        let cfg = kwloc_core::corpus::CorpusConfig {
            vocab_size: 9,
            keyword_count: 3,
            semantic_groups: 1,
            train_count: 3,
            dev_count: 1,
            test_count: 1,
            seed,
            ..Default::default()
        };
        let corpus = kwloc_core::corpus::synthesize::<f32>(&cfg).unwrap();
        for utt in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            let total: usize = utt.spans.iter().map(|s| s.end - s.start + 1).sum();
            prop_assert_eq!(total, utt.frames());
            let mut cursor = 0;
            for span in &utt.spans {
                prop_assert_eq!(span.start, cursor);
                cursor = span.end + 1;
            }
        }
    }
}
