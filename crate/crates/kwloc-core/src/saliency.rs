//! Gradient-weighted class activation maps for the cnn-pool model, which has
//! no built-in localisation mechanism. Filter importances are the time-mean
//! of ∂ŷ_w/∂h, and frame scores are the ReLU of the importance-weighted sum
//! of activations.

use crate::error::{CoreError, Result};
use crate::model::{FrameMap, KeywordModel, ModelVariant};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SaliencyMap<S> {
    pub keyword: usize,
    /// Per-filter importance γ_k: time-mean of ∂ŷ_w/∂h_{t,k}.
    pub filter_weights: Vec<S>,
    /// Per-trunk-frame scores α_t = ReLU(Σ_k γ_k·h_{t,k}); always ≥ 0.
    pub frame_scores: Vec<S>,
    pub frame_map: FrameMap,
}

/// Pure saliency math given the trunk activations h [T', K] and the gradient
/// of the class probability with respect to them (same layout).
pub fn gradcam_from_grads<S: Scalar>(h: &Tensor<S>, dy_dh: &[S]) -> Result<SaliencyMap<S>> {
    let (t, k) = h.dims2()?;
    if dy_dh.len() != t * k {
        return Err(CoreError::shape(format!(
            "gradcam: gradient has {} entries, activations are {t}x{k}",
            dy_dh.len()
        )));
    }
    let inv_t = S::from_f64(1.0 / t as f64);
    let mut gamma = vec![S::zero(); k];
    for row in 0..t {
        for col in 0..k {
            gamma[col] += dy_dh[row * k + col];
        }
    }
    for g in gamma.iter_mut() {
        *g *= inv_t;
    }
    let data = h.data();
    let mut alpha = vec![S::zero(); t];
    for (row, a) in alpha.iter_mut().enumerate() {
        let mut acc = S::zero();
        for col in 0..k {
            acc += gamma[col] * data[row * k + col];
        }
        *a = if acc > S::zero() { acc } else { S::zero() };
    }
    Ok(SaliencyMap {
        keyword: 0,
        filter_weights: gamma,
        frame_scores: alpha,
        frame_map: FrameMap {
            scale: 1,
            offset: 0,
            input_len: t,
        },
    })
}

/// End-to-end saliency for one keyword of a cnn-pool model: forward pass,
/// backward pass from the post-sigmoid probability ŷ_w, then the weighted
/// activation map.
pub fn gradcam<S: Scalar>(
    model: &KeywordModel<S>,
    x: &Tensor<S>,
    keyword: usize,
) -> Result<SaliencyMap<S>> {
    if model.config.variant != ModelVariant::CnnPool {
        return Err(CoreError::invalid(format!(
            "gradcam applies to cnn-pool only; {} localises natively",
            model.config.variant.as_str()
        )));
    }
    let w_count = model.keyword_count();
    if keyword >= w_count {
        return Err(CoreError::invalid(format!(
            "keyword index {keyword} out of range for {w_count} keywords"
        )));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xb = tape.input(x);
    let h = model.trunk_graph(&mut tape, &bound, xb)?;
    let probs = model.cnnpool_graph(&mut tape, &bound, h)?;
    let mut seed = vec![S::zero(); w_count];
    seed[keyword] = S::one();
    tape.backward_seeded(probs, &seed)?;
    let dh = tape.grad_or_zeros(h);
    let h_vals = Tensor::new(tape.shape(h).to_vec(), tape.value(h).to_vec())?;
    let mut map = gradcam_from_grads(&h_vals, &dh)?;
    map.keyword = keyword;
    map.frame_map = model.frame_map(x.shape()[0]);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvSpec, ModelConfig};
    use crate::numerics;
    use crate::vocab::Vocabulary;

    fn pool_model(seed: u64) -> KeywordModel<f64> {
        let mut cfg = ModelConfig::desk(ModelVariant::CnnPool, 3, 4);
        cfg.conv = vec![ConvSpec::pooled(5, 3, 3), ConvSpec::new(6, 3)];
        cfg.head_hidden = 7;
        let vocab =
            Vocabulary::new((0..4).map(|i| format!("kw{i}")).collect(), vec![]).unwrap();
        KeywordModel::init(cfg, vocab, seed).unwrap()
    }

    fn random_input(t: usize, f: usize, seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![t, f],
            (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_pool_variants() {
        let cfg = ModelConfig::desk(ModelVariant::Psc, 3, 4);
        let vocab =
            Vocabulary::new((0..4).map(|i| format!("kw{i}")).collect(), vec![]).unwrap();
        let psc: KeywordModel<f64> = KeywordModel::init(cfg, vocab, 1).unwrap();
        assert!(gradcam(&psc, &random_input(12, 3, 0), 0).is_err());
    }

    #[test]
    fn constructed_mean_network_gives_uniform_gamma() {
        // ŷ = sigmoid(time-mean of column 1 of h): γ_1 = σ'(z)/T uniform over
        // filters' gradient, so α_t ∝ ReLU(h_{t,1}).
        use rand::{Rng, SeedableRng};
        let (t, k) = (6, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h_data: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = Tensor::new(vec![t, k], h_data.clone()).unwrap();

        let mut tape = Tape::<f64>::new();
        let hb = tape.input(&h);
        let e1 = tape.input_slice(&[0.0, 1.0, 0.0], vec![3]);
        let col = tape.dot_rows(hb, e1).unwrap();
        let total = tape.sum(col).unwrap();
        let mean = tape.scale(total, 1.0 / t as f64).unwrap();
        let y = tape.sigmoid(mean).unwrap();
        tape.backward(y).unwrap();

        let z = tape.value(mean)[0];
        let sig = numerics::sigmoid(z);
        let expect_gamma1 = sig * (1.0 - sig) / t as f64;

        let map = gradcam_from_grads(&h, &tape.grad_or_zeros(hb)).unwrap();
        assert!((map.filter_weights[1] - expect_gamma1).abs() < 1e-12);
        assert!(map.filter_weights[0].abs() < 1e-12);
        assert!(map.filter_weights[2].abs() < 1e-12);
        for (row, a) in map.frame_scores.iter().enumerate() {
            let want = (expect_gamma1 * h_data[row * k + 1]).max(0.0);
            assert!((a - want).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_activations_with_positive_gamma_zero_out() {
        let h: Tensor<f64> = Tensor::new(vec![2, 2], vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
        // gradient constant positive -> gamma positive
        let map = gradcam_from_grads(&h, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(map.frame_scores.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn zero_gradient_filters_contribute_nothing() {
        let h: Tensor<f64> = Tensor::new(vec![2, 2], vec![5.0, 100.0, 3.0, -100.0]).unwrap();
        // only filter 0 has gradient
        let map = gradcam_from_grads(&h, &[0.5, 0.0, 0.5, 0.0]).unwrap();
        assert_eq!(map.filter_weights[1], 0.0);
        assert!((map.frame_scores[0] - 0.5 * 5.0).abs() < 1e-12);
        assert!((map.frame_scores[1] - 0.5 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_calls() {
        let model = pool_model(3);
        let x = random_input(18, 3, 7);
        let a = gradcam(&model, &x, 2).unwrap();
        let b = gradcam(&model, &x, 2).unwrap();
        assert_eq!(a.frame_scores, b.frame_scores);
        assert_eq!(a.filter_weights, b.filter_weights);
        assert!(a.frame_scores.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn scaling_head_weights_preserves_argmax() {
        let model = pool_model(11);
        let x = random_input(20, 3, 2);
        let base = gradcam(&model, &x, 1).unwrap();

        let mut scaled = model.clone();
        {
            let head = scaled.head.as_mut().unwrap();
            let data = head.out_w.data_mut();
            for v in data.iter_mut() {
                *v *= 3.0;
            }
        }
        let after = gradcam(&scaled, &x, 1).unwrap();
        let am_base = crate::numerics::argmax_first(&base.frame_scores);
        let am_after = crate::numerics::argmax_first(&after.frame_scores);
        assert_eq!(am_base, am_after);
        // common positive factor between the two gamma vectors
        let ratios: Vec<f64> = base
            .filter_weights
            .iter()
            .zip(after.filter_weights.iter())
            .filter(|(b, _)| b.abs() > 1e-12)
            .map(|(b, a)| a / b)
            .collect();
        assert!(!ratios.is_empty());
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-6);
            assert!(*r > 0.0);
        }
    }

    #[test]
    fn single_trunk_frame_localises_to_frame_zero() {
        let mut cfg = ModelConfig::desk(ModelVariant::CnnPool, 3, 4);
        cfg.conv = vec![ConvSpec::pooled(5, 3, 4), ConvSpec::pooled(6, 3, 2)];
        cfg.head_hidden = 7;
        let vocab =
            Vocabulary::new((0..4).map(|i| format!("kw{i}")).collect(), vec![]).unwrap();
        let model: KeywordModel<f64> = KeywordModel::init(cfg, vocab, 1).unwrap();
        let x = random_input(5, 3, 1); // ceil(5/4)=2, ceil(2/2)=1 trunk frame
        let map = gradcam(&model, &x, 0).unwrap();
        assert_eq!(map.frame_scores.len(), 1);
        assert_eq!(crate::numerics::argmax_first(&map.frame_scores), 0);
    }
}
