//! Simulated multi-label visual tagger. Real pipelines obtain soft keyword
//! scores by running a paired image through an image classifier; here the
//! scores are drawn from Beta distributions conditioned on whether the
//! keyword (or a semantically related word) occurs in the utterance.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualNoiseConfig {
    /// Beta(a, b) for keywords present in the utterance.
    pub present: (f64, f64),
    /// Beta(a, b) for absent keywords with no related word present.
    pub absent: (f64, f64),
    /// Beta(a, b) for absent keywords whose semantic sibling is present —
    /// the tagger's characteristic confusion.
    pub confusable: (f64, f64),
    /// Skip sampling entirely: scores equal the hard labels.
    pub noiseless: bool,
}

impl Default for VisualNoiseConfig {
    fn default() -> Self {
        VisualNoiseConfig {
            present: (8.0, 2.0),
            absent: (1.0, 12.0),
            confusable: (3.0, 3.0),
            noiseless: false,
        }
    }
}

impl VisualNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (a, b)) in [
            ("present", self.present),
            ("absent", self.absent),
            ("confusable", self.confusable),
        ] {
            if a <= 0.0 || b <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "visual noise '{name}': Beta parameters must be positive, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }
}

/// Soft tagger scores for one utterance. `bow[w]` marks keyword presence;
/// `sibling_present[w]` marks an absent keyword with a semantic-group member
/// in the utterance. One draw per keyword, in index order.
pub fn simulate_visual_tagger<S: Scalar, R: Rng>(
    bow: &[bool],
    sibling_present: &[bool],
    config: &VisualNoiseConfig,
    rng: &mut R,
) -> Vec<S> {
    debug_assert_eq!(bow.len(), sibling_present.len());
    if config.noiseless {
        return bow
            .iter()
            .map(|&b| if b { S::one() } else { S::zero() })
            .collect();
    }
    let present = Beta::new(config.present.0, config.present.1).expect("validated");
    let absent = Beta::new(config.absent.0, config.absent.1).expect("validated");
    let confusable = Beta::new(config.confusable.0, config.confusable.1).expect("validated");
    bow.iter()
        .zip(sibling_present.iter())
        .map(|(&b, &sib)| {
            let draw = if b {
                present.sample(rng)
            } else if sib {
                confusable.sample(rng)
            } else {
                absent.sample(rng)
            };
            S::from_f64(draw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_equals_hard_labels() {
        let cfg = VisualNoiseConfig {
            noiseless: true,
            ..VisualNoiseConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bow = [true, false, true, false];
        let sib = [false, true, false, false];
        let vis: Vec<f32> = simulate_visual_tagger(&bow, &sib, &cfg, &mut rng);
        assert_eq!(vis, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn absent_scores_stay_low() {
        let cfg = VisualNoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bow = vec![false; 10_000];
        let sib = vec![false; 10_000];
        let vis: Vec<f64> = simulate_visual_tagger(&bow, &sib, &cfg, &mut rng);
        let below = vis.iter().filter(|&&v| v < 0.5).count();
        // P(v >= 0.5) = 0.5^12 under Beta(1,12), so essentially all below.
        assert!(below as f64 / vis.len() as f64 >= 0.995, "below = {below}");
    }

    #[test]
    fn present_mean_matches_beta_mean() {
        let cfg = VisualNoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bow = vec![true; 10_000];
        let sib = vec![false; 10_000];
        let vis: Vec<f64> = simulate_visual_tagger(&bow, &sib, &cfg, &mut rng);
        let mean: f64 = vis.iter().sum::<f64>() / vis.len() as f64;
        assert!((mean - 0.8).abs() < 0.02, "mean = {mean}"); // a/(a+b) = 0.8
    }

    #[test]
    fn confusable_scores_sit_between() {
        let cfg = VisualNoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bow = vec![false; 10_000];
        let sib = vec![true; 10_000];
        let vis: Vec<f64> = simulate_visual_tagger(&bow, &sib, &cfg, &mut rng);
        let mean: f64 = vis.iter().sum::<f64>() / vis.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean = {mean}"); // Beta(3,3) mean
    }

    #[test]
    fn invalid_beta_rejected() {
        let cfg = VisualNoiseConfig {
            present: (0.0, 2.0),
            ..VisualNoiseConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
