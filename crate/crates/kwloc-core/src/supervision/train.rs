//! Deterministic Adam training loop. Attention variants sum single-keyword
//! losses over queried keywords per utterance; psc / cnn-pool use the
//! multi-label loss directly. Batches reduce by mean over utterances, the
//! checkpoint with the best dev detection F1 wins, and identical
//! (seed, config, corpus) triples produce bit-identical parameters.

use crate::corpus::Utterance;
use crate::error::{CoreError, Result};
use crate::eval::{detection_from_pairs, evaluate_pairs, localisation_from_pairs};
use crate::model::KeywordModel;
use crate::scalar::Scalar;
use crate::supervision::{Adam, SupervisionKind};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which keywords each utterance queries when training attention variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeywordSampling {
    /// Every keyword, every utterance.
    All,
    /// All positives plus `per_positive` sampled negatives each.
    Negatives { per_positive: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub detection_f1: f64,
    pub localisation_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Detection threshold used for per-epoch dev metrics and checkpoint
    /// selection.
    pub theta: f64,
    pub sampling: KeywordSampling,
    /// Stop once both dev F1 values reach these levels.
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 25,
            seed: 0,
            theta: 0.4,
            sampling: KeywordSampling::All,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(CoreError::invalid("learning rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(CoreError::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(CoreError::invalid("theta must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_detection: (f64, f64, f64),
    pub dev_localisation: (f64, f64, f64),
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the model ends with (best dev detection F1).
    pub best_epoch: Option<usize>,
    /// How many times each target vector was read during loss computation.
    pub bow_reads: u64,
    pub vis_reads: u64,
}

impl TrainReport {
    /// CSV with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,dev_detection_precision,dev_detection_recall,dev_detection_f1,\
             dev_localisation_precision,dev_localisation_recall,dev_localisation_f1,wall_seconds\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3}\n",
                e.epoch,
                e.train_loss,
                e.dev_detection.0,
                e.dev_detection.1,
                e.dev_detection.2,
                e.dev_localisation.0,
                e.dev_localisation.1,
                e.dev_localisation.2,
                e.wall_seconds,
            ));
        }
        out
    }
}

fn targets_of<S: Scalar>(
    utt: &Utterance<S>,
    kind: SupervisionKind,
    bow_reads: &mut u64,
    vis_reads: &mut u64,
) -> Vec<S> {
    match kind {
        SupervisionKind::Bow => {
            *bow_reads += 1;
            utt.bow
                .iter()
                .map(|&b| if b { S::one() } else { S::zero() })
                .collect()
        }
        SupervisionKind::Visual => {
            *vis_reads += 1;
            utt.vis.clone()
        }
    }
}

/// Keywords to query for one utterance under the sampling policy. Positives
/// are judged from the target vector itself (≥ 0.5) so the policy never
/// touches labels the supervision kind does not permit.
fn queried_keywords<S: Scalar>(
    targets: &[S],
    sampling: KeywordSampling,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match sampling {
        KeywordSampling::All => (0..targets.len()).collect(),
        KeywordSampling::Negatives { per_positive } => {
            let half = S::from_f64(0.5);
            let positives: Vec<usize> = (0..targets.len())
                .filter(|&w| targets[w] >= half)
                .collect();
            let negatives: Vec<usize> = (0..targets.len())
                .filter(|&w| targets[w] < half)
                .collect();
            let mut chosen = positives.clone();
            let want = per_positive * positives.len().max(1);
            for _ in 0..want.min(negatives.len()) {
                chosen.push(negatives[rng.gen_range(0..negatives.len())]);
            }
            chosen.sort_unstable();
            chosen.dedup();
            chosen
        }
    }
}

/// Train in place; the model ends at the checkpoint with the best dev
/// detection F1 (at `config.theta`), or at the final epoch when the dev set
/// is empty.
pub fn train<S: Scalar>(
    model: &mut KeywordModel<S>,
    train_set: &[Utterance<S>],
    dev_set: &[Utterance<S>],
    kind: SupervisionKind,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let w_count = model.keyword_count();
    for utt in train_set.iter().chain(dev_set.iter()) {
        if utt.bow.len() != w_count || utt.vis.len() != w_count {
            return Err(CoreError::VocabMismatch(format!(
                "utterance {} has {} targets, model has {w_count} keywords",
                utt.id,
                utt.bow.len()
            )));
        }
    }

    let param_sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
    let mut optimizer: Adam<S> = Adam::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        &param_sizes,
    );

    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, Vec<Tensor<S>>)> = None;
    let use_attention = model.config.variant.uses_attention();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut tape: Tape<S> = Tape::new();
            let bound = model.bind(&mut tape);
            let mut total: Option<usize> = None;
            for &idx in batch {
                let utt = &train_set[idx];
                let targets =
                    targets_of(utt, kind, &mut report.bow_reads, &mut report.vis_reads);
                let x = tape.input(&utt.features);
                let h = model.trunk_graph(&mut tape, &bound, x)?;
                let utt_loss = if use_attention {
                    let queried = queried_keywords(&targets, config.sampling, &mut rng);
                    let mut acc: Option<usize> = None;
                    for w in queried {
                        let (_, _, _, prob) = model.attention_graph(&mut tape, &bound, h, w)?;
                        let term = tape.bce(prob, &targets[w..=w])?;
                        acc = Some(match acc {
                            Some(a) => tape.add(a, term)?,
                            None => term,
                        });
                    }
                    match acc {
                        Some(a) => a,
                        None => continue,
                    }
                } else {
                    let probs = match model.config.variant {
                        crate::model::ModelVariant::Psc => model.psc_graph(&mut tape, h)?.1,
                        _ => model.cnnpool_graph(&mut tape, &bound, h)?,
                    };
                    tape.bce(probs, &targets)?
                };
                total = Some(match total {
                    Some(t) => tape.add(t, utt_loss)?,
                    None => utt_loss,
                });
            }
            let Some(total) = total else { continue };
            let batch_loss = tape.scale(total, S::from_f64(1.0 / batch.len() as f64))?;
            let loss_val = tape.scalar_value(batch_loss).as_f64();
            if !loss_val.is_finite() {
                return Err(CoreError::Divergence(format!(
                    "non-finite loss {loss_val} at epoch {epoch}"
                )));
            }
            loss_sum += loss_val * batch.len() as f64;
            loss_count += batch.len();
            tape.backward(batch_loss)?;
            let grads: Vec<Vec<S>> = bound
                .param_ids()
                .iter()
                .map(|&id| tape.grad_or_zeros(id))
                .collect();
            optimizer.step(&mut model.params_mut(), &grads);
        }

        let train_loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            0.0
        };

        let (det, loc) = if dev_set.is_empty() {
            Default::default()
        } else {
            let pairs = evaluate_pairs(model, dev_set, &model.vocab)?;
            let det = detection_from_pairs(&pairs, config.theta);
            let loc = localisation_from_pairs(&pairs, config.theta);
            (
                (det.precision, det.recall, det.f1),
                (loc.precision, loc.recall, loc.f1),
            )
        };

        report.epochs.push(EpochLog {
            epoch,
            train_loss,
            dev_detection: det,
            dev_localisation: loc,
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        if !dev_set.is_empty() {
            let improved = match &best {
                Some((f1, _, _)) => det.2 > *f1,
                None => true,
            };
            if improved {
                let snapshot: Vec<Tensor<S>> = model
                    .named_params()
                    .iter()
                    .map(|(_, t)| (*t).clone())
                    .collect();
                best = Some((det.2, epoch, snapshot));
            }
        }

        if let Some(stop) = config.early_stop {
            if det.2 >= stop.detection_f1 && loc.2 >= stop.localisation_f1 {
                break;
            }
        }
    }

    if let Some((_, epoch, snapshot)) = best {
        for (param, saved) in model.params_mut().into_iter().zip(snapshot.into_iter()) {
            *param = saved;
        }
        report.best_epoch = Some(epoch);
    }
    Ok(report)
}
