//! Detection and localisation metrics over (utterance, keyword) pairs,
//! threshold tuning, and the four-way error taxonomy.
//!
//! Conventions: a pair is predicted positive iff its score ≥ θ. Recall counts
//! keyword presence once per utterance. Precision is defined as 0 when there
//! are no proposals. An undetected positive counts against recall even if the
//! relevance curve peaked inside the right span.

use crate::corpus::{ground_truth_spans, Utterance};
use crate::error::{CoreError, Result};
use crate::model::{FrameMap, KeywordModel, ScoredLocalisation};

use crate::scalar::Scalar;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Detection,
    Localisation,
}

impl EvalTask {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalTask::Detection => "detection",
            EvalTask::Localisation => "localisation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(EvalTask::Detection),
            "localisation" => Ok(EvalTask::Localisation),
            other => Err(CoreError::invalid(format!(
                "unknown task '{other}' (expected detection | localisation)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    NoProposal,
    Correct,
    Incorrect,
    SemanticSingle,
    SemanticMulti,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::NoProposal => "no-proposal",
            Category::Correct => "correct",
            Category::Incorrect => "incorrect",
            Category::SemanticSingle => "semantic-single",
            Category::SemanticMulti => "semantic-multi",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalisationOutcome {
    pub utterance: String,
    pub keyword: usize,
    pub score: f64,
    pub frame: Option<usize>,
    pub category: Category,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: EvalTask,
    pub theta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub proposals: usize,
    pub positives: usize,
}

fn prf(tp: usize, proposals: usize, positives: usize) -> (f64, f64, f64) {
    let p = if proposals > 0 {
        tp as f64 / proposals as f64
    } else {
        0.0
    };
    let r = if positives > 0 {
        tp as f64 / positives as f64
    } else {
        0.0
    };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Per-(utterance, keyword) evaluation facts, independent of θ: the gate is
/// `score ≥ θ` and the proposed frame does not depend on θ, so one pass
/// serves every threshold.
#[derive(Clone, Debug)]
pub struct PairOutcome {
    pub utterance: usize,
    pub keyword: usize,
    pub score: f64,
    pub positive: bool,
    pub frame: usize,
    pub in_span: bool,
}

/// Anything that scores and localises every keyword of an utterance.
pub trait UtteranceScorer<S: Scalar> {
    fn keyword_count(&self) -> usize;
    fn score_localise(&self, utterance: &Utterance<S>) -> Result<Vec<ScoredLocalisation<S>>>;
    /// Detection-only fast path.
    fn scores(&self, utterance: &Utterance<S>) -> Result<Vec<S>> {
        Ok(self
            .score_localise(utterance)?
            .into_iter()
            .map(|s| s.score)
            .collect())
    }
}

impl<S: Scalar> UtteranceScorer<S> for KeywordModel<S> {
    fn keyword_count(&self) -> usize {
        KeywordModel::keyword_count(self)
    }

    fn score_localise(&self, utterance: &Utterance<S>) -> Result<Vec<ScoredLocalisation<S>>> {
        self.localise_all_raw(&utterance.features)
    }

    fn scores(&self, utterance: &Utterance<S>) -> Result<Vec<S>> {
        self.detection_scores(&utterance.features)
    }
}

/// Ground-truth scorer for harness checks: score 1 where the keyword occurs,
/// 0 elsewhere, localised to the middle of the first true span.
pub struct OracleScorer {
    pub vocab: Vocabulary,
}

impl<S: Scalar> UtteranceScorer<S> for OracleScorer {
    fn keyword_count(&self) -> usize {
        self.vocab.len()
    }

    fn score_localise(&self, utterance: &Utterance<S>) -> Result<Vec<ScoredLocalisation<S>>> {
        let t = utterance.frames();
        let map = FrameMap {
            scale: 1,
            offset: 0,
            input_len: t,
        };
        (0..self.vocab.len())
            .map(|k| {
                let spans = ground_truth_spans(utterance, &self.vocab, k)?;
                let (score, frame) = match spans.first() {
                    Some(&(start, end)) => (S::one(), (start + end) / 2),
                    None => (S::zero(), 0),
                };
                let mut curve = vec![S::zero(); t];
                curve[frame] = S::one();
                Ok(ScoredLocalisation {
                    score,
                    frame,
                    curve,
                    frame_map: map,
                })
            })
            .collect()
    }
}

/// Evaluate every (utterance, keyword) pair once.
pub fn evaluate_pairs<S: Scalar>(
    scorer: &impl UtteranceScorer<S>,
    utterances: &[Utterance<S>],
    vocab: &Vocabulary,
) -> Result<Vec<PairOutcome>> {
    if utterances.is_empty() {
        return Err(CoreError::invalid("empty corpus"));
    }
    let mut out = Vec::with_capacity(utterances.len() * scorer.keyword_count());
    for (u, utt) in utterances.iter().enumerate() {
        let results = scorer.score_localise(utt)?;
        for (k, r) in results.into_iter().enumerate() {
            let spans = ground_truth_spans(utt, vocab, k)?;
            let in_span = spans.iter().any(|&(s, e)| r.frame >= s && r.frame <= e);
            out.push(PairOutcome {
                utterance: u,
                keyword: k,
                score: r.score.as_f64(),
                positive: utt.bow[k],
                frame: r.frame,
                in_span,
            });
        }
    }
    Ok(out)
}

/// Detection metrics from precomputed pairs.
pub fn detection_from_pairs(pairs: &[PairOutcome], theta: f64) -> MetricsReport {
    let mut tp = 0;
    let mut proposals = 0;
    let mut positives = 0;
    for p in pairs {
        if p.positive {
            positives += 1;
        }
        if p.score >= theta {
            proposals += 1;
            if p.positive {
                tp += 1;
            }
        }
    }
    let (precision, recall, f1) = prf(tp, proposals, positives);
    MetricsReport {
        task: EvalTask::Detection,
        theta,
        precision,
        recall,
        f1,
        true_positives: tp,
        proposals,
        positives,
    }
}

/// Localisation metrics from precomputed pairs: a proposal is correct iff its
/// frame falls inside a true span of the keyword.
pub fn localisation_from_pairs(pairs: &[PairOutcome], theta: f64) -> MetricsReport {
    let mut tp = 0;
    let mut proposals = 0;
    let mut positives = 0;
    for p in pairs {
        if p.positive {
            positives += 1;
        }
        if p.score >= theta {
            proposals += 1;
            if p.in_span {
                tp += 1;
            }
        }
    }
    let (precision, recall, f1) = prf(tp, proposals, positives);
    MetricsReport {
        task: EvalTask::Localisation,
        theta,
        precision,
        recall,
        f1,
        true_positives: tp,
        proposals,
        positives,
    }
}

pub fn metrics_from_pairs(pairs: &[PairOutcome], theta: f64) -> (MetricsReport, MetricsReport) {
    (
        detection_from_pairs(pairs, theta),
        localisation_from_pairs(pairs, theta),
    )
}

/// Detection P/R/F1 over all (utterance, keyword) pairs at threshold θ.
pub fn detection_metrics<S: Scalar>(
    scorer: &impl UtteranceScorer<S>,
    utterances: &[Utterance<S>],
    vocab: &Vocabulary,
    theta: f64,
) -> Result<MetricsReport> {
    check_theta(theta)?;
    if utterances.is_empty() {
        return Err(CoreError::invalid("empty corpus"));
    }
    // Fast path: scores only.
    let mut tp = 0;
    let mut proposals = 0;
    let mut positives = 0;
    for utt in utterances {
        let scores = scorer.scores(utt)?;
        if scores.len() != vocab.len() {
            return Err(CoreError::VocabMismatch(format!(
                "scorer produced {} scores for {} keywords",
                scores.len(),
                vocab.len()
            )));
        }
        for (k, s) in scores.iter().enumerate() {
            if utt.bow[k] {
                positives += 1;
            }
            if s.as_f64() >= theta {
                proposals += 1;
                if utt.bow[k] {
                    tp += 1;
                }
            }
        }
    }
    let (precision, recall, f1) = prf(tp, proposals, positives);
    Ok(MetricsReport {
        task: EvalTask::Detection,
        theta,
        precision,
        recall,
        f1,
        true_positives: tp,
        proposals,
        positives,
    })
}

/// Localisation P/R/F1 over all pairs at threshold θ.
pub fn localisation_metrics<S: Scalar>(
    scorer: &impl UtteranceScorer<S>,
    utterances: &[Utterance<S>],
    vocab: &Vocabulary,
    theta: f64,
) -> Result<MetricsReport> {
    check_theta(theta)?;
    let pairs = evaluate_pairs(scorer, utterances, vocab)?;
    Ok(localisation_from_pairs(&pairs, theta))
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(CoreError::invalid(format!("theta {theta} outside [0, 1]")));
    }
    Ok(())
}

/// 0.00, 0.05, …, 1.00.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

/// θ from `grid` maximizing F1 for the task on the given data; ties resolve
/// to the smallest θ.
pub fn tune_threshold<S: Scalar>(
    scorer: &impl UtteranceScorer<S>,
    utterances: &[Utterance<S>],
    vocab: &Vocabulary,
    task: EvalTask,
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(CoreError::invalid("threshold grid is empty"));
    }
    for &g in grid {
        check_theta(g)?;
    }
    let pairs = evaluate_pairs(scorer, utterances, vocab)?;
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &theta in grid {
        let report = match task {
            EvalTask::Detection => detection_from_pairs(&pairs, theta),
            EvalTask::Localisation => localisation_from_pairs(&pairs, theta),
        };
        if report.f1 > best.0 || (report.f1 == best.0 && theta < best.1) {
            best = (report.f1, theta);
        }
    }
    Ok(best.1)
}

// ── Error taxonomy ──────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub correct: usize,
    pub incorrect: usize,
    pub semantic_single: usize,
    pub semantic_multi: usize,
    pub no_proposal: usize,
}

impl CategoryCounts {
    pub fn proposals(&self) -> usize {
        self.correct + self.incorrect + self.semantic_single + self.semantic_multi
    }
}

/// Normalize a relevance curve into a distribution over trunk frames:
/// negatives clamp to zero, then the total scales to 1 (uniform if all zero).
fn normalize_curve<S: Scalar>(curve: &[S]) -> Vec<f64> {
    let clamped: Vec<f64> = curve.iter().map(|v| v.as_f64().max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.into_iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / curve.len() as f64; curve.len()]
    }
}

/// Relevance mass landing inside an inclusive input-frame interval.
fn mass_in_span(curve: &[f64], map: FrameMap, start: usize, end: usize) -> f64 {
    curve
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let f = map.input_frame(*i);
            f >= start && f <= end
        })
        .map(|(_, &v)| v)
        .sum()
}

/// Assign one category to a gated localisation:
/// - frame inside a true span of the keyword → correct;
/// - frame inside a semantic sibling's span → semantic-single when at least
///   `mass_threshold` of the relevance mass sits in that span, otherwise
///   semantic-multi (mass spread across other spans);
/// - frame anywhere else → incorrect.
/// Sibling judgements need the relevance curve; a missing curve is an error.
pub fn categorise<S: Scalar>(
    utterance: &Utterance<S>,
    vocab: &Vocabulary,
    keyword: usize,
    frame: usize,
    curve: Option<(&[S], FrameMap)>,
    mass_threshold: f64,
) -> Result<Category> {
    let spans = ground_truth_spans(utterance, vocab, keyword)?;
    if spans.iter().any(|&(s, e)| frame >= s && frame <= e) {
        return Ok(Category::Correct);
    }
    let landed = utterance
        .spans
        .iter()
        .find(|s| frame >= s.start && frame <= s.end)
        .ok_or_else(|| {
            CoreError::invalid(format!(
                "frame {frame} outside utterance {} ({} frames)",
                utterance.id,
                utterance.frames()
            ))
        })?;
    if !vocab.is_sibling(&landed.word, keyword) {
        return Ok(Category::Incorrect);
    }
    let (curve, map) = curve.ok_or_else(|| {
        CoreError::invalid(format!(
            "outcome for keyword {keyword} in {} needs a relevance trace to categorise",
            utterance.id
        ))
    })?;
    let dist = normalize_curve(curve);
    let mass = mass_in_span(&dist, map, landed.start, landed.end);
    if mass >= mass_threshold {
        Ok(Category::SemanticSingle)
    } else {
        Ok(Category::SemanticMulti)
    }
}

/// Gate, localise, and categorise every pair of a corpus.
pub fn localisation_outcomes<S: Scalar>(
    scorer: &impl UtteranceScorer<S>,
    utterances: &[Utterance<S>],
    vocab: &Vocabulary,
    theta: f64,
    mass_threshold: f64,
) -> Result<Vec<LocalisationOutcome>> {
    check_theta(theta)?;
    if utterances.is_empty() {
        return Err(CoreError::invalid("empty corpus"));
    }
    let mut out = Vec::new();
    for utt in utterances {
        let results = scorer.score_localise(utt)?;
        for (k, r) in results.into_iter().enumerate() {
            let score = r.score.as_f64();
            let (frame, category) = if score >= theta {
                let cat = categorise(
                    utt,
                    vocab,
                    k,
                    r.frame,
                    Some((&r.curve, r.frame_map)),
                    mass_threshold,
                )?;
                (Some(r.frame), cat)
            } else {
                (None, Category::NoProposal)
            };
            out.push(LocalisationOutcome {
                utterance: utt.id.clone(),
                keyword: k,
                score,
                frame,
                category,
            });
        }
    }
    Ok(out)
}

/// Tally outcomes into the four proposal categories (plus the no-proposal
/// count, which affects recall only).
pub fn categorise_errors(outcomes: &[LocalisationOutcome]) -> CategoryCounts {
    let mut counts = CategoryCounts::default();
    for o in outcomes {
        match o.category {
            Category::NoProposal => counts.no_proposal += 1,
            Category::Correct => counts.correct += 1,
            Category::Incorrect => counts.incorrect += 1,
            Category::SemanticSingle => counts.semantic_single += 1,
            Category::SemanticMulti => counts.semantic_multi += 1,
        }
    }
    counts
}
