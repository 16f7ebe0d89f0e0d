//! Deterministic synthetic spoken-caption corpus. Each word has a fixed
//! random prototype pattern; utterances concatenate word prototypes and add
//! Gaussian noise, so every word span is known exactly. The feature matrices
//! stand in for acoustic frame features at a configurable dimension.

pub mod io;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::supervision::visual::{simulate_visual_tagger, VisualNoiseConfig};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Ground-truth word span, frames inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct Utterance<S> {
    pub id: String,
    pub features: Tensor<S>,
    pub spans: Vec<Span>,
    /// Keyword presence indicator, length W.
    pub bow: Vec<bool>,
    /// Soft visual-tagger scores, length W.
    pub vis: Vec<S>,
}

impl<S: Scalar> Utterance<S> {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

/// All maximal spans of `utterance` whose word maps to keyword `keyword`,
/// in increasing frame order.
pub fn ground_truth_spans<S: Scalar>(
    utterance: &Utterance<S>,
    vocab: &Vocabulary,
    keyword: usize,
) -> Result<Vec<(usize, usize)>> {
    let kw = vocab.keyword(keyword)?;
    Ok(utterance
        .spans
        .iter()
        .filter(|s| s.word == kw)
        .map(|s| (s.start, s.end))
        .collect())
}

#[derive(Clone, Debug)]
pub struct WordPrototype<S> {
    pub word: String,
    pub duration: usize,
    pub pattern: Tensor<S>, // [duration, feature_dim]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Total distinct words.
    pub vocab_size: usize,
    /// Leading subset of words that are supervised keywords.
    pub keyword_count: usize,
    /// Number of semantic groups pairing keywords with related words.
    pub semantic_groups: usize,
    pub feature_dim: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub noise_sigma: f64,
    pub train_count: usize,
    pub dev_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub visual_noise: VisualNoiseConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_size: 100,
            keyword_count: 20,
            semantic_groups: 6,
            feature_dim: 13,
            words_min: 4,
            words_max: 10,
            duration_min: 5,
            duration_max: 15,
            noise_sigma: 0.3,
            train_count: 2000,
            dev_count: 400,
            test_count: 400,
            seed: 17,
            visual_noise: VisualNoiseConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyword_count == 0 || self.keyword_count > self.vocab_size {
            return Err(CoreError::invalid(format!(
                "keyword_count {} must be in 1..=vocab_size {}",
                self.keyword_count, self.vocab_size
            )));
        }
        if self.words_min == 0 || self.words_min > self.words_max {
            return Err(CoreError::invalid("words_min must be in 1..=words_max"));
        }
        if self.duration_min == 0 || self.duration_min > self.duration_max {
            return Err(CoreError::invalid("duration_min must be in 1..=duration_max"));
        }
        if self.feature_dim == 0 {
            return Err(CoreError::invalid("feature_dim must be >= 1"));
        }
        if self.noise_sigma < 0.0 {
            return Err(CoreError::invalid("noise_sigma must be >= 0"));
        }
        self.visual_noise.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus<S> {
    pub config: CorpusConfig,
    pub vocab: Vocabulary,
    pub prototypes: Vec<WordPrototype<S>>,
    pub train: Vec<Utterance<S>>,
    pub dev: Vec<Utterance<S>>,
    pub test: Vec<Utterance<S>>,
}

impl<S> SynthCorpus<S> {
    pub fn split(&self, name: &str) -> Result<&[Utterance<S>]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(CoreError::invalid(format!(
                "unknown split '{other}' (expected train | dev | test)"
            ))),
        }
    }
}

// A pool of word surface forms; configs larger than the pool fall back to
// generated names.
const WORD_POOL: &[&str] = &[
    "water", "swim", "ride", "snow", "dog", "ball", "climb", "jump", "grass", "beach",
    "boat", "bike", "run", "smile", "rock", "street", "wave", "girl", "boy", "camera",
    "backstroke", "paddle", "rowboat", "saddle", "gallop", "sled", "frost", "puppy", "leash",
    "bounce", "goal", "ledge", "summit", "hurdle", "leap", "meadow", "lawn", "sand", "shore",
    "canoe", "sail", "pedal", "helmet", "sprint", "jog", "grin", "laugh", "boulder", "cliff",
    "alley", "road", "surf", "tide", "braid", "dress", "cap", "lens", "tripod", "flash",
    "table", "chair", "window", "door", "tree", "cloud", "river", "bridge", "tower", "field",
    "horse", "bird", "fish", "coat", "scarf", "glove", "bench", "fence", "garden", "market",
    "train", "plane", "truck", "wheel", "engine", "station", "tunnel", "light", "shadow",
    "corner", "crowd", "player", "jersey", "racket", "net", "court", "stage", "guitar",
    "drum", "piano", "singer", "dancer", "jacket", "boot", "ladder", "roof", "brick", "paint",
];

fn word_name(index: usize) -> String {
    WORD_POOL
        .get(index)
        .map(|w| w.to_string())
        .unwrap_or_else(|| format!("word{index:03}"))
}

/// Keywords are the first W words; each semantic group joins one keyword with
/// one or two of the following non-keyword words (alternating 3- and 2-word
/// groups).
pub fn build_vocabulary(config: &CorpusConfig) -> Result<Vocabulary> {
    let keywords: Vec<String> = (0..config.keyword_count).map(word_name).collect();
    let mut groups = Vec::new();
    let mut next_nonkw = config.keyword_count;
    for g in 0..config.semantic_groups {
        if g >= config.keyword_count {
            break;
        }
        let extras = if g % 2 == 0 { 2 } else { 1 };
        if next_nonkw + extras > config.vocab_size {
            break;
        }
        let mut members = vec![word_name(g)];
        for _ in 0..extras {
            members.push(word_name(next_nonkw));
            next_nonkw += 1;
        }
        groups.push(members);
    }
    Vocabulary::new(keywords, groups)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one utterance: a fixed mix of the corpus seed, the split, and the
/// utterance index, so per-utterance generation is order-independent.
fn utterance_seed(corpus_seed: u64, split: u64, index: usize) -> u64 {
    splitmix64(splitmix64(corpus_seed ^ splitmix64(split + 1)) ^ index as u64)
}

fn generate_prototypes<S: Scalar>(config: &CorpusConfig) -> Vec<WordPrototype<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed));
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    (0..config.vocab_size)
        .map(|i| {
            let duration = rng.gen_range(config.duration_min..=config.duration_max);
            let data: Vec<S> = (0..duration * config.feature_dim)
                .map(|_| S::from_f64(normal.sample(&mut rng)))
                .collect();
            WordPrototype {
                word: word_name(i),
                duration,
                pattern: Tensor::new(vec![duration, config.feature_dim], data)
                    .expect("prototype shape"),
            }
        })
        .collect()
}

fn synthesize_utterance<S: Scalar>(
    config: &CorpusConfig,
    vocab: &Vocabulary,
    prototypes: &[WordPrototype<S>],
    id: String,
    seed: u64,
) -> Utterance<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_words = rng.gen_range(config.words_min..=config.words_max);
    let word_ids: Vec<usize> = (0..n_words)
        .map(|_| rng.gen_range(0..config.vocab_size))
        .collect();

    let f = config.feature_dim;
    let total: usize = word_ids.iter().map(|&w| prototypes[w].duration).sum();
    let mut data = Vec::with_capacity(total * f);
    let mut spans = Vec::with_capacity(n_words);
    let mut cursor = 0usize;
    for &w in &word_ids {
        let proto = &prototypes[w];
        data.extend_from_slice(proto.pattern.data());
        spans.push(Span {
            word: proto.word.clone(),
            start: cursor,
            end: cursor + proto.duration - 1,
        });
        cursor += proto.duration;
    }
    if config.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f64, config.noise_sigma).expect("noise sigma >= 0");
        for v in data.iter_mut() {
            *v += S::from_f64(noise.sample(&mut rng));
        }
    }

    let w_count = vocab.len();
    let mut bow = vec![false; w_count];
    for span in &spans {
        if let Some(k) = vocab.keyword_index(&span.word) {
            bow[k] = true;
        }
    }
    // A keyword counts as visually confusable when some other word of its
    // semantic group occurs in the utterance.
    let mut sibling_present = vec![false; w_count];
    for (k, flag) in sibling_present.iter_mut().enumerate() {
        *flag = spans.iter().any(|s| vocab.is_sibling(&s.word, k));
    }
    let vis = simulate_visual_tagger(&bow, &sibling_present, &config.visual_noise, &mut rng);

    Utterance {
        id,
        features: Tensor::new(vec![total, f], data).expect("utterance shape"),
        spans,
        bow,
        vis,
    }
}

/// Generate the train/dev/test corpora. Identical configs produce identical
/// corpora; each utterance depends only on (seed, split, index).
pub fn synthesize<S: Scalar>(config: &CorpusConfig) -> Result<SynthCorpus<S>> {
    config.validate()?;
    let vocab = build_vocabulary(config)?;
    let prototypes = generate_prototypes::<S>(config);
    let make_split = |split_id: u64, name: &str, count: usize| -> Vec<Utterance<S>> {
        (0..count)
            .map(|i| {
                synthesize_utterance(
                    config,
                    &vocab,
                    &prototypes,
                    format!("{name}-{i:05}"),
                    utterance_seed(config.seed, split_id, i),
                )
            })
            .collect()
    };
    Ok(SynthCorpus {
        train: make_split(0, "train", config.train_count),
        dev: make_split(1, "dev", config.dev_count),
        test: make_split(2, "test", config.test_count),
        config: config.clone(),
        vocab,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            vocab_size: 12,
            keyword_count: 5,
            semantic_groups: 2,
            train_count: 10,
            dev_count: 4,
            test_count: 4,
            seed: 99,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn spans_tile_the_utterance() {
        let corpus: SynthCorpus<f32> = synthesize(&small_config()).unwrap();
        for utt in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            let mut cursor = 0;
            for span in &utt.spans {
                assert_eq!(span.start, cursor);
                assert!(span.end >= span.start);
                cursor = span.end + 1;
            }
            assert_eq!(cursor, utt.frames());
            let total: usize = utt.spans.iter().map(|s| s.end - s.start + 1).sum();
            assert_eq!(total, utt.frames());
        }
    }

    #[test]
    fn bow_matches_spans() {
        let corpus: SynthCorpus<f32> = synthesize(&small_config()).unwrap();
        for utt in &corpus.train {
            for (k, &present) in utt.bow.iter().enumerate() {
                let kw = corpus.vocab.keyword(k).unwrap();
                let in_spans = utt.spans.iter().any(|s| s.word == kw);
                assert_eq!(present, in_spans, "{} keyword {kw}", utt.id);
            }
        }
    }

    #[test]
    fn utterance_length_bounds() {
        let cfg = small_config();
        let corpus: SynthCorpus<f32> = synthesize(&cfg).unwrap();
        for utt in &corpus.train {
            let t = utt.frames();
            assert!(t >= cfg.words_min * cfg.duration_min);
            assert!(t <= cfg.words_max * cfg.duration_max);
            assert!(utt.spans.len() >= cfg.words_min && utt.spans.len() <= cfg.words_max);
        }
    }

    #[test]
    fn noiseless_words_are_exact_prototype_copies() {
        let mut cfg = small_config();
        cfg.noise_sigma = 0.0;
        let corpus: SynthCorpus<f32> = synthesize(&cfg).unwrap();
        let by_name = |w: &str| {
            corpus
                .prototypes
                .iter()
                .find(|p| p.word == w)
                .expect("prototype exists")
        };
        for utt in &corpus.train {
            for span in &utt.spans {
                let proto = by_name(&span.word);
                let f = cfg.feature_dim;
                let got = &utt.features.data()[span.start * f..(span.end + 1) * f];
                assert_eq!(got, proto.pattern.data());
            }
        }
    }

    #[test]
    fn nearest_prototype_recovers_segmentation_when_noiseless() {
        let mut cfg = small_config();
        cfg.noise_sigma = 0.0;
        let corpus: SynthCorpus<f32> = synthesize(&cfg).unwrap();
        let f = cfg.feature_dim;
        for utt in corpus.test.iter() {
            // Greedy scan: at each position, the unique prototype whose
            // pattern matches exactly must be the true span's word.
            let mut cursor = 0;
            let mut recovered = Vec::new();
            while cursor < utt.frames() {
                let mut best: Option<(f32, &WordPrototype<f32>)> = None;
                for proto in &corpus.prototypes {
                    if cursor + proto.duration > utt.frames() {
                        continue;
                    }
                    let window =
                        &utt.features.data()[cursor * f..(cursor + proto.duration) * f];
                    let dist: f32 = window
                        .iter()
                        .zip(proto.pattern.data())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if best.is_none() || dist < best.as_ref().unwrap().0 {
                        best = Some((dist, proto));
                    }
                }
                let (dist, proto) = best.expect("some prototype fits");
                assert_eq!(dist, 0.0);
                recovered.push((proto.word.clone(), cursor, cursor + proto.duration - 1));
                cursor += proto.duration;
            }
            let truth: Vec<(String, usize, usize)> = utt
                .spans
                .iter()
                .map(|s| (s.word.clone(), s.start, s.end))
                .collect();
            assert_eq!(recovered, truth, "{}", utt.id);
        }
    }

    #[test]
    fn ground_truth_spans_cases() {
        let corpus: SynthCorpus<f32> = synthesize(&small_config()).unwrap();
        let utt = &corpus.train[0];
        for k in 0..corpus.vocab.len() {
            let spans = ground_truth_spans(utt, &corpus.vocab, k).unwrap();
            if !utt.bow[k] {
                assert!(spans.is_empty());
            } else {
                assert!(!spans.is_empty());
                for pair in spans.windows(2) {
                    assert!(pair[0].1 < pair[1].0, "disjoint and increasing");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a: SynthCorpus<f32> = synthesize(&small_config()).unwrap();
        let b: SynthCorpus<f32> = synthesize(&small_config()).unwrap();
        for (ua, ub) in a.train.iter().zip(b.train.iter()) {
            assert_eq!(ua.id, ub.id);
            assert_eq!(ua.features.data(), ub.features.data());
            assert_eq!(ua.spans, ub.spans);
            assert_eq!(ua.vis, ub.vis);
        }
        let mut c_cfg = small_config();
        c_cfg.seed += 1;
        let c: SynthCorpus<f32> = synthesize(&c_cfg).unwrap();
        assert_ne!(
            a.train[0].features.data(),
            c.train[0].features.data(),
            "different seeds differ"
        );
    }

    #[test]
    fn visual_scores_track_presence() {
        let corpus: SynthCorpus<f32> = synthesize(&CorpusConfig {
            train_count: 300,
            dev_count: 1,
            test_count: 1,
            ..CorpusConfig::default()
        })
        .unwrap();
        let w = corpus.vocab.len();
        let mut sum = vec![(0.0f64, 0usize); w];
        let mut sum_absent = vec![(0.0f64, 0usize); w];
        for utt in &corpus.train {
            for k in 0..w {
                if utt.bow[k] {
                    sum[k].0 += utt.vis[k] as f64;
                    sum[k].1 += 1;
                } else {
                    sum_absent[k].0 += utt.vis[k] as f64;
                    sum_absent[k].1 += 1;
                }
            }
        }
        for k in 0..w {
            if sum[k].1 == 0 {
                continue;
            }
            let mean_p = sum[k].0 / sum[k].1 as f64;
            let mean_a = sum_absent[k].0 / sum_absent[k].1 as f64;
            assert!(
                mean_p - mean_a >= 0.2,
                "keyword {k}: present {mean_p:.3} absent {mean_a:.3}"
            );
        }
    }
}
