//! The four model variants over a shared toolbox: a convolutional trunk, a
//! query-embedding table, dot-product attention, an MLP detector, per-keyword
//! frame scores with log-sum-exp aggregation, and a max-pool + dense head.

pub mod config;
pub mod io;

use crate::error::{CoreError, Result};
use crate::numerics;
use crate::scalar::Scalar;
use crate::tape::{BufId, Padding, Tape};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{ConvSpec, ModelConfig, ModelVariant, Preset};

#[derive(Clone, Debug)]
pub struct ConvLayer<S> {
    pub kernels: Tensor<S>, // [filters, width, in_channels]
    pub bias: Tensor<S>,    // [filters]
}

#[derive(Clone, Debug)]
pub struct DenseStack<S> {
    pub hidden_w: Tensor<S>, // [hidden, in]
    pub hidden_b: Tensor<S>, // [hidden]
    pub out_w: Tensor<S>,    // [out, hidden]
    pub out_b: Tensor<S>,    // [out]
}

/// A keyword detection/localisation model: configuration, vocabulary, and
/// all parameter tensors. Immutable models are safe to share across threads.
#[derive(Clone, Debug)]
pub struct KeywordModel<S> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub conv: Vec<ConvLayer<S>>,
    /// Query embeddings [W, U]; attention variants only.
    pub embedding: Option<Tensor<S>>,
    /// Post-attention detector; attention variants only.
    pub mlp: Option<DenseStack<S>>,
    /// Post-max-pool head; cnn-pool only.
    pub head: Option<DenseStack<S>>,
}

/// Maps trunk frame indices back to input frames. Pooled indices land on the
/// center of their receptive window; valid-padding convs shift by their
/// accumulated left margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameMap {
    pub scale: usize,
    pub offset: usize,
    pub input_len: usize,
}

impl FrameMap {
    pub fn input_frame(&self, trunk_idx: usize) -> usize {
        (self.offset + trunk_idx * self.scale + self.scale / 2).min(self.input_len - 1)
    }
}

/// Attention intermediates for one (utterance, keyword) query.
#[derive(Clone, Debug)]
pub struct AttentionTrace<S> {
    pub scores: Vec<S>,
    pub weights: Vec<S>,
    pub context: Vec<S>,
    pub frame_map: FrameMap,
}

/// Localisation output before ground-truth comparison: the detection score,
/// the proposed input frame (absent when gated off by the threshold), and the
/// per-trunk-frame relevance curve the argmax was taken over.
#[derive(Clone, Debug)]
pub struct Proposal<S> {
    pub keyword: usize,
    pub score: S,
    pub frame: Option<usize>,
    pub curve: Vec<S>,
    pub frame_map: FrameMap,
}

/// Score and ungated argmax for one keyword; threshold gating is applied by
/// the caller so one forward pass can serve any θ.
#[derive(Clone, Debug)]
pub struct ScoredLocalisation<S> {
    pub score: S,
    pub frame: usize,
    pub curve: Vec<S>,
    pub frame_map: FrameMap,
}

impl<S: Scalar> ScoredLocalisation<S> {
    pub fn gated(&self, keyword: usize, theta: f64) -> Proposal<S> {
        let frame = if self.score.as_f64() >= theta {
            Some(self.frame)
        } else {
            None
        };
        Proposal {
            keyword,
            score: self.score,
            frame,
            curve: self.curve.clone(),
            frame_map: self.frame_map,
        }
    }
}

/// Parameter buffers of a model registered on a tape, in `named_params` order.
pub struct BoundModel {
    pub conv: Vec<(BufId, BufId)>,
    pub embedding: Option<BufId>,
    pub mlp: Option<[BufId; 4]>,
    pub head: Option<[BufId; 4]>,
    all: Vec<BufId>,
}

impl BoundModel {
    pub fn param_ids(&self) -> &[BufId] {
        &self.all
    }
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform_tensor<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n)
        .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

impl<S: Scalar> KeywordModel<S> {
    /// Build a model with freshly initialized parameters. Weights are uniform
    /// in ±sqrt(6/(fan_in+fan_out)), biases zero, embedding rows uniform in
    /// ±0.05; the draw order is fixed so a seed pins every parameter.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate(vocab.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = vocab.len();

        let mut conv = Vec::with_capacity(config.conv.len());
        let mut in_ch = config.input_dim;
        for spec in &config.conv {
            let fan_in = spec.width * in_ch;
            let fan_out = spec.width * spec.filters;
            let kernels = uniform_tensor(
                &mut rng,
                vec![spec.filters, spec.width, in_ch],
                glorot_limit(fan_in, fan_out),
            );
            let bias = Tensor::zeros(vec![spec.filters])?;
            conv.push(ConvLayer { kernels, bias });
            in_ch = spec.filters;
        }

        let embedding = if config.variant.uses_attention() {
            Some(uniform_tensor(&mut rng, vec![w, config.embed_dim], 0.05))
        } else {
            None
        };

        let mlp = if config.variant.uses_attention() {
            let h = config.mlp_hidden;
            let u = config.embed_dim;
            Some(DenseStack {
                hidden_w: uniform_tensor(&mut rng, vec![h, u], glorot_limit(u, h)),
                hidden_b: Tensor::zeros(vec![h])?,
                out_w: uniform_tensor(&mut rng, vec![1, h], glorot_limit(h, 1)),
                out_b: Tensor::zeros(vec![1])?,
            })
        } else {
            None
        };

        let head = if config.variant == ModelVariant::CnnPool {
            let k = config.conv.last().unwrap().filters;
            let h = config.head_hidden;
            let out = config.final_width(w);
            Some(DenseStack {
                hidden_w: uniform_tensor(&mut rng, vec![h, k], glorot_limit(k, h)),
                hidden_b: Tensor::zeros(vec![h])?,
                out_w: uniform_tensor(&mut rng, vec![out, h], glorot_limit(h, out)),
                out_b: Tensor::zeros(vec![out])?,
            })
        } else {
            None
        };

        Ok(KeywordModel {
            config,
            vocab,
            conv,
            embedding,
            mlp,
            head,
        })
    }

    pub fn keyword_count(&self) -> usize {
        self.vocab.len()
    }

    /// Parameter tensors with stable names, in a fixed order shared by
    /// `params_mut`, `bind`, and the model file format.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv{i}.kernels"), &layer.kernels));
            out.push((format!("conv{i}.bias"), &layer.bias));
        }
        if let Some(e) = &self.embedding {
            out.push(("embedding".to_string(), e));
        }
        if let Some(m) = &self.mlp {
            out.push(("mlp.hidden.weights".to_string(), &m.hidden_w));
            out.push(("mlp.hidden.bias".to_string(), &m.hidden_b));
            out.push(("mlp.out.weights".to_string(), &m.out_w));
            out.push(("mlp.out.bias".to_string(), &m.out_b));
        }
        if let Some(h) = &self.head {
            out.push(("head.hidden.weights".to_string(), &h.hidden_w));
            out.push(("head.hidden.bias".to_string(), &h.hidden_b));
            out.push(("head.out.weights".to_string(), &h.out_w));
            out.push(("head.out.bias".to_string(), &h.out_b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out: Vec<&mut Tensor<S>> = Vec::new();
        for layer in self.conv.iter_mut() {
            out.push(&mut layer.kernels);
            out.push(&mut layer.bias);
        }
        if let Some(e) = &mut self.embedding {
            out.push(e);
        }
        if let Some(m) = &mut self.mlp {
            out.push(&mut m.hidden_w);
            out.push(&mut m.hidden_b);
            out.push(&mut m.out_w);
            out.push(&mut m.out_b);
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.hidden_w);
            out.push(&mut h.hidden_b);
            out.push(&mut h.out_w);
            out.push(&mut h.out_b);
        }
        out
    }

    /// Register every parameter on a tape.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundModel {
        let mut all = Vec::new();
        let mut conv = Vec::with_capacity(self.conv.len());
        for layer in &self.conv {
            let k = tape.input(&layer.kernels);
            let b = tape.input(&layer.bias);
            conv.push((k, b));
            all.push(k);
            all.push(b);
        }
        let embedding = self.embedding.as_ref().map(|e| {
            let id = tape.input(e);
            all.push(id);
            id
        });
        let mlp = self.mlp.as_ref().map(|m| {
            let ids = [
                tape.input(&m.hidden_w),
                tape.input(&m.hidden_b),
                tape.input(&m.out_w),
                tape.input(&m.out_b),
            ];
            all.extend_from_slice(&ids);
            ids
        });
        let head = self.head.as_ref().map(|h| {
            let ids = [
                tape.input(&h.hidden_w),
                tape.input(&h.hidden_b),
                tape.input(&h.out_w),
                tape.input(&h.out_b),
            ];
            all.extend_from_slice(&ids);
            ids
        });
        BoundModel {
            conv,
            embedding,
            mlp,
            head,
            all,
        }
    }

    fn padding(&self) -> Padding {
        Padding::Same
    }

    /// Conv trunk graph: conv (+ReLU) (+pool) per layer. The last layer stays
    /// linear for psc — its outputs are signed frame scores — and is ReLU'd
    /// for the other variants.
    pub fn trunk_graph(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundModel,
        x: BufId,
    ) -> Result<BufId> {
        let mut cur = x;
        let last = self.conv.len() - 1;
        for (i, spec) in self.config.conv.iter().enumerate() {
            let (k, b) = bound.conv[i];
            cur = tape.conv1d(cur, k, b, self.padding())?;
            let linear_last = self.config.variant == ModelVariant::Psc && i == last;
            if !linear_last {
                cur = tape.relu(cur)?;
            }
            if spec.pool > 1 {
                cur = tape.maxpool1d(cur, spec.pool)?;
            }
        }
        Ok(cur)
    }

    /// Attention + MLP detector graph for one keyword. Returns
    /// (scores, weights, context, probability) buffer ids.
    pub fn attention_graph(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundModel,
        h: BufId,
        keyword: usize,
    ) -> Result<(BufId, BufId, BufId, BufId)> {
        let table = bound
            .embedding
            .ok_or_else(|| CoreError::invalid("model has no embedding table"))?;
        let [hw, hb, ow, ob] = bound
            .mlp
            .ok_or_else(|| CoreError::invalid("model has no MLP detector"))?;
        let q = tape.embed_row(table, keyword)?;
        let scores = tape.dot_rows(h, q)?;
        let weights = tape.softmax(scores)?;
        let context = tape.mix_rows(h, weights)?;
        let z1 = tape.dense(hw, context, hb)?;
        let a1 = tape.relu(z1)?;
        let z2 = tape.dense(ow, a1, ob)?;
        let prob = tape.sigmoid(z2)?;
        Ok((scores, weights, context, prob))
    }

    /// Per-keyword frame scores + aggregation graph (psc). Returns
    /// (frame_scores [T', W], probabilities [W]).
    pub fn psc_graph(&self, tape: &mut Tape<S>, h: BufId) -> Result<(BufId, BufId)> {
        let w = self.keyword_count();
        let frames = if self.config.wide_final.is_some() {
            tape.prefix_cols(h, w)?
        } else {
            h
        };
        let agg = tape.log_sum_exp_cols(frames, S::from_f64(self.config.sharpness))?;
        let probs = tape.sigmoid(agg)?;
        Ok((frames, probs))
    }

    /// Global max pool + dense head graph (cnn-pool). Returns probabilities [W].
    pub fn cnnpool_graph(
        &self,
        tape: &mut Tape<S>,
        bound: &BoundModel,
        h: BufId,
    ) -> Result<BufId> {
        let [hw, hb, ow, ob] = bound
            .head
            .ok_or_else(|| CoreError::invalid("model has no dense head"))?;
        let pooled = tape.max_cols(h)?;
        let z1 = tape.dense(hw, pooled, hb)?;
        let a1 = tape.relu(z1)?;
        let z2 = tape.dense(ow, a1, ob)?;
        let logits = if self.config.wide_final.is_some() {
            tape.prefix(z2, self.keyword_count())?
        } else {
            z2
        };
        tape.sigmoid(logits)
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let (t, f) = x.dims2()?;
        if t < 1 {
            return Err(CoreError::shape("input must have at least one frame"));
        }
        if f != self.config.input_dim {
            return Err(CoreError::shape(format!(
                "input has {f} feature columns, model expects {}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    pub fn frame_map(&self, input_len: usize) -> FrameMap {
        FrameMap {
            scale: self.config.frame_scale(),
            offset: 0,
            input_len,
        }
    }

    /// Run the trunk on a feature sequence and return the feature matrix.
    pub fn conv_trunk(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xb = tape.input(x);
        let h = self.trunk_graph(&mut tape, &bound, xb)?;
        Tensor::new(tape.shape(h).to_vec(), tape.value(h).to_vec())
    }

    /// Row `keyword` of the embedding table.
    pub fn embed_query(&self, keyword: usize) -> Result<Vec<S>> {
        let table = self
            .embedding
            .as_ref()
            .ok_or_else(|| CoreError::invalid("variant has no query embeddings"))?;
        if keyword >= self.keyword_count() {
            return Err(CoreError::invalid(format!(
                "keyword index {keyword} out of range for {} keywords",
                self.keyword_count()
            )));
        }
        Ok(table.row(keyword).to_vec())
    }

    /// Detection probability for one keyword (attention variants).
    pub fn detect_attention(&self, x: &Tensor<S>, keyword: usize) -> Result<S> {
        if !self.config.variant.uses_attention() {
            return Err(CoreError::invalid(format!(
                "detect_attention requires an attention variant, model is {}",
                self.config.variant.as_str()
            )));
        }
        Ok(self.attention_trace_with_prob(x, keyword)?.1)
    }

    fn attention_trace_with_prob(
        &self,
        x: &Tensor<S>,
        keyword: usize,
    ) -> Result<(AttentionTrace<S>, S)> {
        self.check_input(x)?;
        if keyword >= self.keyword_count() {
            return Err(CoreError::invalid(format!(
                "keyword index {keyword} out of range"
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xb = tape.input(x);
        let h = self.trunk_graph(&mut tape, &bound, xb)?;
        let (e, a, c, p) = self.attention_graph(&mut tape, &bound, h, keyword)?;
        let trace = AttentionTrace {
            scores: tape.value(e).to_vec(),
            weights: tape.value(a).to_vec(),
            context: tape.value(c).to_vec(),
            frame_map: self.frame_map(x.shape()[0]),
        };
        Ok((trace, tape.scalar_value(p)))
    }

    /// Attention scores/weights/context for one keyword query.
    pub fn attention_trace(&self, x: &Tensor<S>, keyword: usize) -> Result<AttentionTrace<S>> {
        if !self.config.variant.uses_attention() {
            return Err(CoreError::invalid(format!(
                "attention traces require an attention variant, model is {}",
                self.config.variant.as_str()
            )));
        }
        Ok(self.attention_trace_with_prob(x, keyword)?.0)
    }

    /// Per-keyword probabilities and frame-score matrix [T', W] (psc).
    pub fn detect_psc(&self, x: &Tensor<S>) -> Result<(Vec<S>, Tensor<S>)> {
        if self.config.variant != ModelVariant::Psc {
            return Err(CoreError::invalid(format!(
                "detect_psc requires the psc variant, model is {}",
                self.config.variant.as_str()
            )));
        }
        self.check_input(x)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xb = tape.input(x);
        let h = self.trunk_graph(&mut tape, &bound, xb)?;
        let (frames, probs) = self.psc_graph(&mut tape, h)?;
        let fs = Tensor::new(tape.shape(frames).to_vec(), tape.value(frames).to_vec())?;
        Ok((tape.value(probs).to_vec(), fs))
    }

    /// Per-keyword probabilities (cnn-pool).
    pub fn detect_cnnpool(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        if self.config.variant != ModelVariant::CnnPool {
            return Err(CoreError::invalid(format!(
                "detect_cnnpool requires the cnn-pool variant, model is {}",
                self.config.variant.as_str()
            )));
        }
        self.check_input(x)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xb = tape.input(x);
        let h = self.trunk_graph(&mut tape, &bound, xb)?;
        let probs = self.cnnpool_graph(&mut tape, &bound, h)?;
        Ok(tape.value(probs).to_vec())
    }

    /// Detection scores for every keyword, sharing one trunk evaluation.
    /// Cheaper than `localise_all_raw` for cnn-pool (no backward passes).
    pub fn detection_scores(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        match self.config.variant {
            ModelVariant::Psc => Ok(self.detect_psc(x)?.0),
            ModelVariant::CnnPool => self.detect_cnnpool(x),
            _ => Ok(self
                .localise_all_raw(x)?
                .into_iter()
                .map(|s| s.score)
                .collect()),
        }
    }

    /// Score, relevance curve, and ungated argmax for every keyword.
    pub fn localise_all_raw(&self, x: &Tensor<S>) -> Result<Vec<ScoredLocalisation<S>>> {
        self.check_input(x)?;
        let map = self.frame_map(x.shape()[0]);
        let w_count = self.keyword_count();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xb = tape.input(x);
        let h = self.trunk_graph(&mut tape, &bound, xb)?;
        match self.config.variant {
            ModelVariant::CnnAttend | ModelVariant::CnnPoolAttend => {
                let mut out = Vec::with_capacity(w_count);
                for w in 0..w_count {
                    let (_, a, _, p) = self.attention_graph(&mut tape, &bound, h, w)?;
                    let curve = tape.value(a).to_vec();
                    out.push(ScoredLocalisation {
                        score: tape.scalar_value(p),
                        frame: map.input_frame(numerics::argmax_first(&curve)),
                        curve,
                        frame_map: map,
                    });
                }
                Ok(out)
            }
            ModelVariant::Psc => {
                let (frames, probs) = self.psc_graph(&mut tape, h)?;
                let fs = tape.value(frames);
                let t = tape.shape(frames)[0];
                let probs = tape.value(probs).to_vec();
                let mut out = Vec::with_capacity(w_count);
                for (w, &score) in probs.iter().enumerate() {
                    let curve: Vec<S> = (0..t).map(|row| fs[row * w_count + w]).collect();
                    out.push(ScoredLocalisation {
                        score,
                        frame: map.input_frame(numerics::argmax_first(&curve)),
                        curve,
                        frame_map: map,
                    });
                }
                Ok(out)
            }
            ModelVariant::CnnPool => {
                let probs_id = self.cnnpool_graph(&mut tape, &bound, h)?;
                let probs = tape.value(probs_id).to_vec();
                let h_vals =
                    Tensor::new(tape.shape(h).to_vec(), tape.value(h).to_vec())?;
                let mut out = Vec::with_capacity(w_count);
                for (w, &score) in probs.iter().enumerate() {
                    let mut seed = vec![S::zero(); w_count];
                    seed[w] = S::one();
                    tape.backward_seeded(probs_id, &seed)?;
                    let dh = tape.grad_or_zeros(h);
                    let saliency = crate::saliency::gradcam_from_grads(&h_vals, &dh)?;
                    out.push(ScoredLocalisation {
                        score,
                        frame: map.input_frame(numerics::argmax_first(&saliency.frame_scores)),
                        curve: saliency.frame_scores,
                        frame_map: map,
                    });
                }
                Ok(out)
            }
        }
    }

    /// Threshold-gated localisation of one keyword: no proposal when the
    /// detection score is below θ, otherwise the argmax of the variant's
    /// relevance curve mapped back to an input frame.
    pub fn localise(&self, x: &Tensor<S>, keyword: usize, theta: f64) -> Result<Proposal<S>> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(CoreError::invalid(format!("theta {theta} outside [0, 1]")));
        }
        if keyword >= self.keyword_count() {
            return Err(CoreError::invalid(format!(
                "keyword index {keyword} out of range"
            )));
        }
        // Attention variants can evaluate the single query cheaply; the
        // others produce all keywords in one pass anyway.
        match self.config.variant {
            ModelVariant::CnnAttend | ModelVariant::CnnPoolAttend => {
                let (trace, prob) = self.attention_trace_with_prob(x, keyword)?;
                let raw = ScoredLocalisation {
                    score: prob,
                    frame: trace.frame_map.input_frame(numerics::argmax_first(&trace.weights)),
                    curve: trace.weights,
                    frame_map: trace.frame_map,
                };
                Ok(raw.gated(keyword, theta))
            }
            _ => {
                let raw = self.localise_all_raw(x)?;
                Ok(raw[keyword].gated(keyword, theta))
            }
        }
    }
}

/// Dot-product attention over trunk features: e_t = q·h_t, α = softmax(e),
/// c = Σ_t α_t·h_t. The frame map is the identity at the given length.
pub fn attend<S: Scalar>(h: &Tensor<S>, q: &[S]) -> Result<AttentionTrace<S>> {
    let (t, u) = h.dims2()?;
    if q.len() != u {
        return Err(CoreError::shape(format!(
            "attend: query has {} dims, features have {u}",
            q.len()
        )));
    }
    let data = h.data();
    let mut scores = Vec::with_capacity(t);
    for i in 0..t {
        let row = &data[i * u..(i + 1) * u];
        let mut acc = S::zero();
        for (a, b) in row.iter().zip(q.iter()) {
            acc += *a * *b;
        }
        scores.push(acc);
    }
    let weights = numerics::softmax_stable(&scores);
    let mut context = vec![S::zero(); u];
    for i in 0..t {
        let wi = weights[i];
        let row = &data[i * u..(i + 1) * u];
        for (c, r) in context.iter_mut().zip(row.iter()) {
            *c += wi * *r;
        }
    }
    Ok(AttentionTrace {
        scores,
        weights,
        context,
        frame_map: FrameMap {
            scale: 1,
            offset: 0,
            input_len: t,
        },
    })
}

/// Log-sum-exp aggregation of frame scores into an utterance score:
/// g = (1/r)·log[(1/T)·Σ_t exp(r·s_t)].
pub fn aggregate_logsumexp<S: Scalar>(scores: &[S], sharpness: S) -> Result<S> {
    if scores.is_empty() {
        return Err(CoreError::invalid("aggregate_logsumexp: empty scores"));
    }
    if sharpness <= S::zero() {
        return Err(CoreError::invalid("aggregate_logsumexp: r must be > 0"));
    }
    Ok(numerics::log_mean_exp(scores, sharpness))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vocab(w: usize) -> Vocabulary {
        Vocabulary::new(
            (0..w).map(|i| format!("kw{i}")).collect(),
            vec![],
        )
        .unwrap()
    }

    fn tiny_config(variant: ModelVariant) -> ModelConfig {
        let mut cfg = ModelConfig::desk(variant, 3, 4);
        cfg.conv = match variant {
            ModelVariant::Psc => vec![ConvSpec::new(5, 3), ConvSpec::new(4, 3)],
            ModelVariant::CnnAttend => vec![ConvSpec::new(5, 3), ConvSpec::new(6, 3)],
            ModelVariant::CnnPoolAttend => {
                vec![ConvSpec::pooled(5, 3, 3), ConvSpec::pooled(6, 3, 3)]
            }
            ModelVariant::CnnPool => {
                vec![ConvSpec::pooled(5, 3, 3), ConvSpec::pooled(6, 3, 3)]
            }
        };
        cfg.embed_dim = if variant.uses_attention() { 6 } else { 0 };
        cfg.mlp_hidden = if variant.uses_attention() { 7 } else { 0 };
        cfg.head_hidden = if variant == ModelVariant::CnnPool { 7 } else { 0 };
        cfg
    }

    fn random_input(t: usize, f: usize, seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![t, f],
            (0..t * f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn trunk_zero_input_is_constant_over_time() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 1).unwrap();
        let x = Tensor::zeros(vec![9, 3]).unwrap();
        let h = model.conv_trunk(&x).unwrap();
        let (t, u) = h.dims2().unwrap();
        assert_eq!(t, 9);
        for row in 1..t {
            for col in 0..u {
                assert_eq!(h.data()[row * u + col], h.data()[col]);
            }
        }
    }

    #[test]
    fn trunk_lengths_match_config() {
        let pool: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnPool), tiny_vocab(4), 1).unwrap();
        let h = pool.conv_trunk(&random_input(27, 3, 2)).unwrap();
        assert_eq!(h.shape()[0], 3);
        assert_eq!(pool.config.trunk_len(27), 3);

        let flat: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 1).unwrap();
        let h = flat.conv_trunk(&random_input(30, 3, 2)).unwrap();
        assert_eq!(h.shape()[0], 30);
    }

    #[test]
    fn embed_query_is_table_row() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 5).unwrap();
        let q0 = model.embed_query(0).unwrap();
        let q1 = model.embed_query(1).unwrap();
        assert_eq!(q0, model.embedding.as_ref().unwrap().row(0));
        assert_ne!(q0, q1);
        assert!(model.embed_query(4).is_err());
    }

    #[test]
    fn attend_uniform_when_rows_identical() {
        let h: Tensor<f64> =
            Tensor::new(vec![3, 2], vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]).unwrap();
        let trace = attend(&h, &[0.3, 0.7]).unwrap();
        for w in &trace.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((trace.context[0] - 0.5).abs() < 1e-12);
        assert!((trace.context[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn attend_orthogonal_query_uniform() {
        let h: Tensor<f64> = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // q orthogonal to both rows is impossible in 2d unless zero; use zero.
        let trace = attend(&h, &[0.0, 0.0]).unwrap();
        assert_eq!(trace.scores, vec![0.0, 0.0]);
        for w in &trace.weights {
            assert!((w - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_known_ratio_weights() {
        // Engineer e = [0, ln2, ln4] via 1-d features and unit query.
        let h = Tensor::new(vec![3, 1], vec![0.0, 2.0f64.ln(), 4.0f64.ln()]).unwrap();
        let trace = attend(&h, &[1.0]).unwrap();
        assert!((trace.weights[0] - 1.0 / 7.0).abs() < 1e-12);
        assert!((trace.weights[1] - 2.0 / 7.0).abs() < 1e-12);
        assert!((trace.weights[2] - 4.0 / 7.0).abs() < 1e-12);
        let expect: f64 =
            (1.0 / 7.0) * 0.0 + (2.0 / 7.0) * 2.0f64.ln() + (4.0 / 7.0) * 4.0f64.ln();
        assert!((trace.context[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn detect_attention_range_and_determinism() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 9).unwrap();
        let x = random_input(12, 3, 4);
        let p1 = model.detect_attention(&x, 2).unwrap();
        let p2 = model.detect_attention(&x, 2).unwrap();
        assert!(p1 > 0.0 && p1 < 1.0);
        assert_eq!(p1, p2);
    }

    #[test]
    fn zeroed_final_layer_gives_half() {
        let mut model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 9).unwrap();
        {
            let mlp = model.mlp.as_mut().unwrap();
            mlp.out_w = Tensor::zeros(mlp.out_w.shape().to_vec()).unwrap();
            mlp.out_b = Tensor::zeros(mlp.out_b.shape().to_vec()).unwrap();
        }
        for w in 0..4 {
            let p = model.detect_attention(&random_input(10, 3, w as u64), w).unwrap();
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn detect_variant_checks() {
        let attend_model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 1).unwrap();
        let x = random_input(12, 3, 0);
        assert!(attend_model.detect_psc(&x).is_err());
        assert!(attend_model.detect_cnnpool(&x).is_err());

        let psc: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::Psc), tiny_vocab(4), 1).unwrap();
        assert!(psc.detect_attention(&x, 0).is_err());
        assert!(psc.attention_trace(&x, 0).is_err());
    }

    #[test]
    fn psc_single_frame_aggregation_is_identity() {
        let mut cfg = tiny_config(ModelVariant::Psc);
        cfg.conv = vec![ConvSpec::new(4, 1)];
        let model: KeywordModel<f64> =
            KeywordModel::init(cfg, tiny_vocab(4), 3).unwrap();
        let x = random_input(1, 3, 8);
        let (probs, frames) = model.detect_psc(&x).unwrap();
        assert_eq!(frames.shape(), &[1, 4]);
        for w in 0..4 {
            let g = frames.data()[w];
            assert!((probs[w] - numerics::sigmoid(g)).abs() < 1e-12);
        }
    }

    #[test]
    fn psc_matches_direct_formula() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::Psc), tiny_vocab(4), 3).unwrap();
        let x = random_input(11, 3, 8);
        let (probs, frames) = model.detect_psc(&x).unwrap();
        let (t, w_count) = frames.dims2().unwrap();
        let r = model.config.sharpness;
        for w in 0..w_count {
            let col: Vec<f64> = (0..t).map(|row| frames.data()[row * w_count + w]).collect();
            let mean_exp: f64 = col.iter().map(|s| (r * s).exp()).sum::<f64>() / t as f64;
            let g = mean_exp.ln() / r;
            let expect = 1.0 / (1.0 + (-g).exp());
            assert!((probs[w] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn psc_monotone_in_frame_scores() {
        // Raising every frame score of keyword w raises its probability.
        let scores = vec![0.1, -0.4, 0.3];
        let g1 = aggregate_logsumexp(&scores, 1.0).unwrap();
        let bumped: Vec<f64> = scores.iter().map(|s| s + 0.2).collect();
        let g2 = aggregate_logsumexp(&bumped, 1.0).unwrap();
        assert!(numerics::sigmoid(g2) > numerics::sigmoid(g1));
    }

    #[test]
    fn aggregation_limits() {
        let scores = vec![0.1f64, 0.9, 0.4, 0.65];
        let mean: f64 = scores.iter().sum::<f64>() / scores.len() as f64;
        let max = 0.9;
        for r in [1e-3, 1.0, 1e3] {
            let g = aggregate_logsumexp(&scores, r).unwrap();
            assert!(g >= mean - 1e-12 && g <= max + 1e-12, "r={r} g={g}");
        }
        assert!((aggregate_logsumexp(&scores, 1e3).unwrap() - max).abs() < 0.01);
        assert!((aggregate_logsumexp(&scores, 1e-3).unwrap() - mean).abs() < 0.01);
        assert!(aggregate_logsumexp(&scores, 0.0).is_err());
        assert!(aggregate_logsumexp(&scores, -1.0).is_err());
    }

    #[test]
    fn cnnpool_outputs_in_unit_interval() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnPool), tiny_vocab(4), 2).unwrap();
        let probs = model.detect_cnnpool(&random_input(20, 3, 3)).unwrap();
        assert_eq!(probs.len(), 4);
        for p in probs {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn localise_gates_on_threshold() {
        let model: KeywordModel<f64> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 2).unwrap();
        let x = random_input(15, 3, 1);
        let score = model.detect_attention(&x, 1).unwrap();
        let gated = model.localise(&x, 1, 1.0).unwrap();
        assert!(score < 1.0);
        assert!(gated.frame.is_none());
        let open = model.localise(&x, 1, 0.0).unwrap();
        assert!(open.frame.is_some());
        assert!(model.localise(&x, 1, 1.5).is_err());
    }

    #[test]
    fn frame_map_identity_and_pooled() {
        let id = FrameMap { scale: 1, offset: 0, input_len: 30 };
        for i in [0, 7, 29] {
            assert_eq!(id.input_frame(i), i);
        }
        let pooled = FrameMap { scale: 9, offset: 0, input_len: 27 };
        assert_eq!(pooled.input_frame(0), 4);
        assert_eq!(pooled.input_frame(1), 13);
        assert_eq!(pooled.input_frame(2), 22);
        // partial last window stays inside the input
        let clamp = FrameMap { scale: 9, offset: 0, input_len: 19 };
        assert_eq!(clamp.input_frame(2), 18);
    }

    #[test]
    fn init_is_deterministic() {
        let a: KeywordModel<f32> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 42).unwrap();
        let b: KeywordModel<f32> =
            KeywordModel::init(tiny_config(ModelVariant::CnnAttend), tiny_vocab(4), 42).unwrap();
        for ((n1, t1), (n2, t2)) in a.named_params().iter().zip(b.named_params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }
}
