//! Central finite-difference verification of every tape op and of all four
//! model variants end to end. Runs at f64 through the same generic code the
//! f32 models use, with step 1e-3; evaluations whose activation signature
//! differs from the center point straddle a relu/max-pool/clamp kink and are
//! skipped, since the difference quotient is meaningless there.

use crate::error::Result;
use crate::model::{ConvSpec, KeywordModel, ModelConfig, ModelVariant};
use crate::tape::{BufId, Padding, Tape};
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely, not relatively.
const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }

    fn merge(&mut self, other: SuiteReport) {
        self.outcomes.extend(other.outcomes);
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

/// A differentiable scalar function of a flat list of tensors. Returns
/// (loss, activation signature, analytic gradients when requested).
trait LossFn {
    fn eval(
        &self,
        inputs: &[Tensor<f64>],
        with_grads: bool,
    ) -> Result<(f64, u64, Option<Vec<Vec<f64>>>)>;
}

/// Compare analytic gradients against central differences for every entry of
/// every tensor, skipping points whose ±h evaluations cross a kink.
fn check_loss_fn(
    label: &str,
    tensor_names: &[String],
    inputs: &[Tensor<f64>],
    f: &dyn LossFn,
    corrupt: bool,
) -> Result<SuiteReport> {
    let (_, sig0, grads) = f.eval(inputs, true)?;
    let mut grads = grads.expect("grads requested");
    if corrupt {
        // Deliberately wrong gradient, used to prove the harness catches it.
        'outer: for g in grads.iter_mut() {
            for v in g.iter_mut() {
                if v.abs() > 1e-3 {
                    *v *= 2.0;
                    break 'outer;
                }
            }
        }
    }
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = SuiteReport::default();
    for (ti, name) in tensor_names.iter().enumerate() {
        let mut outcome = CheckOutcome {
            name: format!("{label}/{name}"),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        };
        for j in 0..inputs[ti].numel() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + FD_STEP;
            let (loss_p, sig_p, _) = f.eval(&work, false)?;
            work[ti].data_mut()[j] = orig - FD_STEP;
            let (loss_m, sig_m, _) = f.eval(&work, false)?;
            work[ti].data_mut()[j] = orig;
            if sig_p != sig0 || sig_m != sig0 {
                outcome.skipped += 1;
                continue;
            }
            let fd = (loss_p - loss_m) / (2.0 * FD_STEP);
            outcome.max_rel_err = outcome.max_rel_err.max(rel_err(grads[ti][j], fd));
            outcome.checked += 1;
        }
        report.outcomes.push(outcome);
    }
    Ok(report)
}

// ── Primitive op checks ─────────────────────────────────────────────

struct OpLoss<F> {
    loss_weights: Vec<f64>,
    build: F,
}

impl<F: Fn(&mut Tape<f64>, &[BufId]) -> Result<BufId>> LossFn for OpLoss<F> {
    fn eval(
        &self,
        inputs: &[Tensor<f64>],
        with_grads: bool,
    ) -> Result<(f64, u64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let ids: Vec<BufId> = inputs.iter().map(|t| tape.input(t)).collect();
        let out = (self.build)(&mut tape, &ids)?;
        let loss = tape.weighted_sum(out, &self.loss_weights)?;
        let value = tape.scalar_value(loss);
        let sig = tape.activation_signature();
        let grads = if with_grads {
            tape.backward(loss)?;
            Some(ids.iter().map(|&id| tape.grad_or_zeros(id)).collect())
        } else {
            None
        };
        Ok((value, sig, grads))
    }
}

fn check_op(
    label: &str,
    tensor_names: &[&str],
    inputs: Vec<Tensor<f64>>,
    loss_weights: Vec<f64>,
    build: impl Fn(&mut Tape<f64>, &[BufId]) -> Result<BufId>,
    corrupt: bool,
) -> Result<SuiteReport> {
    let names: Vec<String> = tensor_names.iter().map(|s| s.to_string()).collect();
    let case = OpLoss {
        loss_weights,
        build,
    };
    check_loss_fn(label, &names, &inputs, &case, corrupt)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn rand_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Finite-difference check of every primitive op on one random instance.
pub fn check_ops(seed: u64, corrupt: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::default();

    for padding in [Padding::Same, Padding::Valid] {
        let (t, c_in, c_out, width) = (7usize, 2, 3, 3);
        let t_out = match padding {
            Padding::Same => t,
            Padding::Valid => t - width + 1,
        };
        let label = match padding {
            Padding::Same => "op/conv1d-same",
            Padding::Valid => "op/conv1d-valid",
        };
        let inputs = vec![
            rand_tensor(&mut rng, vec![t, c_in], -1.0, 1.0),
            rand_tensor(&mut rng, vec![c_out, width, c_in], -1.0, 1.0),
            rand_tensor(&mut rng, vec![c_out], -0.5, 0.5),
        ];
        let w = rand_weights(&mut rng, t_out * c_out);
        report.merge(check_op(
            label,
            &["input", "kernels", "bias"],
            inputs,
            w,
            move |tape, ids| tape.conv1d(ids[0], ids[1], ids[2], padding),
            corrupt,
        )?);
    }

    let inputs = vec![rand_tensor(&mut rng, vec![10, 3], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 4 * 3);
    report.merge(check_op(
        "op/maxpool1d",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.maxpool1d(ids[0], 3),
        false,
    )?);

    let inputs = vec![
        rand_tensor(&mut rng, vec![4, 5], -1.0, 1.0),
        rand_tensor(&mut rng, vec![5], -1.0, 1.0),
        rand_tensor(&mut rng, vec![4], -0.5, 0.5),
    ];
    let w = rand_weights(&mut rng, 4);
    report.merge(check_op(
        "op/dense",
        &["weights", "input", "bias"],
        inputs,
        w,
        |tape, ids| tape.dense(ids[0], ids[1], ids[2]),
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![9], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 9);
    report.merge(check_op(
        "op/relu",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.relu(ids[0]),
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![6], -2.0, 2.0)];
    let w = rand_weights(&mut rng, 6);
    report.merge(check_op(
        "op/sigmoid",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.sigmoid(ids[0]),
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![7], -2.0, 2.0)];
    let w = rand_weights(&mut rng, 7);
    report.merge(check_op(
        "op/softmax",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.softmax(ids[0]),
        false,
    )?);

    let inputs = vec![
        rand_tensor(&mut rng, vec![6, 4], -1.0, 1.0),
        rand_tensor(&mut rng, vec![4], -1.0, 1.0),
    ];
    let w = rand_weights(&mut rng, 6);
    report.merge(check_op(
        "op/dot_rows",
        &["matrix", "vector"],
        inputs,
        w,
        |tape, ids| tape.dot_rows(ids[0], ids[1]),
        false,
    )?);

    let inputs = vec![
        rand_tensor(&mut rng, vec![6, 4], -1.0, 1.0),
        rand_tensor(&mut rng, vec![6], -1.0, 1.0),
    ];
    let w = rand_weights(&mut rng, 4);
    report.merge(check_op(
        "op/mix_rows",
        &["matrix", "weights"],
        inputs,
        w,
        |tape, ids| tape.mix_rows(ids[0], ids[1]),
        false,
    )?);

    let inputs = vec![
        rand_tensor(&mut rng, vec![5], -1.0, 1.0),
        rand_tensor(&mut rng, vec![5], -1.0, 1.0),
    ];
    report.merge(check_op(
        "op/dot",
        &["a", "b"],
        inputs,
        vec![1.0],
        |tape, ids| tape.dot(ids[0], ids[1]),
        false,
    )?);

    for (label, r) in [
        ("op/log_sum_exp_cols-soft", 0.1),
        ("op/log_sum_exp_cols-unit", 1.0),
        ("op/log_sum_exp_cols-sharp", 12.0),
    ] {
        let inputs = vec![rand_tensor(&mut rng, vec![8, 3], -1.0, 1.0)];
        let w = rand_weights(&mut rng, 3);
        report.merge(check_op(
            label,
            &["input"],
            inputs,
            w,
            move |tape, ids| tape.log_sum_exp_cols(ids[0], r),
            false,
        )?);
    }

    let inputs = vec![rand_tensor(&mut rng, vec![8, 3], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 3);
    report.merge(check_op(
        "op/max_cols",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.max_cols(ids[0]),
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![4, 5], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 5);
    report.merge(check_op(
        "op/embed_row",
        &["table"],
        inputs,
        w,
        |tape, ids| tape.embed_row(ids[0], 2),
        false,
    )?);

    let targets: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let inputs = vec![rand_tensor(&mut rng, vec![5], 0.15, 0.85)];
    report.merge(check_op(
        "op/bce",
        &["probs"],
        inputs,
        vec![1.0],
        move |tape, ids| tape.bce(ids[0], &targets),
        false,
    )?);

    let inputs = vec![
        rand_tensor(&mut rng, vec![6], -1.0, 1.0),
        rand_tensor(&mut rng, vec![6], -1.0, 1.0),
    ];
    report.merge(check_op(
        "op/add-scale-sum",
        &["a", "b"],
        inputs,
        vec![1.0],
        |tape, ids| {
            let s = tape.add(ids[0], ids[1])?;
            let sc = tape.scale(s, 1.7)?;
            tape.sum(sc)
        },
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![5, 4], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 5 * 2);
    report.merge(check_op(
        "op/prefix_cols",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.prefix_cols(ids[0], 2),
        false,
    )?);

    let inputs = vec![rand_tensor(&mut rng, vec![6], -1.0, 1.0)];
    let w = rand_weights(&mut rng, 3);
    report.merge(check_op(
        "op/prefix",
        &["input"],
        inputs,
        w,
        |tape, ids| tape.prefix(ids[0], 3),
        false,
    )?);

    Ok(report)
}

// ── End-to-end model checks ─────────────────────────────────────────

struct ModelLoss<'a> {
    skeleton: &'a KeywordModel<f64>,
    x: &'a Tensor<f64>,
    targets: &'a [f64],
}

impl LossFn for ModelLoss<'_> {
    fn eval(
        &self,
        inputs: &[Tensor<f64>],
        with_grads: bool,
    ) -> Result<(f64, u64, Option<Vec<Vec<f64>>>)> {
        let mut model = self.skeleton.clone();
        for (param, value) in model.params_mut().into_iter().zip(inputs.iter()) {
            *param = value.clone();
        }
        let mut tape: Tape<f64> = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.input(self.x);
        let h = model.trunk_graph(&mut tape, &bound, x)?;
        let loss = if model.config.variant.uses_attention() {
            let mut acc: Option<BufId> = None;
            for w in 0..model.keyword_count() {
                let (_, _, _, prob) = model.attention_graph(&mut tape, &bound, h, w)?;
                let term = tape.bce(prob, &self.targets[w..=w])?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            acc.expect("at least one keyword")
        } else {
            let probs = match model.config.variant {
                ModelVariant::Psc => model.psc_graph(&mut tape, h)?.1,
                _ => model.cnnpool_graph(&mut tape, &bound, h)?,
            };
            tape.bce(probs, self.targets)?
        };
        let value = tape.scalar_value(loss);
        let sig = tape.activation_signature();
        let grads = if with_grads {
            tape.backward(loss)?;
            Some(
                bound
                    .param_ids()
                    .iter()
                    .map(|&id| tape.grad_or_zeros(id))
                    .collect(),
            )
        } else {
            None
        };
        Ok((value, sig, grads))
    }
}

fn check_variant(variant: ModelVariant, seed: u64, corrupt: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
    let w = 3;
    let f = 3;
    let vocab = Vocabulary::new((0..w).map(|i| format!("kw{i}")).collect(), vec![])?;
    let mut cfg = ModelConfig::desk(variant, f, w);
    cfg.conv = match variant {
        ModelVariant::CnnAttend => vec![ConvSpec::new(4, 3), ConvSpec::new(5, 3)],
        ModelVariant::Psc => vec![ConvSpec::new(4, 3), ConvSpec::new(w, 3)],
        _ => vec![ConvSpec::pooled(4, 3, 2), ConvSpec::pooled(5, 3, 2)],
    };
    cfg.embed_dim = if variant.uses_attention() { 5 } else { 0 };
    cfg.mlp_hidden = if variant.uses_attention() { 6 } else { 0 };
    cfg.head_hidden = if variant == ModelVariant::CnnPool { 6 } else { 0 };
    cfg.sharpness = 1.3;
    let model: KeywordModel<f64> = KeywordModel::init(cfg, vocab, rng.gen())?;

    let t = rng.gen_range(14..22);
    let x = rand_tensor(&mut rng, vec![t, f], -1.0, 1.0);
    let targets: Vec<f64> = (0..w).map(|_| rng.gen_range(0.05..0.95)).collect();

    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    let values: Vec<Tensor<f64>> = model
        .named_params()
        .iter()
        .map(|(_, t)| (*t).clone())
        .collect();
    let loss = ModelLoss {
        skeleton: &model,
        x: &x,
        targets: &targets,
    };
    check_loss_fn(variant.as_str(), &names, &values, &loss, corrupt)
}

/// End-to-end checks of all four variants for one seed.
pub fn check_models(seed: u64, corrupt: bool) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for variant in [
        ModelVariant::CnnAttend,
        ModelVariant::CnnPoolAttend,
        ModelVariant::Psc,
        ModelVariant::CnnPool,
    ] {
        report.merge(check_variant(variant, seed, corrupt)?);
    }
    Ok(report)
}

/// The full suite: primitive ops and all model variants across `seeds` seeds.
pub fn run_suite(base_seed: u64, seeds: usize, corrupt: bool) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for i in 0..seeds {
        let seed = base_seed.wrapping_add(i as u64);
        report.merge(check_ops(seed, corrupt && i == 0)?);
        report.merge(check_models(seed, corrupt && i == 0)?);
    }
    Ok(report)
}
