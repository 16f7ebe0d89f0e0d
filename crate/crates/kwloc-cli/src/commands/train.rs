use crate::commands::parse_preset;
use crate::fileconfig::{resolve, FileConfig};
use crate::manifest::{git_describe, write_manifest, RunManifest};
use crate::{existing_dir, validation, CliResult};
use clap::Args;
use kwloc_core::corpus::io::{read_split, read_vocab};
use kwloc_core::model::{io::save_model, KeywordModel, ModelConfig, ModelVariant, Preset};
use kwloc_core::supervision::{
    train as train_loop, EarlyStop, KeywordSampling, SupervisionKind, TrainConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Args)]
pub struct TrainArgs {
    /// Model variant: cnn-attend | cnn-poolattend | psc | cnn-pool.
    #[arg(long)]
    pub model: String,
    /// Supervision source: bow | visual.
    #[arg(long)]
    pub supervision: String,
    /// Corpus directory (as written by `kwloc synth`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with the same keys as the flags below; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture scale: desk | paper.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detection threshold for per-epoch dev metrics and checkpointing.
    /// Defaults to 0.4 (bow) or 0.5 (visual).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Train attention variants on all positives plus K sampled negatives
    /// per positive instead of every keyword.
    #[arg(long)]
    pub sampled_negatives: Option<usize>,
    /// Stop once dev detection F1 and dev localisation F1 both reach these.
    #[arg(long)]
    pub early_stop_detection_f1: Option<f64>,
    #[arg(long)]
    pub early_stop_localisation_f1: Option<f64>,
    /// Log-sum-exp sharpness r (psc).
    #[arg(long)]
    pub sharpness: Option<f64>,
    /// Build the supervised final layer this wide and read only the first W
    /// outputs (full-size replication switch).
    #[arg(long)]
    pub wide_final: Option<usize>,
    /// Training-log CSV path (default: <out>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub struct ResolvedTrain {
    pub variant: ModelVariant,
    pub kind: SupervisionKind,
    pub preset: Preset,
    pub model_config_overrides: (Option<f64>, Option<usize>), // sharpness, wide_final
    pub train_config: TrainConfig,
}

pub fn resolve_train(args: &TrainArgs) -> CliResult<ResolvedTrain> {
    let file = FileConfig::load(args.config.as_deref())?;
    let variant = ModelVariant::parse(&resolve(
        Some(args.model.clone()),
        file.string_key("model")?,
        args.model.clone(),
    ))?;
    let kind = SupervisionKind::parse(&resolve(
        Some(args.supervision.clone()),
        file.string_key("supervision")?,
        args.supervision.clone(),
    ))?;
    let preset = parse_preset(&resolve(
        args.preset.clone(),
        file.string_key("preset")?,
        "desk".to_string(),
    ))?;
    let default_theta = match kind {
        SupervisionKind::Bow => 0.4,
        SupervisionKind::Visual => 0.5,
    };
    let d = TrainConfig::default();
    let sampling = match resolve(
        args.sampled_negatives,
        file.usize_key("sampled_negatives")?,
        0,
    ) {
        0 => KeywordSampling::All,
        k => KeywordSampling::Negatives { per_positive: k },
    };
    let early_det = resolve(
        args.early_stop_detection_f1,
        file.f64_key("early_stop_detection_f1")?,
        f64::NAN,
    );
    let early_loc = resolve(
        args.early_stop_localisation_f1,
        file.f64_key("early_stop_localisation_f1")?,
        f64::NAN,
    );
    let early_stop = if early_det.is_nan() && early_loc.is_nan() {
        None
    } else {
        Some(EarlyStop {
            detection_f1: if early_det.is_nan() { 0.0 } else { early_det },
            localisation_f1: if early_loc.is_nan() { 0.0 } else { early_loc },
        })
    };
    let train_config = TrainConfig {
        learning_rate: resolve(args.lr, file.f64_key("lr")?, d.learning_rate),
        batch_size: resolve(args.batch_size, file.usize_key("batch_size")?, d.batch_size),
        epochs: resolve(args.epochs, file.usize_key("epochs")?, d.epochs),
        seed: resolve(args.seed, file.u64_key("seed")?, d.seed),
        theta: resolve(args.theta, file.f64_key("theta")?, default_theta),
        sampling,
        early_stop,
        ..d
    };
    Ok(ResolvedTrain {
        variant,
        kind,
        preset,
        model_config_overrides: (
            args.sharpness.or(file.f64_key("sharpness")?),
            args.wide_final.or(file.usize_key("wide_final")?),
        ),
        train_config,
    })
}

pub fn build_model_config(
    preset: Preset,
    variant: ModelVariant,
    input_dim: usize,
    w: usize,
    sharpness: Option<f64>,
    wide_final: Option<usize>,
) -> ModelConfig {
    let mut cfg = ModelConfig::preset(preset, variant, input_dim, w);
    if let Some(r) = sharpness {
        cfg.sharpness = r;
    }
    if let Some(wf) = wide_final {
        cfg.wide_final = Some(wf);
        if variant == ModelVariant::Psc {
            cfg.conv.last_mut().expect("psc has conv layers").filters = wf;
        }
    }
    cfg
}

pub fn run(args: TrainArgs) -> CliResult<ExitCode> {
    let started = Instant::now();
    existing_dir(&args.data)?;
    let resolved = resolve_train(&args)?;
    let vocab = read_vocab(&args.data)?;
    let train_set = read_split(&args.data, "train")?;
    let dev_set = read_split(&args.data, "dev")?;
    if train_set.is_empty() {
        return Err(validation("training split is empty"));
    }
    let input_dim = train_set[0].features.shape()[1];
    let (sharpness, wide_final) = resolved.model_config_overrides;
    let cfg = build_model_config(
        resolved.preset,
        resolved.variant,
        input_dim,
        vocab.len(),
        sharpness,
        wide_final,
    );
    let mut model: KeywordModel<f32> =
        KeywordModel::init(cfg, vocab, resolved.train_config.seed)?;
    let report = train_loop(
        &mut model,
        &train_set,
        &dev_set,
        resolved.kind,
        &resolved.train_config,
    )?;
    save_model(&model, &args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("log.csv"));
    std::fs::write(&log_path, report.to_csv())?;

    let last = report.epochs.last();
    println!(
        "trained {} ({}) for {} epochs: dev detection F1 {:.4}, dev localisation F1 {:.4} (best epoch {})",
        resolved.variant.as_str(),
        resolved.kind.as_str(),
        report.epochs.len(),
        last.map(|e| e.dev_detection.2).unwrap_or(0.0),
        last.map(|e| e.dev_localisation.2).unwrap_or(0.0),
        report.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
    );
    println!(
        "target reads: bow={} visual={}",
        report.bow_reads, report.vis_reads
    );

    let manifest = RunManifest {
        command: "train".into(),
        config: serde_json::json!({
            "variant": resolved.variant.as_str(),
            "supervision": resolved.kind.as_str(),
            "preset": format!("{:?}", resolved.preset).to_lowercase(),
            "train": resolved.train_config,
            "model": model.config,
            "target_reads": {"bow": report.bow_reads, "visual": report.vis_reads},
        }),
        seed: resolved.train_config.seed,
        git_describe: git_describe(),
        outputs: vec![
            args.out.display().to_string(),
            log_path.display().to_string(),
        ],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, &args.out.with_extension("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}
