use crate::commands::parse_preset;
use crate::commands::train::build_model_config;
use crate::manifest::{git_describe, write_manifest, RunManifest};
use crate::{existing_dir, thread_cap, CliResult};
use clap::Args;
use kwloc_core::corpus::io::read_corpus;
use kwloc_core::eval::{
    default_theta_grid, detection_metrics, localisation_metrics, tune_threshold, EvalTask,
    MetricsReport,
};
use kwloc_core::model::{io::save_model, KeywordModel, ModelVariant, Preset};
use kwloc_core::supervision::{
    train as train_loop, EarlyStop, KeywordSampling, SupervisionKind, TrainConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

#[derive(Args, Clone)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for tables, models, and logs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Detection thresholds applied at evaluation time.
    #[arg(long, default_value_t = 0.4)]
    pub theta_bow: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta_visual: f64,
    /// Tune θ per run on the dev split instead of the fixed defaults.
    #[arg(long)]
    pub tune_theta: bool,
    /// Sampled negatives per positive for attention variants (0 = all).
    #[arg(long, default_value_t = 0)]
    pub sampled_negatives: usize,
    /// Optional early stop on dev F1 (detection, localisation).
    #[arg(long)]
    pub early_stop_detection_f1: Option<f64>,
    #[arg(long)]
    pub early_stop_localisation_f1: Option<f64>,
}

pub const VARIANT_ORDER: [ModelVariant; 4] = [
    ModelVariant::CnnAttend,
    ModelVariant::CnnPoolAttend,
    ModelVariant::Psc,
    ModelVariant::CnnPool,
];

struct JobResult {
    detection: MetricsReport,
    localisation: MetricsReport,
}

fn run_job(
    args: &CompareArgs,
    preset: Preset,
    corpus: &kwloc_core::corpus::io::DiskCorpus,
    variant: ModelVariant,
    kind: SupervisionKind,
) -> CliResult<JobResult> {
    let input_dim = corpus.train[0].features.shape()[1];
    let cfg = build_model_config(preset, variant, input_dim, corpus.vocab.len(), None, None);
    let theta = match kind {
        SupervisionKind::Bow => args.theta_bow,
        SupervisionKind::Visual => args.theta_visual,
    };
    let early_stop = match (args.early_stop_detection_f1, args.early_stop_localisation_f1) {
        (None, None) => None,
        (d, l) => Some(EarlyStop {
            detection_f1: d.unwrap_or(0.0),
            localisation_f1: l.unwrap_or(0.0),
        }),
    };
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        theta,
        sampling: if args.sampled_negatives == 0 {
            KeywordSampling::All
        } else {
            KeywordSampling::Negatives {
                per_positive: args.sampled_negatives,
            }
        },
        early_stop,
        ..TrainConfig::default()
    };
    let mut model: KeywordModel<f32> =
        KeywordModel::init(cfg, corpus.vocab.clone(), train_cfg.seed)?;
    let report = train_loop(&mut model, &corpus.train, &corpus.dev, kind, &train_cfg)?;

    let name = format!("{}-{}", variant.as_str(), kind.as_str());
    let models_dir = args.out.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let model_path = models_dir.join(format!("{name}.kwlm"));
    save_model(&model, &model_path)?;
    std::fs::write(models_dir.join(format!("{name}.log.csv")), report.to_csv())?;

    let eval_theta = if args.tune_theta {
        tune_threshold(
            &model,
            &corpus.dev,
            &corpus.vocab,
            EvalTask::Localisation,
            &default_theta_grid(),
        )?
    } else {
        theta
    };
    let detection = detection_metrics(&model, &corpus.test, &corpus.vocab, eval_theta)?;
    let localisation = localisation_metrics(&model, &corpus.test, &corpus.vocab, eval_theta)?;
    Ok(JobResult {
        detection,
        localisation,
    })
}

fn table_csv(rows: &[(ModelVariant, MetricsReport, MetricsReport)]) -> String {
    let mut out = String::from(
        "model,bow_precision,bow_recall,bow_f1,visual_precision,visual_recall,visual_f1\n",
    );
    for (variant, bow, vis) in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            variant.as_str(),
            bow.precision,
            bow.recall,
            bow.f1,
            vis.precision,
            vis.recall,
            vis.f1
        ));
    }
    out
}

pub fn run(args: CompareArgs) -> CliResult<ExitCode> {
    let started = Instant::now();
    existing_dir(&args.data)?;
    let preset = parse_preset(&args.preset)?;
    let corpus = read_corpus(&args.data)?;
    std::fs::create_dir_all(&args.out)?;

    let jobs: Vec<(ModelVariant, SupervisionKind)> = VARIANT_ORDER
        .iter()
        .flat_map(|&v| {
            [
                (v, SupervisionKind::Bow),
                (v, SupervisionKind::Visual),
            ]
        })
        .collect();

    // Fixed-size result slots filled by a small worker pool; each training is
    // internally deterministic, so scheduling cannot change any output byte.
    let results: Mutex<Vec<Option<CliResult<JobResult>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = thread_cap().min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (variant, kind) = jobs[i];
                let outcome = run_job(&args, preset, &corpus, variant, kind);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut collected = Vec::new();
    for (i, slot) in results.into_inner().unwrap().into_iter().enumerate() {
        let (variant, kind) = jobs[i];
        let result = slot.expect("every job ran")?;
        println!(
            "{} ({}): detection F1 {:.4}, localisation F1 {:.4}",
            variant.as_str(),
            kind.as_str(),
            result.detection.f1,
            result.localisation.f1
        );
        collected.push(result);
    }

    let mut det_rows = Vec::new();
    let mut loc_rows = Vec::new();
    for (vi, &variant) in VARIANT_ORDER.iter().enumerate() {
        let bow = &collected[vi * 2];
        let vis = &collected[vi * 2 + 1];
        det_rows.push((variant, bow.detection, vis.detection));
        loc_rows.push((variant, bow.localisation, vis.localisation));
    }
    let det_path = args.out.join("detection.csv");
    let loc_path = args.out.join("localisation.csv");
    std::fs::write(&det_path, table_csv(&det_rows))?;
    std::fs::write(&loc_path, table_csv(&loc_rows))?;
    println!("wrote {} and {}", det_path.display(), loc_path.display());

    let manifest = RunManifest {
        command: "compare".into(),
        config: serde_json::json!({
            "preset": args.preset,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "theta_bow": args.theta_bow,
            "theta_visual": args.theta_visual,
            "tune_theta": args.tune_theta,
            "sampled_negatives": args.sampled_negatives,
        }),
        seed: args.seed,
        git_describe: git_describe(),
        outputs: vec![
            det_path.display().to_string(),
            loc_path.display().to_string(),
        ],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, &args.out.join("run_manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}
