use crate::{check_theta, existing_dir, validation, CliResult};
use clap::Args;
use kwloc_core::corpus::io::{read_split, read_vocab};
use kwloc_core::corpus::Utterance;
use kwloc_core::eval::{
    categorise_errors, default_theta_grid, detection_metrics, localisation_metrics,
    localisation_outcomes, tune_threshold, EvalTask, MetricsReport, OracleScorer,
    UtteranceScorer,
};
use kwloc_core::model::io::load_model;
use kwloc_core::vocab::Vocabulary;
use kwloc_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Args)]
pub struct EvalArgs {
    /// Model file, or the literal `oracle` for a ground-truth scorer.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// detection | localisation
    #[arg(long)]
    pub task: String,
    /// Detection threshold in [0, 1] (default 0.5).
    #[arg(long, conflicts_with = "tune_theta")]
    pub theta: Option<f64>,
    /// Pick θ by grid search on the dev split instead.
    #[arg(long)]
    pub tune_theta: bool,
    /// Also report the four-way error taxonomy (localisation only).
    #[arg(long)]
    pub categorise: bool,
    /// Attention-mass threshold separating single- from multi-word semantic
    /// confusions.
    #[arg(long, default_value_t = 0.5)]
    pub mass_threshold: f64,
    /// Append one CSV row here (header written when the file is new).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-pair outcomes as JSON lines (localisation only).
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

pub enum Scorer {
    Model(Box<kwloc_core::Model32>),
    Oracle(OracleScorer),
}

impl UtteranceScorer<f32> for Scorer {
    fn keyword_count(&self) -> usize {
        match self {
            Scorer::Model(m) => UtteranceScorer::keyword_count(m.as_ref()),
            Scorer::Oracle(o) => UtteranceScorer::<f32>::keyword_count(o),
        }
    }
    fn score_localise(
        &self,
        utterance: &Utterance<f32>,
    ) -> kwloc_core::Result<Vec<kwloc_core::model::ScoredLocalisation<f32>>> {
        match self {
            Scorer::Model(m) => m.score_localise(utterance),
            Scorer::Oracle(o) => o.score_localise(utterance),
        }
    }
    fn scores(&self, utterance: &Utterance<f32>) -> kwloc_core::Result<Vec<f32>> {
        match self {
            Scorer::Model(m) => UtteranceScorer::scores(m.as_ref(), utterance),
            Scorer::Oracle(o) => o.scores(utterance),
        }
    }
}

pub fn load_scorer(spec: &str, vocab: &Vocabulary) -> CliResult<Scorer> {
    if spec == "oracle" {
        return Ok(Scorer::Oracle(OracleScorer {
            vocab: vocab.clone(),
        }));
    }
    let model = load_model(std::path::Path::new(spec))?;
    if model.vocab.keywords() != vocab.keywords() {
        return Err(CoreError::VocabMismatch(format!(
            "model has {} keywords, corpus has {} (or different words)",
            model.vocab.len(),
            vocab.len()
        ))
        .into());
    }
    Ok(Scorer::Model(Box::new(model)))
}

pub fn csv_row(model: &str, split: &str, r: &MetricsReport) -> String {
    format!(
        "{model},{split},{},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
        r.task.as_str(),
        r.theta,
        r.precision,
        r.recall,
        r.f1,
        r.true_positives,
        r.proposals,
        r.positives
    )
}

pub const CSV_HEADER: &str =
    "model,split,task,theta,precision,recall,f1,true_positives,proposals,positives\n";

pub fn run(args: EvalArgs) -> CliResult<ExitCode> {
    existing_dir(&args.data)?;
    let task = EvalTask::parse(&args.task)?;
    if let Some(theta) = args.theta {
        check_theta(theta)?;
    }
    if args.dump.is_some() && task != EvalTask::Localisation {
        return Err(validation("--dump applies to the localisation task only"));
    }
    if args.categorise && task != EvalTask::Localisation {
        return Err(validation(
            "--categorise applies to the localisation task only",
        ));
    }
    let vocab = read_vocab(&args.data)?;
    let utts = read_split(&args.data, &args.split)?;
    let scorer = load_scorer(&args.model, &vocab)?;

    let theta = if args.tune_theta {
        let dev = read_split(&args.data, "dev")?;
        let theta = tune_threshold(&scorer, &dev, &vocab, task, &default_theta_grid())?;
        println!("tuned theta = {theta:.2}");
        theta
    } else {
        args.theta.unwrap_or(0.5)
    };

    let report = match task {
        EvalTask::Detection => detection_metrics(&scorer, &utts, &vocab, theta)?,
        EvalTask::Localisation => localisation_metrics(&scorer, &utts, &vocab, theta)?,
    };
    println!(
        "{} on {}: P={:.4} R={:.4} F1={:.4} (theta={:.2}, tp={}, proposals={}, positives={})",
        task.as_str(),
        args.split,
        report.precision,
        report.recall,
        report.f1,
        theta,
        report.true_positives,
        report.proposals,
        report.positives
    );

    let model_name = if args.model == "oracle" {
        "oracle".to_string()
    } else {
        PathBuf::from(&args.model)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.model.clone())
    };
    if let Some(out) = &args.out {
        let mut text = if out.exists() {
            std::fs::read_to_string(out)?
        } else {
            CSV_HEADER.to_string()
        };
        text.push_str(&csv_row(&model_name, &args.split, &report));
        std::fs::write(out, text)?;
    }

    if args.categorise || args.dump.is_some() {
        let outcomes =
            localisation_outcomes(&scorer, &utts, &vocab, theta, args.mass_threshold)?;
        if args.categorise {
            let counts = categorise_errors(&outcomes);
            println!(
                "categories: correct={} incorrect={} semantic-single={} semantic-multi={} no-proposal={}",
                counts.correct,
                counts.incorrect,
                counts.semantic_single,
                counts.semantic_multi,
                counts.no_proposal
            );
        }
        if let Some(dump) = &args.dump {
            let mut text = String::new();
            for o in &outcomes {
                text.push_str(&serde_json::to_string(o)?);
                text.push('\n');
            }
            std::fs::write(dump, text)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
