use crate::svg::render_localisation;
use crate::{check_theta, existing_dir, validation, CliResult};
use clap::Args;
use kwloc_core::corpus::io::{read_split, read_vocab};
use kwloc_core::eval::{categorise, Category};
use kwloc_core::model::io::load_model;
use kwloc_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Args)]
pub struct LocaliseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Utterance id as listed in the split manifest.
    #[arg(long)]
    pub utterance: String,
    /// Keyword surface form (must be in the vocabulary).
    #[arg(long)]
    pub keyword: String,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Attention-mass threshold for the semantic-confusion split.
    #[arg(long, default_value_t = 0.5)]
    pub mass_threshold: f64,
    /// Write a plot of features, spans, and the relevance curve here.
    #[arg(long)]
    pub emit_svg: Option<PathBuf>,
}

pub fn run(args: LocaliseArgs) -> CliResult<ExitCode> {
    existing_dir(&args.data)?;
    check_theta(args.theta)?;
    let vocab = read_vocab(&args.data)?;
    let model = load_model(&args.model)?;
    if model.vocab.keywords() != vocab.keywords() {
        return Err(CoreError::VocabMismatch(
            "model and corpus vocabularies differ".to_string(),
        )
        .into());
    }
    let utts = read_split(&args.data, &args.split)?;
    let utt = utts
        .iter()
        .find(|u| u.id == args.utterance)
        .ok_or_else(|| {
            validation(format!(
                "utterance '{}' not found in split '{}'",
                args.utterance, args.split
            ))
        })?;
    let keyword = vocab
        .keyword_index(&args.keyword)
        .ok_or_else(|| validation(format!("'{}' is not a keyword", args.keyword)))?;

    let proposal = model.localise(&utt.features, keyword, args.theta)?;
    let category = match proposal.frame {
        Some(frame) => categorise(
            utt,
            &vocab,
            keyword,
            frame,
            Some((&proposal.curve, proposal.frame_map)),
            args.mass_threshold,
        )?,
        None => Category::NoProposal,
    };
    match proposal.frame {
        Some(frame) => println!(
            "{} '{}': score {:.4} >= theta {:.2}, frame {} -> {}",
            utt.id,
            args.keyword,
            proposal.score,
            args.theta,
            frame,
            category.as_str()
        ),
        None => println!(
            "{} '{}': score {:.4} < theta {:.2} -> no proposal",
            utt.id, args.keyword, proposal.score, args.theta
        ),
    }
    let truth = kwloc_core::corpus::ground_truth_spans(utt, &vocab, keyword)?;
    if truth.is_empty() {
        println!("ground truth: keyword absent");
    } else {
        let spans: Vec<String> = truth
            .iter()
            .map(|(s, e)| format!("[{s}, {e}]"))
            .collect();
        println!("ground truth spans: {}", spans.join(" "));
    }

    if let Some(path) = &args.emit_svg {
        let svg = render_localisation(utt, &args.keyword, &proposal, category, args.theta);
        std::fs::write(path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
