use crate::fileconfig::{resolve, FileConfig};
use crate::manifest::{git_describe, write_manifest, RunManifest};
use crate::CliResult;
use clap::Args;
use kwloc_core::corpus::{io::write_corpus, synthesize, CorpusConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for the corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with the same keys as the flags below; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub keywords: Option<usize>,
    #[arg(long)]
    pub semantic_groups: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub words_min: Option<usize>,
    #[arg(long)]
    pub words_max: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Visual scores become exact copies of the hard labels.
    #[arg(long)]
    pub noiseless_visual: bool,
}

pub fn resolve_config(args: &SynthArgs) -> CliResult<CorpusConfig> {
    let file = FileConfig::load(args.config.as_deref())?;
    let d = CorpusConfig::default();
    let mut cfg = CorpusConfig {
        vocab_size: resolve(args.vocab_size, file.usize_key("vocab_size")?, d.vocab_size),
        keyword_count: resolve(args.keywords, file.usize_key("keywords")?, d.keyword_count),
        semantic_groups: resolve(
            args.semantic_groups,
            file.usize_key("semantic_groups")?,
            d.semantic_groups,
        ),
        feature_dim: resolve(args.feature_dim, file.usize_key("feature_dim")?, d.feature_dim),
        words_min: resolve(args.words_min, file.usize_key("words_min")?, d.words_min),
        words_max: resolve(args.words_max, file.usize_key("words_max")?, d.words_max),
        noise_sigma: resolve(args.noise_sigma, file.f64_key("noise_sigma")?, d.noise_sigma),
        train_count: resolve(args.train, file.usize_key("train")?, d.train_count),
        dev_count: resolve(args.dev, file.usize_key("dev")?, d.dev_count),
        test_count: resolve(args.test, file.usize_key("test")?, d.test_count),
        seed: resolve(args.seed, file.u64_key("seed")?, d.seed),
        ..d
    };
    cfg.visual_noise.noiseless = resolve(
        args.noiseless_visual.then_some(true),
        file.bool_key("noiseless_visual")?,
        false,
    );
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: SynthArgs) -> CliResult<ExitCode> {
    let started = Instant::now();
    let cfg = resolve_config(&args)?;
    let corpus = synthesize::<f32>(&cfg)?;
    write_corpus(&corpus, &args.out)?;
    println!(
        "wrote corpus to {}: train={} dev={} test={} (W={}, V={}, F={})",
        args.out.display(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        cfg.keyword_count,
        cfg.vocab_size,
        cfg.feature_dim,
    );
    let manifest = RunManifest {
        command: "synth".into(),
        config: serde_json::to_value(&cfg)?,
        seed: cfg.seed,
        git_describe: git_describe(),
        outputs: vec![args.out.display().to_string()],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, &args.out.join("run_manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}
