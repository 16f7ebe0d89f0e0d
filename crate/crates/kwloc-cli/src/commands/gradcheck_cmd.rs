use crate::CliResult;
use clap::Args;
use kwloc_core::gradcheck::run_suite;
use std::process::ExitCode;
use std::time::Instant;

const TOLERANCE: f64 = 1e-4;

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of random seeds to sweep.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Deliberately corrupt one gradient to verify the harness fails.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

pub fn run(args: GradcheckArgs) -> CliResult<ExitCode> {
    let started = Instant::now();
    let report = run_suite(args.seed, args.seeds.max(1), args.corrupt)?;

    // One line per tensor, worst instance across seeds.
    let mut worst: std::collections::BTreeMap<String, (f64, usize, usize)> =
        std::collections::BTreeMap::new();
    for o in &report.outcomes {
        let entry = worst.entry(o.name.clone()).or_insert((0.0, 0, 0));
        entry.0 = entry.0.max(o.max_rel_err);
        entry.1 += o.checked;
        entry.2 += o.skipped;
    }
    for (name, (err, checked, skipped)) in &worst {
        println!("{name}: max rel err {err:.3e} (checked {checked}, skipped {skipped})");
    }
    let max = report.max_rel_err();
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "max relative error {max:.3e} over {} seeds in {elapsed:.1}s (tolerance {TOLERANCE:.0e})",
        args.seeds.max(1)
    );
    if report.passed(TOLERANCE) {
        println!("gradient check: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check: FAIL");
        Ok(ExitCode::from(2))
    }
}
