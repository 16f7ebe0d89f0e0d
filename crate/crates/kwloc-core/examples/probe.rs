use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let report = kwloc_core::gradcheck::run_suite(1, 20, false).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let mut worst: Vec<_> = report.outcomes.iter().collect();
    worst.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
    println!("full suite: {} tensor checks, max rel err {:.3e}, {elapsed:.1}s", report.outcomes.len(), report.max_rel_err());
    for o in worst.iter().take(5) {
        println!("  {} -> {:.3e}", o.name, o.max_rel_err);
    }
}
