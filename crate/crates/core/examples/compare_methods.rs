//! Runs both training methods on matched seeds and prints the episodes
//! each needed per task.
//!
//!     cargo run --release --example compare_methods -- get_gold 1,2

use option_templates::craft::Family;
use option_templates::harness::{compare_report, run_experiment, Method, MetricsLog, RunConfig};

fn main() -> option_templates::Result<()> {
    let mut args = std::env::args().skip(1);
    let family = args.next().and_then(|f| Family::from_name(&f)).unwrap_or(Family::Gold);
    let seeds: Vec<u64> = args
        .next()
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![1]);

    let mut summaries = Vec::new();
    for method in [Method::Templates, Method::BaselineOvi] {
        let cfg = RunConfig {
            family,
            method,
            seeds: seeds.clone(),
            ..RunConfig::default()
        };
        let mut log = MetricsLog::new(&cfg);
        let runs = run_experiment(&cfg, &mut log, &mut |l| {
            eprintln!("{method}: {} episodes so far", l.rows.len());
            Ok(())
        })?;
        for r in runs.iter().filter(|r| r.failure.is_some()) {
            eprintln!("{method} seed {}: {}", r.seed, r.failure.as_ref().unwrap());
        }
        summaries.push(log.summary());
    }
    println!("{}", compare_report(&summaries)?);
    Ok(())
}
