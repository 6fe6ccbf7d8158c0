//! Parses a run configuration, performs a tiny run and writes the metric
//! files a full run would produce.

use option_templates::harness::{parse_config, read_episodes, run_experiment, write_metrics, MetricsLog};

const CONFIG: &str = r#"
family = "get_gold"
method = "baseline_ovi"
seeds = [5, 6]
max_episodes = 30
window = 10

[learner_config]
learning_rate = 0.002
"#;

fn main() -> option_templates::Result<()> {
    let cfg = parse_config(CONFIG)?;
    for (task, resolved) in cfg.resolved_learners() {
        println!("{task:<12} {resolved:?}");
    }

    let mut log = MetricsLog::new(&cfg);
    for run in run_experiment(&cfg, &mut log, &mut |_| Ok(()))? {
        if let Some(e) = run.failure {
            println!("seed {}: {e}", run.seed);
        }
    }

    let dir = std::env::temp_dir().join("optemplates-config-example");
    std::fs::create_dir_all(&dir)?;
    cfg.write_echo(&dir)?;
    let files = write_metrics(&log, &dir)?;
    let rows = read_episodes(&files.episodes)?;
    println!("{} rows in {}", rows.len(), files.episodes.display());
    for r in rows.iter().filter(|r| r.episode == cfg.max_episodes) {
        println!("seed {} {:<12} final average {:.2}", r.seed, r.task, r.average);
    }
    Ok(())
}
