use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use option_templates::baseline::{
    exact_value_iteration, four_state_fixture, smdp_q_learning, sup_norm_distance, QLearningConfig,
};
use option_templates::craft::Family;
use option_templates::harness::{
    archive_previous, compare_report, evaluate_run, load_config, run_experiment, save_implementations,
    write_metrics, Method, MetricsLog, RunConfig, Summary, OUT_DIR_ENV, SUMMARY_FILE,
};
use option_templates::learners::{finite_difference_check, random_instance, LearnerKind};
use option_templates::{Error, Result};

/// Option-template experiments on the Craft gridworld.
#[derive(Parser)]
#[command(name = "optemplates", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task family top-down with option templates.
    Train(Common),
    /// Train a task family bottom-up with option-value iteration.
    Baseline(Common),
    /// Run saved hierarchies without teleports.
    Eval(Common),
    /// Compare runs side by side; with no run directories, trains both methods first.
    Compare {
        #[command(flatten)]
        common: Common,
        runs: Vec<PathBuf>,
    },
    /// Check tabular learning and gradients against exact solutions.
    OracleCheck,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task family: get_gem or get_gold.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// actor_critic or tabular.
    #[arg(long)]
    learner: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(t) = &self.task {
            cfg.family =
                Family::from_name(t).ok_or_else(|| usage("task", format!("unknown task family `{t}`")))?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(l) = &self.learner {
            cfg.learner = LearnerKind::from_name(l).ok_or_else(|| usage("learner", format!("unknown learner `{l}`")))?;
        }
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            cfg.out_dir = dir.into();
        }
        if let Some(dir) = &self.out {
            cfg.out_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn usage(field: &str, message: String) -> Error {
    Error::Validation {
        field: field.into(),
        message,
    }
}

/// Trains one method into `dir`; returns its summary and whether every seed converged.
fn train(cfg: &RunConfig, dir: &Path) -> Result<(Summary, bool)> {
    if let Some(kept) = archive_previous(dir)? {
        eprintln!("previous run moved to {}", kept.display());
    }
    std::fs::create_dir_all(dir)?;
    cfg.write_echo(dir)?;
    let mut log = MetricsLog::new(cfg);
    let result = run_experiment(cfg, &mut log, &mut |l| {
        if let Some(r) = l.rows.last() {
            eprintln!(
                "[{}] seed {} {} episode {} average {:.3}",
                r.method, r.seed, r.task, r.episode, r.average
            );
        }
        write_metrics(l, dir).map(|_| ())
    });
    write_metrics(&log, dir)?;
    let mut converged = true;
    for run in result? {
        save_implementations(&run.implementations, dir, run.seed)?;
        if let Some(e) = run.failure {
            eprintln!("seed {}: {e}", run.seed);
            converged = false;
        }
    }
    Ok((log.summary(), converged))
}

fn oracle_check() -> Result<bool> {
    let m = four_state_fixture();
    let exact = exact_value_iteration(&m, 1e-6)?;
    let learned = smdp_q_learning(&m, &QLearningConfig::default())?;
    let sup = sup_norm_distance(&m, &exact, &learned);
    let q_ok = sup <= 1e-2;
    println!("{} smdp q-learning sup-norm error {sup:.2e} (limit 1e-2)", verdict(q_ok));
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (params, batch) = random_instance(seed);
        worst = worst.max(finite_difference_check(&params, &batch, 1e-5)?.max());
    }
    let g_ok = worst <= 1e-4;
    println!("{} gradient check max relative error {worst:.2e} (limit 1e-4)", verdict(g_ok));
    Ok(q_ok && g_ok)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn train_and_report(c: &Common, method: Method) -> Result<ExitCode> {
    let cfg = RunConfig { method, ..c.resolve()? };
    let (summary, converged) = train(&cfg, &cfg.out_dir)?;
    println!("{}", compare_report(&[summary])?);
    Ok(if converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(c) => train_and_report(&c, Method::Templates),
        Command::Baseline(c) => train_and_report(&c, Method::BaselineOvi),
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            for &seed in &cfg.seeds {
                let e = evaluate_run(cfg.family, &cfg.out_dir, seed, cfg.eval_episodes)?;
                println!(
                    "seed {seed}: average reward {:.3} over {} episodes, {} teleports",
                    e.average_reward, e.episodes, e.teleports
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { common, runs } => {
            let cfg = common.resolve()?;
            let summaries = if runs.is_empty() {
                let mut out = Vec::new();
                for method in [Method::Templates, Method::BaselineOvi] {
                    let m = RunConfig { method, ..cfg.clone() };
                    out.push(train(&m, &cfg.out_dir.join(method.name()))?.0);
                }
                out
            } else {
                runs.iter()
                    .map(|d| Summary::read(&d.join(SUMMARY_FILE)))
                    .collect::<Result<Vec<_>>>()?
            };
            println!("{}", compare_report(&summaries)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck => Ok(if oracle_check()? { ExitCode::SUCCESS } else { ExitCode::from(1) }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_convergence_failure() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
