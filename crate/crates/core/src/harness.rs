//! Experiment plumbing: run configuration, per-episode metrics, summaries,
//! comparison tables and on-disk artifacts.
//!
//! A run directory holds:
//!
//! ```text
//! episodes.csv          one row per training episode, deterministic per seed
//! timing.csv            wall-clock per episode (kept apart so episodes.csv is reproducible)
//! summary.json          episodes-to-threshold per task and seed, subtree totals
//! config.resolved.toml  the run configuration with every learner setting resolved
//! policies/seed-N/      learned implementations, one file per template
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{craft_bottom_up_tasks, train_bottom_up};
use crate::craft::{curriculum, CraftEnv, CraftState, Family, Task};
use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, LearnerKind, LearnerOverrides, Policy};
use crate::smdp::{derive_seed, seeded_rng, Environment, OptionImpl};
use crate::templates::{
    evaluate_flattened, run_pipeline, EpisodeStat, Evaluation, Execution, Hooks, ImplementationSet, NoTrace,
    TrailingAverage, TrainConfig,
};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "OPTEMPLATES_OUT";
/// Episodes between metric flushes during a run.
pub const CHECKPOINT_EVERY: usize = 500;

pub const EPISODES_FILE: &str = "episodes.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config.resolved.toml";
pub const POLICY_DIR: &str = "policies";

const ARTIFACTS: [&str; 5] = [EPISODES_FILE, TIMING_FILE, SUMMARY_FILE, CONFIG_ECHO_FILE, POLICY_DIR];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Top-down learning with option templates.
    #[default]
    Templates,
    /// Bottom-up option-value iteration.
    BaselineOvi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Templates => "templates",
            Method::BaselineOvi => "baseline_ovi",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        match name {
            "templates" => Some(Method::Templates),
            "baseline_ovi" | "baseline" | "ovi" => Some(Method::BaselineOvi),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub learner: LearnerKind,
    /// Overrides applied to every task's defaults.
    pub learner_config: LearnerOverrides,
    pub delta: f64,
    /// Episode budget L per task.
    pub max_episodes: usize,
    pub window: usize,
    pub execution: Execution,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            family: Family::Gem,
            method: Method::Templates,
            seeds: vec![1, 2, 3],
            learner: train.learner,
            learner_config: LearnerOverrides::default(),
            delta: train.delta,
            max_episodes: train.max_episodes,
            window: train.window,
            execution: train.execution,
            eval_episodes: 100,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learner: self.learner,
            overrides: self.learner_config.clone(),
            delta: self.delta,
            max_episodes: self.max_episodes,
            window: self.window,
            execution: self.execution,
        }
    }

    /// Learner settings for each task of the family, keyed by task name.
    pub fn resolved_learners(&self) -> BTreeMap<String, LearnerConfig> {
        self.family
            .learning_order()
            .into_iter()
            .map(|(t, _)| (t.name().to_string(), self.learner_config.resolve(t.horizon())))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("seeds", "seeds must be distinct"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::validation("eval_episodes", "must be positive"));
        }
        self.train_config().validate()?;
        for cfg in self.resolved_learners().values() {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Writes the configuration with every learner default filled in.
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Echo<'a> {
            run: &'a RunConfig,
            resolved: BTreeMap<String, LearnerConfig>,
        }
        let text = toml::to_string(&Echo {
            run: self,
            resolved: self.resolved_learners(),
        })
        .map_err(|e| Error::validation("config", e.to_string()))?;
        let path = dir.join(CONFIG_ECHO_FILE);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Parses and validates a TOML run configuration. Missing fields take defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// One training episode of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub method: Method,
    pub seed: u64,
    pub task: String,
    pub level: usize,
    pub episode: usize,
    pub invoked: bool,
    pub reward: f64,
    pub average: f64,
    pub steps: usize,
    pub segments: usize,
    pub teleports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub seed: u64,
    pub task: String,
    pub episode: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub family: Family,
    pub method: Method,
    pub window: usize,
    pub threshold: f64,
    pub max_episodes: usize,
    pub rows: Vec<EpisodeRow>,
    pub timings: Vec<TimingRow>,
}

impl MetricsLog {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            family: cfg.family,
            method: cfg.method,
            window: cfg.window,
            threshold: 1.0 - cfg.delta,
            max_episodes: cfg.max_episodes,
            rows: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn record(&mut self, seed: u64, task: &str, level: usize, stat: &EpisodeStat) {
        self.rows.push(EpisodeRow {
            method: self.method,
            seed,
            task: task.to_string(),
            level,
            episode: stat.episode,
            invoked: stat.invoked,
            reward: stat.reward,
            average: stat.average,
            steps: stat.steps,
            segments: stat.segments,
            teleports: stat.teleports,
        });
        self.timings.push(TimingRow {
            method: self.method,
            seed,
            task: task.to_string(),
            episode: stat.episode,
            wall_ms: stat.wall_ms,
        });
    }

    /// Seeds in order of first appearance.
    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, seed: u64, task: &'a str) -> impl Iterator<Item = &'a EpisodeRow> + 'a {
        self.rows.iter().filter(move |r| r.seed == seed && r.task == task)
    }

    pub fn summary(&self) -> Summary {
        summarize(self.family, self.method, self.window, self.threshold, self.max_episodes, &self.seeds(), &self.rows)
    }
}

/// First episode from which the trailing average stays at or above
/// `threshold` until the end of the rows. Averages are rebuilt from the
/// `invoked`/`reward` columns; a partially filled window never qualifies.
pub fn episodes_to_threshold<'a>(
    rows: impl IntoIterator<Item = &'a EpisodeRow>,
    window: usize,
    threshold: f64,
) -> Option<usize> {
    let mut avg = TrailingAverage::new(window);
    let mut since = None;
    for r in rows {
        if r.invoked {
            avg.push(r.reward);
        }
        if avg.reached(threshold) {
            since.get_or_insert(r.episode);
        } else {
            since = None;
        }
    }
    since
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Episodes this task was trained for.
    pub episodes: usize,
    pub to_threshold: Option<usize>,
    /// Sum of `to_threshold` over the task and all its sub-tasks.
    pub subtree_total: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub level: usize,
    pub headline: bool,
    pub seeds: Vec<SeedResult>,
    /// Mean of the subtree totals; absent when any seed is censored.
    pub mean: Option<f64>,
    /// Sample standard deviation of the subtree totals over seeds.
    pub std_over_seeds: Option<f64>,
}

impl TaskSummary {
    pub fn censored(&self) -> bool {
        self.mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub family: Family,
    pub method: Method,
    pub window: usize,
    pub threshold: f64,
    pub max_episodes: usize,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskSummary>,
}

impl Summary {
    pub fn task(&self, name: &str) -> Option<&TaskSummary> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn read(path: &Path) -> Result<Summary> {
        let file = BufReader::new(fs::File::open(path)?);
        serde_json::from_reader(file).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn summarize(
    family: Family,
    method: Method,
    window: usize,
    threshold: f64,
    max_episodes: usize,
    seeds: &[u64],
    rows: &[EpisodeRow],
) -> Summary {
    let headline = family.headline_tasks();
    let own = |seed: u64, task: Task| {
        let rs = rows.iter().filter(|r| r.seed == seed && r.task == task.name());
        episodes_to_threshold(rs, window, threshold)
    };
    let tasks = family
        .learning_order()
        .into_iter()
        .map(|(task, level)| {
            let per_seed: Vec<SeedResult> = seeds
                .iter()
                .map(|&seed| SeedResult {
                    seed,
                    episodes: rows.iter().filter(|r| r.seed == seed && r.task == task.name()).count(),
                    to_threshold: own(seed, task),
                    subtree_total: task.subtree().into_iter().map(|t| own(seed, t)).sum(),
                })
                .collect();
            let totals: Option<Vec<f64>> = per_seed.iter().map(|s| s.subtree_total.map(|t| t as f64)).collect();
            let stats = totals.as_deref().and_then(mean_and_std);
            TaskSummary {
                task: task.name().to_string(),
                level,
                headline: headline.contains(&task),
                seeds: per_seed,
                mean: stats.map(|s| s.0),
                std_over_seeds: stats.map(|s| s.1),
            }
        })
        .collect();
    Summary {
        family,
        method,
        window,
        threshold,
        max_episodes,
        seeds: seeds.to_vec(),
        tasks,
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub const EPISODE_COLUMNS: [&str; 11] = [
    "method", "seed", "task", "level", "episode", "invoked", "reward", "average", "steps", "segments", "teleports",
];
pub const TIMING_COLUMNS: [&str; 5] = ["method", "seed", "task", "episode", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsFiles {
    pub episodes: PathBuf,
    pub timing: PathBuf,
    pub summary: PathBuf,
}

/// Writes the per-episode CSV, the timing CSV and the summary, each atomically.
pub fn write_metrics(log: &MetricsLog, dir: &Path) -> Result<MetricsFiles> {
    fs::create_dir_all(dir)?;
    let files = MetricsFiles {
        episodes: dir.join(EPISODES_FILE),
        timing: dir.join(TIMING_FILE),
        summary: dir.join(SUMMARY_FILE),
    };
    write_atomic(&files.episodes, &csv_bytes(&EPISODE_COLUMNS, &log.rows)?)?;
    write_atomic(&files.timing, &csv_bytes(&TIMING_COLUMNS, &log.timings)?)?;
    let summary = serde_json::to_vec_pretty(&log.summary()).map_err(|e| Error::Io(e.into()))?;
    write_atomic(&files.summary, &summary)?;
    Ok(files)
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Moves artifacts of an earlier run in `dir` into a timestamped
/// subdirectory. Returns that subdirectory, or `None` if there was nothing to keep.
pub fn archive_previous(dir: &Path) -> Result<Option<PathBuf>> {
    let present: Vec<&str> = ARTIFACTS.iter().copied().filter(|a| dir.join(a).exists()).collect();
    if present.is_empty() {
        return Ok(None);
    }
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f").to_string();
    let mut target = dir.join(format!("previous-{stamp}"));
    let mut n = 1;
    while target.exists() {
        target = dir.join(format!("previous-{stamp}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&target)?;
    for a in present {
        fs::rename(dir.join(a), target.join(a))?;
    }
    Ok(Some(target))
}

fn policy_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(POLICY_DIR).join(format!("seed-{seed}"))
}

/// Saves each implementation's policy as `<template id>.policy`.
pub fn save_implementations(d: &ImplementationSet<CraftState>, dir: &Path, seed: u64) -> Result<()> {
    let dir = policy_dir(dir, seed);
    fs::create_dir_all(&dir)?;
    for imp in d.iter() {
        let mut bytes = Vec::new();
        imp.policy.save(&mut bytes)?;
        write_atomic(&dir.join(format!("{}.policy", imp.id())), &bytes)?;
    }
    Ok(())
}

/// Rebuilds D from saved policies in top-down order. Templates without a
/// saved policy are left out.
pub fn load_implementations(family: Family, dir: &Path, seed: u64) -> Result<ImplementationSet<CraftState>> {
    let dir = policy_dir(dir, seed);
    let mut d = ImplementationSet::new();
    for stage in curriculum(family)?.stages {
        let path = dir.join(format!("{}.policy", stage.template.id));
        if !path.exists() {
            continue;
        }
        let policy = Policy::load(BufReader::new(fs::File::open(&path)?))?;
        d.insert(OptionImpl::new(stage.template, stage.actions, policy)?)?;
    }
    Ok(d)
}

/// Runs the saved hierarchy of `seed` from the top-level option without teleports.
pub fn evaluate_run(family: Family, dir: &Path, seed: u64, episodes: usize) -> Result<Evaluation> {
    let d = load_implementations(family, dir, seed)?;
    let env = CraftEnv::new(family.top_task(), family);
    let mut rng = seeded_rng(derive_seed(seed, "evaluation", 0));
    evaluate_flattened(&d, &env, episodes, &mut rng, &mut NoTrace)
}

/// Checks that the bottom-up task environments start episode `e` of each task
/// from the same map and position as the top-down curriculum does.
pub fn check_matched_starts(family: Family, seed: u64, episodes: usize) -> Result<()> {
    let top = CraftEnv::new(family.top_task(), family);
    for (task, _) in family.learning_order() {
        let own = CraftEnv::new(task, family);
        let stage_seed = derive_seed(seed, task.name(), 0);
        for e in 1..=episodes as u64 {
            let a = top.initial_state(&mut seeded_rng(derive_seed(stage_seed, "episode", e)));
            let b = own.initial_state(&mut seeded_rng(derive_seed(stage_seed, "episode", e)));
            if a != b {
                return Err(Error::IncompatibleRuns(format!(
                    "episode {e} of `{}` starts differently across methods",
                    task.name()
                )));
            }
        }
    }
    Ok(())
}

/// Result of one seed of an experiment.
pub struct SeedRun {
    pub seed: u64,
    /// Learned implementations; empty if the pipeline aborted.
    pub implementations: ImplementationSet<CraftState>,
    /// A convergence failure, if training ran out of budget.
    pub failure: Option<Error>,
}

/// Runs the configured method for every seed, appending each episode to
/// `log` as it finishes and calling `checkpoint` every [`CHECKPOINT_EVERY`]
/// episodes. Convergence failures are kept per seed and the remaining seeds
/// still run; any other error stops the experiment with `log` holding the
/// episodes recorded so far.
pub fn run_experiment(
    cfg: &RunConfig,
    log: &mut MetricsLog,
    checkpoint: &mut dyn FnMut(&MetricsLog) -> Result<()>,
) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let train = cfg.train_config();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut flush_error = None;
        let mut trace = NoTrace;
        let mut on_episode = |task: &str, level: usize, stat: &EpisodeStat| {
            log.record(seed, task, level, stat);
            if log.rows.len().is_multiple_of(CHECKPOINT_EVERY) && flush_error.is_none() {
                flush_error = checkpoint(log).err();
            }
        };
        let mut hooks = Hooks {
            trace: &mut trace,
            on_episode: &mut on_episode,
        };
        let run = match cfg.method {
            Method::Templates => match run_pipeline(&curriculum(cfg.family)?, &train, seed, &mut hooks) {
                Ok(run) => SeedRun {
                    seed,
                    implementations: run.implementations,
                    failure: None,
                },
                Err(e) if e.is_convergence_failure() => SeedRun {
                    seed,
                    implementations: ImplementationSet::new(),
                    failure: Some(e),
                },
                Err(e) => return Err(e),
            },
            Method::BaselineOvi => {
                check_matched_starts(cfg.family, seed, 3)?;
                let run = train_bottom_up(&craft_bottom_up_tasks(cfg.family)?, &train, seed, &mut hooks)?;
                let failure = run.reports.iter().find(|r| !r.converged).map(|r| Error::DidNotConverge {
                    template: r.template.clone(),
                    episodes: r.episodes,
                    final_average: r.final_average,
                });
                SeedRun {
                    seed,
                    implementations: run.implementations,
                    failure,
                }
            }
        };
        if let Some(e) = flush_error {
            return Err(e);
        }
        runs.push(run);
    }
    Ok(runs)
}

/// Reference totals (mean, std) printed beside the headline tasks.
pub fn reference_episodes(task: Task) -> Option<(f64, f64)> {
    match task {
        Task::GetGem => Some((12826.0, 2613.0)),
        Task::MakeAxe => Some((11283.0, 2255.0)),
        Task::MakeStick => Some((5026.0, 2231.0)),
        Task::GetGold => Some((10516.0, 2833.0)),
        Task::MakeBridge => Some((7974.0, 1853.0)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Stat { mean: f64, std: f64, seeds: usize },
    /// At least one seed never reached the threshold within the budget.
    Censored { limit: usize },
    Missing,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Stat { mean, std, .. } => write!(f, "{mean:.1} ± {std:.1}"),
            Cell::Censored { limit } => write!(f, ">{limit}"),
            Cell::Missing => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub task: Task,
    pub cells: Vec<Cell>,
    pub reference: Option<(f64, f64)>,
}

/// Headline tasks by method: subtree episodes-to-threshold, mean ± sample
/// std over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub family: Family,
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut header = vec!["task".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("reference".to_string());
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.task.name().to_string()];
            line.extend(r.cells.iter().map(|c| c.to_string()));
            line.push(r.reference.map_or("-".into(), |(m, s)| format!("{m:.1} ± {s:.1}")));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            writeln!(f, "{}", cells.join("  ").trim_end())?;
        }
        write!(
            f,
            "episodes until the trailing average stays above threshold, summed over each task's sub-tasks; mean ± sample std over seeds"
        )
    }
}

pub fn compare_report(runs: &[Summary]) -> Result<ComparisonTable> {
    let first = runs
        .first()
        .ok_or_else(|| Error::IncompatibleRuns("no runs to compare".into()))?;
    if let Some(other) = runs.iter().find(|r| r.family != first.family) {
        return Err(Error::IncompatibleRuns(format!(
            "task families differ: {} and {}",
            first.family.name(),
            other.family.name()
        )));
    }
    let columns = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let dup = runs[..i].iter().filter(|p| p.method == r.method).count();
            if dup == 0 {
                r.method.name().to_string()
            } else {
                format!("{} #{}", r.method, dup + 1)
            }
        })
        .collect();
    let rows = first
        .family
        .headline_tasks()
        .into_iter()
        .map(|task| ComparisonRow {
            task,
            cells: runs
                .iter()
                .map(|r| match r.task(task.name()) {
                    None => Cell::Missing,
                    Some(t) => match (t.mean, t.std_over_seeds) {
                        (Some(mean), Some(std)) => Cell::Stat {
                            mean,
                            std,
                            seeds: t.seeds.len(),
                        },
                        _ => Cell::Censored {
                            limit: r.max_episodes,
                        },
                    },
                })
                .collect(),
            reference: reference_episodes(task),
        })
        .collect();
    Ok(ComparisonTable {
        family: first.family,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, task: &str, episode: usize, invoked: bool, reward: f64) -> EpisodeRow {
        EpisodeRow {
            method: Method::Templates,
            seed,
            task: task.into(),
            level: 1,
            episode,
            invoked,
            reward,
            average: 0.0,
            steps: 10,
            segments: usize::from(invoked),
            teleports: 0,
        }
    }

    fn stat(episode: usize) -> EpisodeStat {
        EpisodeStat {
            episode,
            invoked: true,
            reward: 1.0,
            steps: 7,
            segments: 1,
            teleports: 2,
            average: 1.0,
            wall_ms: 0.25,
        }
    }

    #[test]
    fn empty_config_gets_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let gem = &cfg.resolved_learners()["get_gem"];
        assert_eq!(gem.horizon, 100);
        assert_eq!(gem.memory_size, 2000);
        assert_eq!(gem.learn_frequency, 2000);
        assert_eq!(gem.learning_rate, 0.001);
        assert_eq!(gem.gamma, 0.99);
        assert_eq!(cfg.resolved_learners()["make_axe"].memory_size, 1000);
        assert_eq!(cfg.resolved_learners()["make_stick"].memory_size, 800);
    }

    #[test]
    fn gold_family_horizons() {
        let cfg = parse_config("family = \"get_gold\"").unwrap();
        let r = cfg.resolved_learners();
        assert_eq!(r["get_gold"].horizon, 100);
        assert_eq!(r["make_bridge"].horizon, 50);
    }

    #[test]
    fn out_of_range_gamma_is_rejected() {
        let err = parse_config("[learner_config]\ngamma = 1.2\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "gamma"), "{err}");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = parse_config("seeds = [1, 2]\nwindow = \"wide\"\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_config("\n\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_or_missing_seeds_are_rejected() {
        assert!(parse_config("seeds = []").is_err());
        assert!(parse_config("seeds = [4, 4]").is_err());
    }

    #[test]
    fn echo_reflects_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config("[learner_config]\nlearning_rate = 0.01\n").unwrap();
        let path = cfg.write_echo(dir.path()).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let echoed: toml::Table = toml::from_str(&text).unwrap();
        let gem = &echoed["resolved"]["get_gem"];
        assert_eq!(gem["learning_rate"].as_float(), Some(0.01));
        assert_eq!(gem["memory_size"].as_integer(), Some(2000));
        assert_eq!(echoed["run"]["learner_config"]["learning_rate"].as_float(), Some(0.01));
    }

    #[test]
    fn threshold_needs_a_full_window_and_must_hold() {
        let rows: Vec<EpisodeRow> = [1.0, 1.0, 0.0, 1.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| row(1, "t", i + 1, true, r))
            .collect();
        // window 2, threshold 0.75: reached at 2, lost at 3 and 4, regained at 5
        assert_eq!(episodes_to_threshold(&rows, 2, 0.75), Some(5));
        assert_eq!(episodes_to_threshold(&rows[..1], 2, 0.75), None);
        assert_eq!(episodes_to_threshold(&rows[..3], 2, 0.75), None);
        assert_eq!(episodes_to_threshold(&[], 2, 0.75), None);
    }

    #[test]
    fn uninvoked_episodes_do_not_move_the_window() {
        let rows = vec![
            row(1, "t", 1, true, 1.0),
            row(1, "t", 2, false, 0.0),
            row(1, "t", 3, true, 1.0),
            row(1, "t", 4, false, 0.0),
        ];
        assert_eq!(episodes_to_threshold(&rows, 2, 0.8), Some(3));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_and_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_and_std(&[3.0]), Some((3.0, 0.0)));
        assert_eq!(mean_and_std(&[]), None);
    }

    /// `failures` zero-reward episodes followed by successes until `n` episodes.
    fn converged_rows(seed: u64, task: Task, failures: usize, n: usize) -> Vec<EpisodeRow> {
        (1..=n).map(|e| row(seed, task.name(), e, true, if e > failures { 1.0 } else { 0.0 })).collect()
    }

    #[test]
    fn subtree_totals_sum_sub_tasks() {
        let mut rows = Vec::new();
        for (task, failures) in [(Task::GetWood, 3), (Task::GetIron, 0), (Task::MakeBridge, 1), (Task::GetGold, 0)] {
            rows.extend(converged_rows(9, task, failures, 8));
        }
        // window 2: threshold first held from episode failures + 2
        let s = summarize(Family::Gold, Method::Templates, 2, 0.8, 100, &[9], &rows);
        let total = |t: &str| s.task(t).unwrap().seeds[0].subtree_total;
        assert_eq!(total("get_wood"), Some(5));
        assert_eq!(total("make_bridge"), Some(3 + 5 + 2));
        assert_eq!(total("get_gold"), Some(2 + 3 + 5 + 2));
        assert!(s.task("get_gold").unwrap().headline);
        assert!(!s.task("get_iron").unwrap().headline);
    }

    #[test]
    fn censored_sub_task_censors_the_total() {
        let mut rows = converged_rows(1, Task::GetWood, 0, 4);
        rows.extend((1..=4).map(|e| row(1, "get_iron", e, true, 0.0)));
        let s = summarize(Family::Gold, Method::BaselineOvi, 2, 0.8, 4, &[1], &rows);
        assert!(s.task("make_bridge").unwrap().censored());
        assert!(!s.task("get_wood").unwrap().censored());
    }

    #[test]
    fn write_metrics_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::new(&RunConfig::default());
        let files = write_metrics(&log, dir.path()).unwrap();
        let text = fs::read_to_string(&files.episodes).unwrap();
        assert_eq!(text, format!("{}\n", EPISODE_COLUMNS.join(",")));
        for e in 1..=3 {
            log.record(1, "get_gem", 1, &stat(e));
        }
        let files = write_metrics(&log, dir.path()).unwrap();
        let text = fs::read_to_string(&files.episodes).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "templates,1,get_gem,1,1,true,1.0,1.0,7,1,2");
        assert_eq!(read_episodes(&files.episodes).unwrap(), log.rows);
        assert!(!fs::read_to_string(files.episodes).unwrap().contains("0.25"));
        assert!(fs::read_to_string(files.timing).unwrap().contains("0.25"));
    }

    #[test]
    fn archive_keeps_previous_run() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(archive_previous(dir.path()).unwrap(), None);
        let mut log = MetricsLog::new(&RunConfig::default());
        log.record(1, "get_gem", 1, &stat(1));
        write_metrics(&log, dir.path()).unwrap();
        let kept = archive_previous(dir.path()).unwrap().unwrap();
        assert!(kept.join(EPISODES_FILE).exists());
        assert!(!dir.path().join(EPISODES_FILE).exists());
        write_metrics(&MetricsLog::new(&RunConfig::default()), dir.path()).unwrap();
        assert_eq!(read_episodes(&kept.join(EPISODES_FILE)).unwrap().len(), 1);
        assert_eq!(read_episodes(&dir.path().join(EPISODES_FILE)).unwrap().len(), 0);
    }

    fn summary_with(family: Family, method: Method, total: Option<usize>) -> Summary {
        let tasks = family
            .learning_order()
            .into_iter()
            .map(|(t, level)| TaskSummary {
                task: t.name().into(),
                level,
                headline: family.headline_tasks().contains(&t),
                seeds: vec![],
                mean: total.map(|v| v as f64),
                std_over_seeds: total.map(|_| 0.0),
            })
            .collect();
        Summary {
            family,
            method,
            window: 100,
            threshold: 0.8,
            max_episodes: 100_000,
            seeds: vec![1],
            tasks,
        }
    }

    #[test]
    fn compare_side_by_side() {
        let t = compare_report(&[
            summary_with(Family::Gem, Method::Templates, Some(900)),
            summary_with(Family::Gem, Method::BaselineOvi, None),
        ])
        .unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.columns, ["templates", "baseline_ovi"]);
        let text = t.to_string();
        assert!(text.contains(">100000"));
        assert!(text.contains("12826.0 ± 2613.0"));
        assert!(!text.contains("get_wood"));
    }

    #[test]
    fn compare_single_method_and_gold_rows() {
        let t = compare_report(&[summary_with(Family::Gold, Method::Templates, Some(5))]).unwrap();
        assert_eq!(t.columns.len(), 1);
        let tasks: Vec<Task> = t.rows.iter().map(|r| r.task).collect();
        assert_eq!(tasks, [Task::GetGold, Task::MakeBridge]);
        assert_eq!(t.rows[1].reference, Some((7974.0, 1853.0)));
    }

    #[test]
    fn compare_rejects_mixed_families() {
        let err = compare_report(&[
            summary_with(Family::Gem, Method::Templates, Some(1)),
            summary_with(Family::Gold, Method::BaselineOvi, Some(1)),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::IncompatibleRuns(_)));
        assert!(matches!(compare_report(&[]), Err(Error::IncompatibleRuns(_))));
    }

    #[test]
    fn methods_start_from_the_same_states() {
        check_matched_starts(Family::Gem, 5, 4).unwrap();
        check_matched_starts(Family::Gold, 5, 4).unwrap();
    }
}
