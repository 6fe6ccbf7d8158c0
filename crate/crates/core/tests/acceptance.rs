//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use option_templates::baseline::{exact_value_iteration, smdp_q_learning, sup_norm_distance, QLearningConfig};
use option_templates::craft::{curriculum, give_template, top_template, CraftEnv, CraftState, Family, Item, Task};
use option_templates::harness::{
    run_experiment, summarize, EpisodeRow, Method, MetricsLog, RunConfig, Summary, OUT_DIR_ENV,
};
use option_templates::learners::{finite_difference_check, random_instance};
use option_templates::smdp::{derive_seed, seeded_rng, teleport, Environment};
use option_templates::templates::{
    evaluate_flattened, run_pipeline, EventKind, Hooks, ImplementationSet, TraceEvent, TraceSink,
};
use rand::Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const THRESHOLD: f64 = 0.8;
const SEED_BUDGET_SECS: f64 = 30.0 * 60.0;
const Q_TOLERANCE: f64 = 1e-2;
const Q_UPDATE_BUDGET: usize = 200_000;
const EXACT_TOLERANCE: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;
const TELEPORTS: usize = 10_000;

/// Subtree episode limits for the headline tasks.
fn limit(task: Task) -> usize {
    match task {
        Task::GetGem => 64_130,
        Task::MakeAxe => 56_415,
        Task::MakeStick => 25_130,
        Task::GetGold => 52_580,
        Task::MakeBridge => 39_870,
        _ => unreachable!(),
    }
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id} {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

/// Streams trace events of a pipeline run and checks dispatch soundness.
struct TraceChecker {
    stage_ids: Vec<String>,
    stage: Option<usize>,
    depth: usize,
    events: u64,
    violations: Vec<String>,
}

impl TraceChecker {
    fn new(family: Family) -> Self {
        let stage_ids = curriculum(family)
            .unwrap()
            .stages
            .iter()
            .map(|s| s.template.id.clone())
            .collect();
        Self {
            stage_ids,
            stage: None,
            depth: 0,
            events: 0,
            violations: Vec::new(),
        }
    }

    fn violation(&mut self, e: &TraceEvent, what: &str) {
        if self.violations.len() < 10 {
            self.violations.push(format!("{what} at episode {} ({:?} {})", e.episode, e.kind, e.entry));
        } else {
            self.violations.push(String::new());
        }
    }

    fn finish(mut self) -> (u64, Vec<String>) {
        if self.depth != 0 {
            self.violations.push(format!("stack depth {} after the last episode", self.depth));
        }
        (self.events, self.violations)
    }
}

impl TraceSink for TraceChecker {
    fn record(&mut self, e: TraceEvent) {
        self.events += 1;
        if e.kind == EventKind::Root {
            if self.depth != 0 {
                self.violation(&e, "episode started with a non-empty stack");
                self.depth = 0;
            }
            if e.episode == 1 {
                self.stage = Some(self.stage.map_or(0, |s| s + 1));
            }
        }
        let Some(stage) = self.stage else {
            self.violation(&e, "event before the first episode");
            return;
        };
        let in_d = self.stage_ids[..stage].contains(&e.entry);
        match e.kind {
            EventKind::Teleport if in_d || e.in_d => self.violation(&e, "teleport into an implemented template"),
            EventKind::Descend if !in_d || !e.in_d => self.violation(&e, "descend without an implementation"),
            EventKind::TrainHere if e.entry != self.stage_ids[stage] => self.violation(&e, "trained a non-target"),
            _ => {}
        }
        match e.kind {
            EventKind::Root | EventKind::Descend | EventKind::TrainHere => self.depth += 1,
            EventKind::Pop | EventKind::Unwind => match self.depth.checked_sub(1) {
                Some(d) => self.depth = d,
                None => self.violation(&e, "pop from an empty stack"),
            },
            EventKind::Teleport | EventKind::Primitive => {}
        }
        if e.depth != self.depth {
            self.violation(&e, "recorded depth disagrees with push/pop count");
            self.depth = e.depth;
        }
    }
}

struct MethodRun {
    summary: Summary,
    rows: Vec<EpisodeRow>,
    implementations: Vec<ImplementationSet<CraftState>>,
    slowest_secs: f64,
    failures: Vec<String>,
}

fn config(family: Family, method: Method) -> RunConfig {
    RunConfig {
        family,
        method,
        seeds: SEEDS.to_vec(),
        ..RunConfig::default()
    }
}

/// Template pipeline with every event checked by a [`TraceChecker`].
fn run_templates(family: Family) -> (MethodRun, u64, Vec<String>) {
    let cfg = config(family, Method::Templates);
    let train = cfg.train_config();
    let cur = curriculum(family).unwrap();
    let mut log = MetricsLog::new(&cfg);
    let mut implementations = Vec::new();
    let mut failures = Vec::new();
    let mut slowest: f64 = 0.0;
    let (mut events, mut violations) = (0, Vec::new());
    for seed in SEEDS {
        let started = Instant::now();
        let mut checker = TraceChecker::new(family);
        let mut on_episode = |task: &str, level: usize, stat: &_| log.record(seed, task, level, stat);
        let result = run_pipeline(
            &cur,
            &train,
            seed,
            &mut Hooks {
                trace: &mut checker,
                on_episode: &mut on_episode,
            },
        );
        slowest = slowest.max(started.elapsed().as_secs_f64());
        let (n, v) = checker.finish();
        events += n;
        violations.extend(v);
        match result {
            Ok(run) => implementations.push(run.implementations),
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                implementations.push(ImplementationSet::new());
            }
        }
    }
    let run = MethodRun {
        summary: log.summary(),
        rows: log.rows,
        implementations,
        slowest_secs: slowest,
        failures,
    };
    (run, events, violations)
}

fn run_baseline(family: Family) -> MethodRun {
    let cfg = config(family, Method::BaselineOvi);
    let mut log = MetricsLog::new(&cfg);
    let mut implementations = Vec::new();
    let mut failures = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let started = Instant::now();
        let one = RunConfig {
            seeds: vec![seed],
            ..cfg.clone()
        };
        match run_experiment(&one, &mut log, &mut |_| Ok(())) {
            Ok(mut runs) => {
                let run = runs.remove(0);
                if let Some(e) = run.failure {
                    failures.push(format!("seed {seed}: {e}"));
                }
                implementations.push(run.implementations);
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
        slowest = slowest.max(started.elapsed().as_secs_f64());
    }
    let summary = summarize(family, Method::BaselineOvi, cfg.window, THRESHOLD, cfg.max_episodes, &SEEDS, &log.rows);
    MethodRun {
        summary,
        rows: log.rows,
        implementations,
        slowest_secs: slowest,
        failures,
    }
}

fn final_average(rows: &[EpisodeRow], seed: u64, task: Task) -> Option<f64> {
    rows.iter().rfind(|r| r.seed == seed && r.task == task.name()).map(|r| r.average)
}

fn fmt_totals(s: &Summary, task: Task) -> String {
    let t = s.task(task.name()).unwrap();
    let per: Vec<String> = t
        .seeds
        .iter()
        .map(|x| x.subtree_total.map_or(">L".into(), |v| v.to_string()))
        .collect();
    format!("[{}]", per.join(", "))
}

/// Headline thresholds and runtime for a template run.
fn check_templates(report: &mut Report, id: &str, family: Family, run: &MethodRun) {
    for task in family.headline_tasks() {
        let t = run.summary.task(task.name()).unwrap();
        let finals: Vec<f64> = SEEDS
            .iter()
            .map(|&s| final_average(&run.rows, s, task).unwrap_or(0.0))
            .collect();
        let reached = finals.iter().all(|&f| f >= THRESHOLD);
        let within = t.mean.is_some_and(|m| m <= limit(task) as f64);
        report.line(
            &format!("{id}.{}", task.name()),
            reached && within,
            format!(
                "final averages {finals:.3?} (need >= {THRESHOLD}), subtree episodes {} mean {:.0} (limit {})",
                fmt_totals(&run.summary, task),
                t.mean.unwrap_or(f64::INFINITY),
                limit(task)
            ),
        );
    }
    report.line(
        &format!("{id}.runtime"),
        run.slowest_secs <= SEED_BUDGET_SECS && run.failures.is_empty(),
        format!("slowest seed {:.1}s (limit {SEED_BUDGET_SECS}s) {:?}", run.slowest_secs, run.failures),
    );
}

/// Templates versus bottom-up training on matched seeds.
fn check_comparison(report: &mut Report, id: &str, family: Family, tpl: &MethodRun, base: &MethodRun) {
    for task in family.headline_tasks() {
        let (a, b) = (
            tpl.summary.task(task.name()).unwrap(),
            base.summary.task(task.name()).unwrap(),
        );
        let wins = a
            .seeds
            .iter()
            .zip(&b.seeds)
            .filter(|(x, y)| match (x.subtree_total, y.subtree_total) {
                (Some(x), Some(y)) => x < y,
                (Some(_), None) => true,
                _ => false,
            })
            .count();
        report.line(
            &format!("{id}.{}", task.name()),
            wins >= 2,
            format!(
                "templates {} vs baseline {}: fewer in {wins}/3 seeds (need 2)",
                fmt_totals(&tpl.summary, task),
                fmt_totals(&base.summary, task)
            ),
        );
    }
    // level-1 curves on the cumulative episode axis of each method
    let top = family.top_task();
    let mut worst = Vec::new();
    let mut ok = true;
    for seed in SEEDS {
        let own: Vec<&EpisodeRow> = tpl.rows.iter().filter(|r| r.seed == seed && r.task == top.name()).collect();
        let (Some(last), Some(first)) = (own.last(), own.first()) else {
            ok = false;
            continue;
        };
        let offset = tpl.rows.iter().filter(|r| r.seed == seed).position(|r| std::ptr::eq(r, *first)).unwrap();
        let converged_at = offset + last.episode;
        let base_seed: Vec<&EpisodeRow> = base.rows.iter().filter(|r| r.seed == seed).collect();
        let mut seen = 0;
        let mut peak: f64 = 0.0;
        for (x, r) in base_seed.iter().enumerate() {
            if x + 1 > converged_at {
                break;
            }
            if r.task == top.name() && r.level == 1 {
                seen += 1;
                if seen >= base.summary.window {
                    peak = peak.max(r.average);
                }
            }
        }
        ok &= peak <= last.average;
        worst.push(format!("seed {seed}: baseline peak {peak:.3} <= {:.3} by episode {converged_at}", last.average));
    }
    report.line(&format!("{id}.curve"), ok, worst.join("; "));
}

fn check_q_learning(report: &mut Report) {
    let started = Instant::now();
    let m = common::fixture();
    let exact = exact_value_iteration(&m, 1e-6).unwrap();
    let brute = common::brute_force_q(&m);
    let exact_err = sup_norm_distance(&m, &exact, &brute);
    let cfg = QLearningConfig::default();
    let learned = smdp_q_learning(&m, &cfg).unwrap();
    let err = sup_norm_distance(&m, &exact, &learned);
    let secs = started.elapsed().as_secs_f64();
    report.line(
        "C3",
        err <= Q_TOLERANCE && exact_err <= EXACT_TOLERANCE && cfg.updates <= Q_UPDATE_BUDGET && secs <= 10.0,
        format!(
            "sup error {err:.2e} (limit {Q_TOLERANCE}) after {} updates, exact vs enumeration {exact_err:.2e} (limit {EXACT_TOLERANCE}), {secs:.2}s",
            cfg.updates
        ),
    );
}

fn check_gradients(report: &mut Report) {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (params, batch) = random_instance(seed);
        worst = worst.max(finite_difference_check(&params, &batch, GRAD_STEP).unwrap().max());
    }
    let secs = started.elapsed().as_secs_f64();
    report.line(
        "C4",
        worst <= GRAD_TOLERANCE && secs <= 5.0,
        format!("max relative error {worst:.2e} over 20 instances (limit {GRAD_TOLERANCE}), {secs:.2}s"),
    );
}

fn check_teleports(report: &mut Report, gem: &MethodRun) {
    let mut rng = seeded_rng(derive_seed(0, "acceptance teleports", 0));
    let mut templates: Vec<_> = Item::ALL.iter().flat_map(|&i| [give_template(i, 1), give_template(i, 2)]).collect();
    templates.push(top_template(Family::Gem));
    templates.push(top_template(Family::Gold));
    let (mut done, mut bad) = (0, 0);
    while done < TELEPORTS {
        let family = if rng.random_bool(0.5) { Family::Gem } else { Family::Gold };
        let env = CraftEnv::new(family.top_task(), family);
        let mut s = env.initial_state(&mut rng);
        for item in Item::ALL {
            if rng.random_bool(0.3) {
                s.inventory.add(item);
            }
        }
        let t = &templates[rng.random_range(0..templates.len())];
        if !t.is_applicable(&s) {
            continue;
        }
        done += 1;
        match teleport(t, &s, &mut rng) {
            Ok(n) if t.goal_reached(&n) && n.map == s.map && n.pos == s.pos => {}
            _ => bad += 1,
        }
    }
    report.line("C5.teleport", bad == 0, format!("{bad} of {done} teleports missed the goal"));

    let env = CraftEnv::new(Task::GetGem, Family::Gem);
    let d = &gem.implementations[0];
    let mut trace: Vec<TraceEvent> = Vec::new();
    let eval = evaluate_flattened(d, &env, 100, &mut seeded_rng(derive_seed(1, "evaluation", 0)), &mut trace);
    let traced = trace.iter().filter(|e| e.kind == EventKind::Teleport).count();
    let ok = d.len() == Family::Gem.learning_order().len()
        && eval.as_ref().is_ok_and(|e| e.teleports == 0)
        && traced == 0;
    report.line(
        "C5.flattened",
        ok,
        format!(
            "{} implementations, {} teleports counted, {traced} in a {}-event trace",
            d.len(),
            eval.map_or_else(|e| e.to_string(), |e| e.teleports.to_string()),
            trace.len()
        ),
    );
}

fn train_binary(dir: &Path) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_optemplates"))
        .args(["train", "--task", "get_gem", "--seeds", "42"])
        .env(OUT_DIR_ENV, dir)
        .stderr(std::process::Stdio::null())
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("exit status {status}"));
    }
    std::fs::read(dir.join("episodes.csv")).map_err(|e| e.to_string())
}

fn check_reproducible(report: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let a = train_binary(&tmp.path().join("a"));
    let b = train_binary(&tmp.path().join("b"));
    let (ok, detail) = match (a, b) {
        (Ok(a), Ok(b)) => (a == b, format!("{} and {} bytes, identical: {}", a.len(), b.len(), a == b)),
        (a, b) => (false, format!("{:?} / {:?}", a.err(), b.err())),
    };
    report.line("C7", ok, detail);
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };
    check_q_learning(&mut report);
    check_gradients(&mut report);

    let (gem, gem_events, gem_violations) = run_templates(Family::Gem);
    check_templates(&mut report, "C1", Family::Gem, &gem);
    let gem_base = run_baseline(Family::Gem);
    check_comparison(&mut report, "C2", Family::Gem, &gem, &gem_base);
    check_teleports(&mut report, &gem);

    let (gold, gold_events, gold_violations) = run_templates(Family::Gold);
    let violations: Vec<_> = gem_violations.iter().chain(&gold_violations).collect();
    report.line(
        "C6",
        violations.is_empty() && gem_events > 0 && gold_events > 0,
        format!(
            "{} violations in {} trace events {:?}",
            violations.len(),
            gem_events + gold_events,
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    );

    check_reproducible(&mut report);

    check_templates(&mut report, "C8", Family::Gold, &gold);
    let gold_base = run_baseline(Family::Gold);
    check_comparison(&mut report, "C8", Family::Gold, &gold, &gold_base);
    if !gem_base.failures.is_empty() || !gold_base.failures.is_empty() {
        println!("note: baseline failures {:?} {:?}", gem_base.failures, gold_base.failures);
    }

    println!("{} criteria lines failed", report.failed);
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
