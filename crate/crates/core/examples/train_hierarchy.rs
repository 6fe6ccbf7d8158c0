//! Top-down training of a Craft family with option templates, followed by
//! a teleport-free evaluation of the learned hierarchy.
//!
//!     cargo run --release --example train_hierarchy -- get_gold 7

use option_templates::craft::{curriculum, Family};
use option_templates::smdp::{derive_seed, seeded_rng};
use option_templates::templates::{
    evaluate_flattened, run_pipeline, EpisodeStat, EventKind, Hooks, NoTrace, TraceEvent, TrainConfig,
};

fn main() -> option_templates::Result<()> {
    let mut args = std::env::args().skip(1);
    let family = args.next().and_then(|f| Family::from_name(&f)).unwrap_or(Family::Gold);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let cur = curriculum(family)?;
    for stage in &cur.stages {
        println!("level {} {:<12} trains {}", stage.level, stage.name, stage.template.id);
    }

    let mut trace = NoTrace;
    let mut progress = |task: &str, level: usize, s: &EpisodeStat| {
        if s.episode.is_multiple_of(1000) {
            eprintln!("  {task} (level {level}) episode {} average {:.2}", s.episode, s.average);
        }
    };
    let run = run_pipeline(
        &cur,
        &TrainConfig::default(),
        seed,
        &mut Hooks {
            trace: &mut trace,
            on_episode: &mut progress,
        },
    )?;
    for r in &run.reports {
        println!("{:<12} converged after {:>6} episodes (average {:.2})", r.name, r.episodes, r.final_average);
    }

    let mut events: Vec<TraceEvent> = Vec::new();
    let eval = evaluate_flattened(
        &run.implementations,
        &cur.env,
        100,
        &mut seeded_rng(derive_seed(seed, "evaluation", 0)),
        &mut events,
    )?;
    println!(
        "flattened: average reward {:.2} over {} episodes, {} teleports",
        eval.average_reward, eval.episodes, eval.teleports
    );
    println!("first episode of the trace:");
    for e in events.iter().take_while(|e| e.episode == 1).filter(|e| e.kind != EventKind::Primitive) {
        let what = if e.entry.is_empty() { &e.frame } else { &e.entry };
        println!("  {:indent$}{:?} {what}", "", e.kind, indent = 2 * e.depth);
    }
    Ok(())
}
