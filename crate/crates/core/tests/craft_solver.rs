mod common;

use option_templates::craft::{give_template, CraftEnv, Family, Item, Task};
use option_templates::smdp::{derive_seed, seeded_rng, teleport, Environment};

#[test]
fn every_task_is_solvable_within_its_step_limit() {
    for family in [Family::Gem, Family::Gold] {
        for task in common::all_tasks(family) {
            let env = CraftEnv::new(task, family);
            for seed in 0..40 {
                let mut rng = seeded_rng(derive_seed(seed, "solver", 0));
                let start = env.initial_state(&mut rng);
                let plan = common::scripted_plan(&start, task.goal_item(), task.step_limit())
                    .unwrap_or_else(|| panic!("{} seed {seed} has no plan\n{}", task.name(), start.render()));
                let mut s = start;
                let mut total = 0.0;
                for (i, &a) in plan.iter().enumerate() {
                    assert!(!env.is_terminal(&s));
                    let (next, done) = env.step(&s, a);
                    total += env.reward(&s, &next);
                    assert_eq!(done, i + 1 == plan.len(), "{} seed {seed} step {i}", task.name());
                    s = next;
                }
                assert_eq!(total, 1.0);
            }
        }
    }
}

#[test]
fn short_tasks_have_short_plans() {
    let env = CraftEnv::new(Task::GetWood, Family::Gem);
    for seed in 0..20 {
        let start = env.initial_state(&mut seeded_rng(seed));
        let plan = common::shortest_path_to(&start, Item::Wood, 40).unwrap();
        // at most a walk across the interior and one use
        assert!(plan.len() <= 2 * 10 + 1, "{}", plan.len());
        assert_eq!(plan.last(), Some(&option_templates::craft::Action::Use));
    }
}

#[test]
fn teleport_targets_are_realizable_from_the_start() {
    // each give_X template can be executed for real within its timeout
    for (family, items) in [
        (Family::Gem, vec![Item::Wood, Item::Iron, Item::Stick, Item::Axe]),
        (Family::Gold, vec![Item::Wood, Item::Iron, Item::Bridge]),
    ] {
        let env = CraftEnv::new(family.top_task(), family);
        for seed in 0..20 {
            let start = env.initial_state(&mut seeded_rng(seed + 500));
            for &item in &items {
                let t = give_template(item, 1);
                let plan = common::scripted_plan(&start, item, t.timeout());
                assert!(plan.is_some(), "{} on seed {seed}", t.id);
                let teleported = teleport(&t, &start, &mut seeded_rng(0)).unwrap();
                assert!(teleported.inventory.has(item));
            }
        }
    }
}
