//! A Craft episode by hand: render the map, walk around, then teleport
//! through a few templates and watch the inventory change.
//!
//!     cargo run --example craft_walkthrough -- get_gold 3

use option_templates::craft::{give_template, Action, CraftEnv, Family, Item};
use option_templates::smdp::{seeded_rng, teleport, Environment};

fn inventory(s: &option_templates::craft::CraftState) -> String {
    let held: Vec<String> = Item::ALL
        .iter()
        .filter(|&&i| s.inventory.has(i))
        .map(|i| format!("{}x{}", i.name(), s.inventory.count(*i)))
        .collect();
    if held.is_empty() {
        "(empty)".into()
    } else {
        held.join(" ")
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let family = args.next().and_then(|f| Family::from_name(&f)).unwrap_or(Family::Gem);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let env = CraftEnv::new(family.top_task(), family);
    let mut rng = seeded_rng(seed);
    let mut s = env.initial_state(&mut rng);
    println!("{} seed {seed}, step limit {}", family.top_task(), family.top_task().step_limit());
    print!("{}", s.render());

    for a in [Action::Up, Action::Up, Action::Left, Action::Use] {
        let (next, done) = env.step(&s, a);
        println!("{:>5} -> pos {:?} inventory {} done {done}", a.name(), next.pos, inventory(&next));
        s = next;
    }

    // teleports sample a state in the template's goal set; map and position stay put
    let plan: &[Item] = match family {
        Family::Gem => &[Item::Wood, Item::Stick, Item::Iron, Item::Axe],
        Family::Gold => &[Item::Wood, Item::Iron, Item::Bridge],
    };
    for &item in plan {
        let t = give_template(item, 1);
        if !t.is_applicable(&s) {
            println!("skip     {:<12} (already holding {})", t.id, item.name());
            continue;
        }
        s = teleport(&t, &s, &mut rng).expect("template applies");
        println!("teleport {:<12} -> {}", t.id, inventory(&s));
    }
    let goal = family.top_task().goal_item();
    println!("holding {}: {}", goal.name(), s.inventory.has(goal));
}
