//! Central-difference check of the actor and critic gradients on random
//! small networks.

use option_templates::learners::{finite_difference_check, random_instance};

fn main() -> option_templates::Result<()> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (params, batch) = random_instance(seed);
        let r = finite_difference_check(&params, &batch, 1e-5)?;
        println!(
            "instance {seed:>2}: {:>4} parameters, batch {}, actor {:.2e}, critic {:.2e}",
            r.parameters,
            batch.len(),
            r.actor,
            r.critic
        );
        worst = worst.max(r.max());
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}
