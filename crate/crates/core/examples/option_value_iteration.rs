//! Exact value iteration and tabular SMDP Q-learning on the four-state
//! fixture, plus an SMDP built from primitive options over a small chain.

use option_templates::baseline::{
    exact_value_iteration, four_state_fixture, smdp_from_options, smdp_q_learning, sup_norm_distance,
    ExplicitMdp, ExplicitOption, QLearningConfig,
};

fn main() -> option_templates::Result<()> {
    let m = four_state_fixture();
    print!("{}", m.to_text());

    let exact = exact_value_iteration(&m, 1e-10)?;
    let cfg = QLearningConfig::default();
    let learned = smdp_q_learning(&m, &cfg)?;
    println!("\n{:<6} {:>10} {:>10} {:>10} {:>10}", "state", "Q*(short)", "Q(short)", "Q*(long)", "Q(long)");
    for s in 0..m.n_states() {
        if m.is_terminal(s) {
            continue;
        }
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            m.states[s], exact[s][0], learned[s][0], exact[s][1], learned[s][1]
        );
    }
    println!("sup-norm error after {} updates: {:.2e}", cfg.updates, sup_norm_distance(&m, &exact, &learned));

    // a 5-cell chain; "dash" keeps moving right until it reaches the end
    let n = 5;
    let mut chain = ExplicitMdp::new(0.95, n, 2);
    for s in 0..n {
        chain.transitions[s][0] = vec![(s.saturating_sub(1), 1.0)];
        chain.transitions[s][1] = vec![((s + 1).min(n - 1), 1.0)];
        chain.rewards[s][1] = if s + 1 == n - 1 { 1.0 } else { 0.0 };
    }
    let mut end = vec![false; n];
    end[n - 1] = true;
    let dash = ExplicitOption {
        name: "dash".into(),
        initiation: vec![true; n],
        policy: vec![vec![0.0, 1.0]; n],
        terminates: end.clone(),
        timeout: None,
    };
    let step = ExplicitOption {
        name: "step".into(),
        initiation: vec![true; n],
        policy: vec![vec![0.0, 1.0]; n],
        terminates: vec![true; n],
        timeout: Some(1),
    };
    let smdp = smdp_from_options(&chain, &[dash, step], Some(n))?;
    let q = exact_value_iteration(&smdp, 1e-10)?;
    for (s, row) in q.iter().enumerate().take(n - 1) {
        println!("cell {s}: dash {:.4}  step {:.4}", row[0], row[1]);
    }
    Ok(())
}
