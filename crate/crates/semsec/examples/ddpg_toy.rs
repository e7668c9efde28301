//! DDPG sanity environment: a stateless quadratic bandit with reward
//! r(a) = -||a - a*||^2 over a 48-dimensional action. The deterministic
//! policy should land within l-infinity 0.1 of the optimum inside 200
//! decision steps.
//!
//! Run with: cargo run --release -p semsec --example ddpg_toy [seed]

use semsec::ddpg::run_toy_convergence;
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    println!("quadratic-reward bandit, dim 48, seed {seed}");
    let t0 = Instant::now();
    let report = run_toy_convergence(seed, 200).unwrap();
    match report.converged_at {
        Some(step) => println!(
            "converged at decision step {step} (final max |a - a*| = {:.4}) in {:.1?}",
            report.final_inf_norm,
            t0.elapsed()
        ),
        None => println!(
            "did not converge within {} steps (final max |a - a*| = {:.4})",
            report.steps, report.final_inf_norm
        ),
    }
}
