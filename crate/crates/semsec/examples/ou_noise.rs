//! Ornstein-Uhlenbeck exploration noise: sample paths and stationary
//! statistics against the theoretical values.
//!
//! Run with: cargo run --release -p semsec --example ou_noise

use semsec::ddpg::OuProcess;
use semsec::rng::derive_stream;

fn main() {
    let (theta, sigma, dt) = (0.15, 0.2, 1.0);
    let mut ou = OuProcess::new(1, theta, sigma, dt);
    let mut rng = derive_stream(5, "ou");

    println!("one OU path (theta {theta}, sigma {sigma}, dt {dt}):");
    let mut path = Vec::new();
    for _ in 0..20 {
        path.push(ou.sample(&mut rng)[0]);
    }
    for chunk in path.chunks(5) {
        println!(
            "  {}",
            chunk
                .iter()
                .map(|v| format!("{v:+.3}"))
                .collect::<Vec<_>>()
                .join("  ")
        );
    }

    // Burn in, then estimate the stationary std and lag-1 autocorrelation.
    ou.reset();
    for _ in 0..1000 {
        ou.sample(&mut rng);
    }
    let n = 100_000;
    let mut prev = ou.sample(&mut rng)[0];
    let (mut sq, mut lag) = (prev * prev, 0.0);
    for _ in 1..n {
        let v = ou.sample(&mut rng)[0];
        sq += v * v;
        lag += v * prev;
        prev = v;
    }
    let var = sq / n as f64;
    let rho = lag / (n as f64 - 1.0) / var;
    let theory_std = sigma * (dt / (2.0 * theta * dt - theta * theta * dt * dt)).sqrt();
    let approx_std = sigma / (2.0f64 * theta).sqrt();
    println!("\nstationary statistics over {n} steps:");
    println!("  empirical std      {:.4}", var.sqrt());
    println!("  exact discrete std {theory_std:.4}");
    println!("  sigma/sqrt(2 theta) {approx_std:.4} (small-dt approximation)");
    println!("  lag-1 autocorrelation {rho:.4} (theory {:.4})", 1.0 - theta * dt);
}
