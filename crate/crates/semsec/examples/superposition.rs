//! Precoded superposition of the three transmit streams, and the round
//! trip between a flat agent action and the precoder matrices.
//!
//! Run with: cargo run --release -p semsec --example superposition

use semsec::linalg::Mat;
use semsec::rng::derive_stream;
use semsec::superpose::{reshape_action, superpose, PrecoderSet};

fn main() {
    let mut rng = derive_stream(3, "demo");
    let action: Vec<f64> = (0..48).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let v = reshape_action(&action, 4, 4).unwrap();
    println!("action of length {} -> three 4x4 precoders", action.len());
    println!("round trip intact: {}", v.flatten() == action);

    let s1 = Mat::from_fn(4, 8, |i, j| ((i * 8 + j) as f64 * 0.31).sin());
    let s2 = Mat::from_fn(4, 8, |i, j| ((i * 8 + j) as f64 * 0.17).cos());
    let s3 = Mat::from_fn(4, 8, |i, j| ((i + j) as f64 * 0.05) - 0.2);

    let y = superpose(&s1, &s2, &s3, &v).unwrap();
    println!("superposed frame is {}x{}", y.rows, y.cols);

    // With jamming precoders zeroed the semantic stream passes alone.
    let solo = PrecoderSet {
        v1: Mat::identity(4),
        v2: Mat::zeros(4, 4),
        v3: Mat::zeros(4, 4),
    };
    let y_solo = superpose(&s1, &s2, &s3, &solo).unwrap();
    println!(
        "identity V1, zero jamming: max |Y - S1| = {:.2e}",
        y_solo.max_abs_diff(&s1)
    );

    // Linearity in the semantic stream.
    let y_scaled = superpose(&s1.scale(2.0), &s2, &s3, &v).unwrap();
    let expect = y.add(&semsec::linalg::matmul(&v.v1, &s1));
    println!(
        "superpose(2*S1) == superpose(S1) + V1*S1: max diff {:.2e}",
        y_scaled.max_abs_diff(&expect)
    );
}
