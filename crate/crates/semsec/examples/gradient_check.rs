//! Verifies analytic gradients against central finite differences: every
//! layer kind in isolation, then the entire transmit/receive chain
//! (encode, precode, normalize, noiseless channel, equalize, decode, MSE).
//!
//! Run with: cargo run --release -p semsec --example gradient_check

use semsec::linalg::Mat;
use semsec::nn::{grad_check, init_network, LayerSpec, MseLoss};
use semsec::trainer::pipeline_grad_check;

fn main() {
    let specs: Vec<(&str, Vec<LayerSpec>)> = vec![
        ("dense", vec![LayerSpec::dense(6, 4)]),
        (
            "dense+relu",
            vec![LayerSpec::dense(6, 8), LayerSpec::Relu, LayerSpec::dense(8, 3)],
        ),
        (
            "dense+tanh",
            vec![LayerSpec::dense(6, 8), LayerSpec::Tanh, LayerSpec::dense(8, 3)],
        ),
        (
            "dense+sigmoid",
            vec![LayerSpec::dense(6, 8), LayerSpec::Sigmoid, LayerSpec::dense(8, 3)],
        ),
        (
            "dense+reshape",
            vec![
                LayerSpec::dense(6, 8),
                LayerSpec::Reshape { rows: 2, cols: 4 },
                LayerSpec::dense(8, 3),
            ],
        ),
    ];

    println!("per-layer gradient checks (central differences, eps 1e-5):");
    for (name, spec) in &specs {
        let mut net = init_network(spec, 42).unwrap();
        let x = Mat::from_fn(4, 6, |i, j| 0.25 * i as f64 - 0.15 * j as f64 + 0.05);
        let loss = MseLoss {
            target: Mat::from_fn(4, net.out_features(), |i, j| 0.1 * (i + j) as f64),
        };
        let err = grad_check(&mut net, &x, &loss, 1e-5).unwrap();
        println!("  {name:<14} max relative error {err:.3e}");
    }

    println!("\nfull pipeline chain (noiseless links, all transmit-side nets):");
    let err = pipeline_grad_check(7).unwrap();
    println!("  encode -> precode -> normalize -> channel -> equalize -> decode -> MSE");
    println!("  max relative error {err:.3e} (tolerance 1e-3)");
}
