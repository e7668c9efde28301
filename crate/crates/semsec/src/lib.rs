//! Secure semantic communication over MIMO fading wiretap channels.
//!
//! A transmitter encodes a source image together with two jamming streams
//! (encoded task-irrelevant text at the semantic layer, encoded Gaussian
//! noise at the physical layer), superposes them through three precoding
//! matrices, and sends the result over independent Rayleigh-fading MIMO
//! channels to a legitimate receiver and an eavesdropper, both running
//! MMSE equalization. A DDPG agent learns the precoders to maximize the
//! legitimate user's reconstruction quality while degrading the
//! eavesdropper's, and a five-stage schedule trains the whole system.
//!
//! # Modules
//!
//! | Module | What it does |
//! |--------|--------------|
//! | [`nn`] | dense-layer networks, backprop, gradient checking, SGD/Adam |
//! | [`checkpoint`] | versioned binary network serialization |
//! | [`channel`] | Rayleigh MIMO channel, power normalization, MMSE equalizer, SVD precoding |
//! | [`codec`] | semantic/text-jamming/Gaussian-jamming encoders and the two decoders |
//! | [`superpose`] | precoder application and stream superposition |
//! | [`ddpg`] | actor-critic agent, replay buffer, OU exploration noise |
//! | [`trainer`] | the five-stage training schedule and PSNR evaluation |
//! | [`harness`] | config files, experiment sweeps, CSV/SVG emission, self tests |
//!
//! # Getting started
//!
//! The `examples/` directory has one runnable program per capability;
//! start with `cargo run --release -p semsec --example five_stage_training`.
//! The `semsec` binary wraps the same library calls behind subcommands
//! (`train`, `eval`, `sweep-snr`, `sweep-cr`, `selftest`, `baseline-svd`,
//! `init-config`).

pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod ddpg;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod superpose;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Mat;
