//! The whole system at desk scale: five training stages over a small
//! synthetic image set, ending with the security gap between the
//! legitimate receiver and the eavesdropper.
//!
//! Stage 1 trains the semantic autoencoder alone; stage 2 adds the two
//! jamming streams; stage 3 trains the eavesdropper's decoder against
//! the frozen transmitter; stage 4 lets the DDPG agent shape the three
//! precoders while the environment keeps adapting (with the
//! eavesdropper frozen); stage 5 fine-tunes under the best action found.
//!
//! Run with: cargo run --release -p semsec --example five_stage_training
//! (takes a couple of minutes on a laptop core)

use semsec::channel::ChannelConfig;
use semsec::codec::{generate_images, CodeShape, TextCorpus};
use semsec::ddpg::{DdpgAgent, DdpgConfig};
use semsec::rng::{derive_seed, derive_stream};
use semsec::trainer::*;
use std::time::Instant;

fn main() {
    let seed = 7u64;
    let (h, w, c) = (16, 16, 3);
    let channel_cfg = ChannelConfig::new(4, 4, 1.0, 10.0, 10.0).unwrap();
    let shape = CodeShape::new(1, h, w, c, 4).unwrap();
    let arch = ArchConfig {
        codec_hidden: 64,
        tje_hidden: 32,
        gje_hidden: 32,
        ..ArchConfig::default()
    };
    let corpus = TextCorpus::bundled(arch.vocab_size).unwrap();
    let mut sys = SemComSystem::new(channel_cfg, shape, &arch, h, w, c, corpus, 32, seed).unwrap();
    let mut streams = Streams::new(seed);

    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(600, h, w, c, &mut gen);
    let eval_mini = generate_images(96, h, w, c, &mut gen);
    let test = generate_images(200, h, w, c, &mut gen);
    println!(
        "dataset: {} train / {} eval / {} test images at {h}x{w}x{c}, CR = 1/96",
        train.len(),
        eval_mini.len(),
        test.len()
    );
    println!(
        "constant-mean predictor baseline: {:.2} dB\n",
        mse_to_psnr(test.constant_mean_mse())
    );

    let plan = StagePlan::scaled(0.15, 24, 4);
    let mut agent = DdpgAgent::new(
        DdpgConfig {
            batch_size: 8,
            warmup: 8,
            ..DdpgConfig::default()
        },
        seed,
    )
    .unwrap();

    let t0 = Instant::now();
    let out = run_five_stages(
        &mut sys,
        &mut streams,
        &mut agent,
        &train,
        &eval_mini,
        &test,
        &plan,
        derive_seed(seed, "eval"),
        |stage, _| {
            println!("stage {stage} complete ({:.1?})", t0.elapsed());
            Ok(())
        },
    )
    .unwrap();

    let n = out.policy_log.decisions.len();
    let head = &out.policy_log.decisions[..n.min(8)];
    let tail = &out.policy_log.decisions[n.saturating_sub(8)..];
    let mean = |d: &[DecisionLog]| d.iter().map(|x| x.reward).sum::<f64>() / d.len() as f64;
    println!("\nagent reward: first steps {:.2}, last steps {:.2}", mean(head), mean(tail));

    let r = &out.final_report;
    println!("\nfinal test-set results:");
    println!("  legitimate   {:.2} dB", r.psnr_leg_db);
    println!("  eavesdropper {:.2} dB", r.psnr_eve_db);
    println!("  security gap {:.2} dB", r.psnr_leg_db - r.psnr_eve_db);
}
