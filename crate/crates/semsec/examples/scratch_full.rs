use semsec::channel::ChannelConfig;
use semsec::codec::{generate_images, CodeShape, TextCorpus};
use semsec::ddpg::{DdpgAgent, DdpgConfig};
use semsec::trainer::*;
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let channel_cfg = ChannelConfig::new(4, 4, 1.0, 10.0, 10.0).unwrap();
    let shape = CodeShape::new(1, 32, 32, 3, 4).unwrap();
    let arch = ArchConfig {
        codec_hidden: 48,
        tje_hidden: 32,
        gje_hidden: 32,
        vocab_size: 1024,
        embed_dim: 16,
        l_t: 16,
    };
    let corpus = TextCorpus::bundled(1024).unwrap();
    let mut sys = SemComSystem::new(channel_cfg, shape, &arch, 32, 32, 3, corpus, 64, seed).unwrap();
    let mut streams = Streams::new(seed);
    let mut data_rng = semsec::rng::derive_stream(seed, "data/gen");
    let train = generate_images(2000, 32, 32, 3, &mut data_rng);
    let eval_mini = generate_images(256, 32, 32, 3, &mut data_rng);
    let test = generate_images(500, 32, 32, 3, &mut data_rng);
    println!("const-mean PSNR on test: {:.2} dB", mse_to_psnr(test.constant_mean_mse()));

    let plan = StagePlan::scaled(0.04, 60, 5); // 4,4,4, 300, 8
    let mut agent = DdpgAgent::new(DdpgConfig {
        batch_size: 16,
        warmup: 16,
        ..DdpgConfig::default()
    }, seed).unwrap();

    let t0 = Instant::now();
    let out = run_five_stages(
        &mut sys, &mut streams, &mut agent,
        &train, &eval_mini, &test, &plan, semsec::rng::derive_seed(seed, "eval"),
        |stage, _s| { println!("  stage {stage} done at {:?}", t0.elapsed()); Ok(()) },
    ).unwrap();
    println!("total {:.1?}", t0.elapsed());
    println!("final: psnr_leg={:.2} psnr_eve={:.2} gap={:.2}",
        out.final_report.psnr_leg_db, out.final_report.psnr_eve_db,
        out.final_report.psnr_leg_db - out.final_report.psnr_eve_db);
    let n = out.policy_log.decisions.len();
    let first: f64 = out.policy_log.decisions[..50.min(n)].iter().map(|d| d.reward).sum::<f64>() / 50.min(n) as f64;
    let last: f64 = out.policy_log.decisions[n.saturating_sub(50)..].iter().map(|d| d.reward).sum::<f64>() / 50.min(n) as f64;
    println!("reward first50={first:.2} last50={last:.2}");
}
