use semsec::harness::{sweep_snr, ExperimentConfig};
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.arch.codec_hidden = 48;
    cfg.arch.tje_hidden = 32;
    cfg.arch.gje_hidden = 32;
    cfg.train.epoch_scale = 0.04;
    cfg.train.decision_steps = 60;
    cfg.train.epochs_per_decision = 5;
    cfg.agent.batch_size = 16;
    cfg.agent.warmup = 16;
    cfg.sweep.snr_grid_db = vec![0.0, 10.0, 20.0];
    cfg.sweep.seeds = vec![0];
    cfg.validate().unwrap();
    let t0 = Instant::now();
    let result = sweep_snr(&cfg, 8).unwrap();
    for row in &result.rows {
        println!(
            "snr {:>5}: leg {:.2} eve {:.2} gap {:.2}",
            row.x, row.psnr_leg_db, row.psnr_eve_db, row.gap_db
        );
    }
    println!("total {:.1?}", t0.elapsed());
}
