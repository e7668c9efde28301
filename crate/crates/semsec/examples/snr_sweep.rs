//! A miniature PSNR-versus-SNR sweep with CSV and SVG artifacts, the
//! same path the `semsec sweep-snr` subcommand runs at full scale.
//!
//! Run with: cargo run --release -p semsec --example snr_sweep
//! (writes out/example_sweep/sweep_snr.{csv,svg}; a few minutes)

use semsec::harness::{emit_csv, emit_plot, sweep_snr, ExperimentConfig};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.height = 16;
    cfg.data.width = 16;
    cfg.data.channels = 3;
    cfg.data.train_images = 400;
    cfg.data.eval_images = 64;
    cfg.data.test_images = 128;
    cfg.arch.codec_hidden = 64;
    cfg.arch.tje_hidden = 32;
    cfg.arch.gje_hidden = 32;
    cfg.train.batch_size = 32;
    cfg.train.epoch_scale = 0.08;
    cfg.train.decision_steps = 12;
    cfg.train.epochs_per_decision = 3;
    cfg.agent.batch_size = 8;
    cfg.agent.warmup = 8;
    cfg.sweep.snr_grid_db = vec![0.0, 10.0, 20.0];
    cfg.validate().unwrap();

    println!("sweeping SNR {:?} dB at CR 1/96 (desk scale)...", cfg.sweep.snr_grid_db);
    let result = sweep_snr(&cfg, 11).unwrap();

    std::fs::create_dir_all("out/example_sweep").unwrap();
    emit_csv(&result, "out/example_sweep/sweep_snr.csv").unwrap();
    emit_plot(&result, "channel SNR (dB)", "out/example_sweep/sweep_snr.svg").unwrap();

    println!("\n{:>8} {:>10} {:>10} {:>8}", "SNR dB", "leg dB", "eve dB", "gap dB");
    for row in &result.rows {
        println!(
            "{:>8} {:>10.2} {:>10.2} {:>8.2}",
            row.x, row.psnr_leg_db, row.psnr_eve_db, row.gap_db
        );
    }
    println!("\nwrote out/example_sweep/sweep_snr.csv and .svg");
}
