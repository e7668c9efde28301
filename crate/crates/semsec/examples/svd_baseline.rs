//! The classical non-learned reference: per-frame SVD precoding of the
//! legitimate channel with jamming disabled, against the same MMSE
//! receivers. Without jamming the eavesdropper reconstructs nearly as
//! well as the legitimate user.
//!
//! Run with: cargo run --release -p semsec --example svd_baseline

use semsec::channel::{sample_channel, svd_precoder, ChannelConfig};
use semsec::harness::{baseline_svd, ExperimentConfig};
use semsec::linalg::matmul;
use semsec::rng::derive_stream;

fn main() {
    // The precoder itself: right singular vectors, descending order.
    let cfg = ChannelConfig::new(4, 4, 1.0, 10.0, 10.0).unwrap();
    let h = sample_channel(&cfg, &mut derive_stream(2, "channel")).unwrap();
    let v = svd_precoder(&h).unwrap();
    let vtv = matmul(&v.transpose(), &v);
    println!(
        "V^T V deviates from identity by {:.2e} (orthonormal columns)",
        vtv.max_abs_diff(&semsec::linalg::Mat::identity(4))
    );

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
    cfg.train.epoch_scale = 0.15;
    cfg.validate().unwrap();

    println!("\ntraining the SVD-precoded baseline (no jamming)...");
    let report = baseline_svd(&cfg, 2).unwrap();
    println!("  legitimate   {:.2} dB", report.psnr_leg_db);
    println!("  eavesdropper {:.2} dB", report.psnr_eve_db);
    println!(
        "  gap          {:.2} dB  <- no protection without jamming",
        report.psnr_leg_db - report.psnr_eve_db
    );
}
