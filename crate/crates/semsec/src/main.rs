//! Thin command-line front end over the library; every subcommand maps
//! directly onto a `harness` entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semsec::error::Error;
use semsec::harness::{
    baseline_svd, emit_csv, emit_plot, resolve_out_dir, run_eval, run_train, selftest, sweep_cr,
    sweep_snr, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "semsec",
    about = "Secure semantic communication over MIMO wiretap channels: training, sweeps and self tests",
    version
)]
struct Cli {
    /// Path to a TOML experiment config (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Epoch scale factor; overrides the config's `train.epoch_scale`.
    #[arg(long, global = true)]
    scale: Option<f64>,

    /// SNR grid (dB) for sweep-snr, e.g. `--snr-grid 0,10,20`.
    #[arg(long, global = true, value_delimiter = ',')]
    snr_grid: Option<Vec<f64>>,

    /// CU grid for sweep-cr, e.g. `--cu-grid 1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    cu_grid: Option<Vec<usize>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the five training stages and write checkpoints, logs and the
    /// final report.
    Train,
    /// Load the stage-5 checkpoint from the output directory and report
    /// test-set PSNRs.
    Eval,
    /// PSNR vs channel SNR at fixed CU (stages 1-3 shared per seed).
    SweepSnr,
    /// PSNR vs compression ratio at fixed SNR.
    SweepCr,
    /// Run the oracle self tests (exit 3 on failure).
    Selftest,
    /// Non-learned reference: per-frame SVD precoding, no jamming.
    BaselineSvd,
    /// Write a config file with every default value.
    InitConfig,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(scale) = cli.scale {
        cfg.train.epoch_scale = scale;
    }
    if let Some(grid) = &cli.snr_grid {
        cfg.sweep.snr_grid_db = grid.clone();
    }
    if let Some(grid) = &cli.cu_grid {
        cfg.sweep.cu_grid = grid.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::InitConfig => {
            let cfg = ExperimentConfig::default();
            match &cli.config {
                Some(path) => {
                    std::fs::write(path, cfg.to_toml())?;
                    println!("wrote defaults to {}", path.display());
                }
                None => print!("{}", cfg.to_toml()),
            }
            return Ok(0);
        }
        Command::Selftest => {
            let seed = cli.seed.unwrap_or(0);
            let checks = selftest(seed);
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{} {} - {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                if !c.passed {
                    failed += 1;
                }
            }
            return Ok(if failed == 0 { 0 } else { 3 });
        }
        _ => {}
    }

    let cfg = load_config(cli)?;
    let out_dir = resolve_out_dir(cli.out.as_deref(), &cfg);
    match &cli.command {
        Command::Train => {
            std::fs::create_dir_all(&out_dir)?;
            let outcome = run_train(&cfg, cfg.seed, &out_dir)?;
            let r = &outcome.final_report;
            println!(
                "final test: PSNR_leg {:.2} dB, PSNR_eve {:.2} dB, gap {:.2} dB",
                r.psnr_leg_db,
                r.psnr_eve_db,
                r.psnr_leg_db - r.psnr_eve_db
            );
            println!("artifacts in {}", out_dir.display());
        }
        Command::Eval => {
            let report = run_eval(&cfg, cfg.seed, &out_dir)?;
            println!(
                "test: PSNR_leg {:.2} dB, PSNR_eve {:.2} dB, gap {:.2} dB (mse {:.5}/{:.5})",
                report.psnr_leg_db,
                report.psnr_eve_db,
                report.psnr_leg_db - report.psnr_eve_db,
                report.mse_leg,
                report.mse_eve
            );
        }
        Command::SweepSnr => {
            std::fs::create_dir_all(&out_dir)?;
            let result = sweep_snr(&cfg, cfg.seed)?;
            let csv = out_dir.join("sweep_snr.csv");
            let svg = out_dir.join("sweep_snr.svg");
            emit_csv(&result, &csv)?;
            emit_plot(&result, "channel SNR (dB)", &svg)?;
            for row in &result.rows {
                println!(
                    "snr {:>5} dB seed {}: leg {:.2} dB, eve {:.2} dB, gap {:.2} dB",
                    row.x, row.seed, row.psnr_leg_db, row.psnr_eve_db, row.gap_db
                );
            }
            println!("wrote {} and {}", csv.display(), svg.display());
        }
        Command::SweepCr => {
            std::fs::create_dir_all(&out_dir)?;
            let result = sweep_cr(&cfg, cfg.seed)?;
            let csv = out_dir.join("sweep_cr.csv");
            let svg = out_dir.join("sweep_cr.svg");
            emit_csv(&result, &csv)?;
            emit_plot(&result, "compression ratio", &svg)?;
            for row in &result.rows {
                println!(
                    "cr {:.4} seed {}: leg {:.2} dB, eve {:.2} dB, gap {:.2} dB",
                    row.x, row.seed, row.psnr_leg_db, row.psnr_eve_db, row.gap_db
                );
            }
            println!("wrote {} and {}", csv.display(), svg.display());
        }
        Command::BaselineSvd => {
            let report = baseline_svd(&cfg, cfg.seed)?;
            println!(
                "svd baseline: PSNR_leg {:.2} dB, PSNR_eve {:.2} dB, gap {:.2} dB",
                report.psnr_leg_db,
                report.psnr_eve_db,
                report.psnr_leg_db - report.psnr_eve_db
            );
        }
        Command::Selftest | Command::InitConfig => unreachable!(),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
