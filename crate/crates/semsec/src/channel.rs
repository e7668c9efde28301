//! MIMO Rayleigh wiretap-channel model.
//!
//! Real-valued channels: `H` has i.i.d. standard-normal entries, frames
//! are antenna-row matrices (`N_m x L_c` at the transmitter, `N_n x L_c`
//! at a receiver). Transmission is `H*Y + N` with AWGN of variance
//! `sigma^2`; receivers run MMSE equalization from perfect CSI.
//!
//! The `*_fwd`/`*_vjp` pairs expose the pieces the trainer needs to
//! backpropagate end to end: normalization is differentiated as a smooth
//! map of the frame, the channel and equalizer as fixed linear maps, and
//! the noise as a constant.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, matmul, sym_eigen, Mat};

/// A transmit or receive frame: rows are antennas, columns channel uses.
pub type Frame = Mat;

/// Channel matrix between transmitter and a receiver (`N_n x N_m`).
pub type ChannelMatrix = Mat;

/// Antenna counts, transmit power and per-link SNRs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub n_m: usize,
    pub n_n: usize,
    /// Average transmit power constraint (linear).
    pub power: f64,
    pub snr_leg_db: f64,
    pub snr_eve_db: f64,
}

impl ChannelConfig {
    pub fn new(n_m: usize, n_n: usize, power: f64, snr_leg_db: f64, snr_eve_db: f64) -> Result<Self> {
        let cfg = ChannelConfig {
            n_m,
            n_n,
            power,
            snr_leg_db,
            snr_eve_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_m != self.n_n {
            return Err(Error::Config(format!(
                "antenna counts must match (n_m = {}, n_n = {})",
                self.n_m, self.n_n
            )));
        }
        if self.n_m == 0 {
            return Err(Error::Config("antenna count must be positive".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Config(format!(
                "transmit power must be > 0, got {}",
                self.power
            )));
        }
        Ok(())
    }

    pub fn sigma2_leg(&self) -> f64 {
        snr_to_sigma2(self.snr_leg_db, self.power)
    }

    pub fn sigma2_eve(&self) -> f64 {
        snr_to_sigma2(self.snr_eve_db, self.power)
    }
}

/// Draws a channel matrix with i.i.d. N(0,1) entries.
pub fn sample_channel(cfg: &ChannelConfig, rng: &mut ChaCha12Rng) -> Result<ChannelMatrix> {
    cfg.validate()?;
    Ok(Mat::from_fn(cfg.n_n, cfg.n_m, |_, _| rng.sample(StandardNormal)))
}

/// Noise variance for a channel SNR in dB: `sigma^2 = P / 10^(snr/10)`.
pub fn snr_to_sigma2(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Context for backpropagating through [`normalize_power`].
#[derive(Debug, Clone)]
pub struct NormCtx {
    /// The pre-normalization frame.
    y: Mat,
    /// Frobenius norm of `y`.
    norm: f64,
    /// Target scale `sqrt(P * N_m * L_c)`.
    alpha: f64,
}

/// Scales a frame to satisfy the average transmit power constraint
/// exactly: `||out||_F^2 / (N_m * L_c) == P`.
pub fn normalize_power_fwd(y: &Frame, power: f64) -> Result<(Frame, NormCtx)> {
    if !(power > 0.0) {
        return Err(Error::Config(format!("power must be > 0, got {power}")));
    }
    let norm = y.frobenius_norm();
    if norm < 1e-12 {
        return Err(Error::Numerical(
            "normalize_power: degenerate frame (Frobenius norm below 1e-12)".into(),
        ));
    }
    let alpha = (power * (y.rows * y.cols) as f64).sqrt();
    let out = y.scale(alpha / norm);
    Ok((
        out,
        NormCtx {
            y: y.clone(),
            norm,
            alpha,
        },
    ))
}

pub fn normalize_power(y: &Frame, power: f64) -> Result<Frame> {
    normalize_power_fwd(y, power).map(|(out, _)| out)
}

/// Gradient of the normalization map: for `f(Y) = a*Y/||Y||`,
/// `df^T g = (a/||Y||) g - (a/||Y||^3) <g, Y> Y`.
pub fn normalize_power_vjp(ctx: &NormCtx, grad_out: &Mat) -> Mat {
    let inner = grad_out.dot(&ctx.y);
    let s1 = ctx.alpha / ctx.norm;
    let s2 = ctx.alpha * inner / (ctx.norm * ctx.norm * ctx.norm);
    let mut g = grad_out.scale(s1);
    for (gv, yv) in g.data.iter_mut().zip(&ctx.y.data) {
        *gv -= s2 * yv;
    }
    g
}

/// Sends a normalized frame through the fading channel with AWGN:
/// `H*Y + N`, noise i.i.d. N(0, sigma^2). During backpropagation the
/// noise is a constant, so the vjp is `H^T * g` ([`transmit_vjp`]).
pub fn transmit(
    y_norm: &Frame,
    h: &ChannelMatrix,
    sigma2: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Frame> {
    if h.cols != y_norm.rows {
        return Err(Error::shape(
            format!("{} rows", h.cols),
            format!("{} rows", y_norm.rows),
            "transmit frame vs channel",
        ));
    }
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let mut out = matmul(h, y_norm);
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for v in &mut out.data {
            let n: f64 = rng.sample(StandardNormal);
            *v += sd * n;
        }
    }
    Ok(out)
}

pub fn transmit_vjp(h: &ChannelMatrix, grad_out: &Mat) -> Mat {
    matmul(&h.transpose(), grad_out)
}

/// Context for backpropagating through [`mmse_equalize`].
#[derive(Debug, Clone)]
pub struct MmseCtx {
    /// `Z = (H*H^T + (sigma^2/P) I)^{-1} * H`; the equalizer is `Z^T`.
    z: Mat,
}

/// MMSE equalization `H^T (H H^T + (sigma^2/P) I)^{-1} Y`, computed via a
/// Cholesky solve of the regularized Gram matrix rather than an explicit
/// inverse. For fixed `H` this is a linear map of the received frame.
pub fn mmse_equalize_fwd(
    y_recv: &Frame,
    h: &ChannelMatrix,
    sigma2: f64,
    power: f64,
) -> Result<(Frame, MmseCtx)> {
    if sigma2 < 0.0 {
        return Err(Error::Config(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if !(power > 0.0) {
        return Err(Error::Config(format!("power must be > 0, got {power}")));
    }
    if h.rows != y_recv.rows {
        return Err(Error::shape(
            format!("{} rows", h.rows),
            format!("{} rows", y_recv.rows),
            "mmse_equalize frame vs channel",
        ));
    }
    let n = h.rows;
    let mut gram = matmul(h, &h.transpose());
    let reg = sigma2 / power;
    for i in 0..n {
        gram.set(i, i, gram.get(i, i) + reg);
    }
    let z = cholesky_solve(&gram, h).map_err(|e| {
        Error::Numerical(format!(
            "mmse_equalize: regularized Gram matrix not solvable ({e})"
        ))
    })?;
    let out = matmul(&z.transpose(), y_recv);
    Ok((out, MmseCtx { z }))
}

pub fn mmse_equalize(y_recv: &Frame, h: &ChannelMatrix, sigma2: f64, power: f64) -> Result<Frame> {
    mmse_equalize_fwd(y_recv, h, sigma2, power).map(|(out, _)| out)
}

pub fn mmse_equalize_vjp(ctx: &MmseCtx, grad_out: &Mat) -> Mat {
    matmul(&ctx.z, grad_out)
}

/// Dumps channel realizations to CSV for debugging. Column order:
/// `frame_id,row,col,value`.
pub fn dump_channels_csv(channels: &[ChannelMatrix], path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("frame_id,row,col,value\n");
    for (frame_id, h) in channels.iter().enumerate() {
        for row in 0..h.rows {
            for col in 0..h.cols {
                let _ = writeln!(out, "{frame_id},{row},{col},{}", h.get(row, col));
            }
        }
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Right singular vectors of `H`, columns ordered by descending singular
/// value; the classical non-learned precoding baseline.
pub fn svd_precoder(h: &ChannelMatrix) -> Result<Mat> {
    if !h.is_finite() {
        return Err(Error::Numerical("svd_precoder: non-finite channel".into()));
    }
    let gram = matmul(&h.transpose(), h);
    let (_eig, v) = sym_eigen(&gram)?;
    Ok(v)
}

/// Full SVD `H = U * diag(sigma) * V^T` built from the Gram eigensystem.
/// Columns of `U` corresponding to zero singular values are zero.
pub fn svd(h: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let gram = matmul(&h.transpose(), h);
    let (eig, v) = sym_eigen(&gram)?;
    let sigma: Vec<f64> = eig.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let hv = matmul(h, &v);
    let mut u = Mat::zeros(h.rows, v.cols);
    for j in 0..v.cols {
        if sigma[j] > 1e-12 {
            for i in 0..h.rows {
                u.set(i, j, hv.get(i, j) / sigma[j]);
            }
        }
    }
    Ok((u, sigma, v))
}
