//! Five-stage training of the secure semantic communication system.
//!
//! Stage 1 trains the semantic encoder and Bob's decoder alone
//! (`Y = S1`). Stage 2 activates multi-level jamming (`Y = S1+S2+S3`)
//! and trains everything except Eve's decoder. Stage 3 trains Eve's
//! decoder alone against the frozen transmitter. Stage 4 alternates: the
//! agent fixes a precoder action for `K` epochs of environment training
//! under `L4 = MSE(X, X1) - lambda_r * MSE(X, X2)`, then receives the
//! held-out PSNRs as reward and state and updates its networks. Stage 5
//! replays the highest-reward action and fine-tunes the environment.
//!
//! The environment pipeline (encode, superpose, normalize, fade, MMSE
//! equalize, decode) is differentiated manually through the vjp
//! companions in [`crate::channel`] and [`crate::superpose`];
//! [`pipeline_grad_check`] verifies the whole chain against central
//! finite differences.

use std::path::Path;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    mmse_equalize_fwd, mmse_equalize_vjp, normalize_power_fwd, normalize_power_vjp,
    sample_channel, svd_precoder, transmit, transmit_vjp, ChannelConfig, MmseCtx, NormCtx,
};
use crate::checkpoint::{load_network, save_network};
use crate::codec::{
    decode, frame_from_code_row, frame_grad_into_row, gauss_jam_encode, sample_gauss, sample_text,
    semantic_encode, text_jam_encode, CodeShape, GaussSource, ImageBatch, TextCorpus, TextEmbedder,
    TextSample,
};
use crate::ddpg::{build_state, compute_reward, DdpgAgent, Transition};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{init_network, LayerSpec, Network, OptimizerConfig};
use crate::rng::{derive_seed, derive_stream};
use crate::superpose::{reshape_action, superpose, superpose_vjp, PrecoderSet};

/// Peak signal-to-noise ratio for unit-range images:
/// `10*log10(1/MSE)` with the batch-mean MSE floored at 1e-10.
pub fn psnr(x: &ImageBatch, x_hat: &ImageBatch) -> Result<f64> {
    Ok(mse_to_psnr(mse(x, x_hat)?))
}

pub fn mse_to_psnr(mse: f64) -> f64 {
    10.0 * (1.0 / mse.max(1e-10)).log10()
}

/// Batch-mean squared error over every pixel.
pub fn mse(x: &ImageBatch, x_hat: &ImageBatch) -> Result<f64> {
    if x.data.rows != x_hat.data.rows || x.data.cols != x_hat.data.cols {
        return Err(Error::shape(
            format!("{}x{}", x.data.rows, x.data.cols),
            format!("{}x{}", x_hat.data.rows, x_hat.data.cols),
            "psnr/mse batches",
        ));
    }
    let n = (x.data.rows * x.data.cols) as f64;
    Ok(x
        .data
        .data
        .iter()
        .zip(&x_hat.data.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

fn mse_grad(x_hat: &Mat, x: &Mat, scale: f64) -> Mat {
    let n = (x.rows * x.cols) as f64;
    Mat {
        rows: x.rows,
        cols: x.cols,
        data: x_hat
            .data
            .iter()
            .zip(&x.data)
            .map(|(h, t)| scale * 2.0 * (h - t) / n)
            .collect(),
    }
}

/// Per-stage epoch counts, learning rates, and the stage-4 schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StagePlan {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    /// Decision time steps `T` in stage 4.
    pub decision_steps: usize,
    /// Environment epochs per decision `K`; stage 4 runs `T*K` epochs.
    pub epochs_per_decision: usize,
    pub stage5_epochs: usize,
    pub lr_stage123: f64,
    pub lr_stage4: f64,
    pub lr_stage5: f64,
    pub lambda_r: f64,
}

impl StagePlan {
    /// Full-scale settings: 100-epoch stages at 1e-3, T=500, K=15 at
    /// 5e-4, 200 stage-5 epochs at 2e-4, lambda 1.0.
    pub fn full() -> Self {
        StagePlan {
            stage1_epochs: 100,
            stage2_epochs: 100,
            stage3_epochs: 100,
            decision_steps: 500,
            epochs_per_decision: 15,
            stage5_epochs: 200,
            lr_stage123: 1e-3,
            lr_stage4: 5e-4,
            lr_stage5: 2e-4,
            lambda_r: 1.0,
        }
    }

    /// Desk-scale plan: stage epoch counts shrink by `scale` (at least
    /// one epoch each) and stage 4 runs an explicit `T x K`.
    pub fn scaled(scale: f64, decision_steps: usize, epochs_per_decision: usize) -> Self {
        let full = Self::full();
        let s = |e: usize| ((e as f64 * scale).round() as usize).max(1);
        StagePlan {
            stage1_epochs: s(full.stage1_epochs),
            stage2_epochs: s(full.stage2_epochs),
            stage3_epochs: s(full.stage3_epochs),
            decision_steps,
            epochs_per_decision,
            stage5_epochs: s(full.stage5_epochs),
            ..full
        }
    }

    pub fn stage4_epochs(&self) -> usize {
        self.decision_steps * self.epochs_per_decision
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_stage123", self.lr_stage123),
            ("lr_stage4", self.lr_stage4),
            ("lr_stage5", self.lr_stage5),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.decision_steps == 0 || self.epochs_per_decision == 0 {
            return Err(Error::Config("stage-4 schedule must be non-empty".into()));
        }
        Ok(())
    }
}

/// Network widths and text-pipeline sizes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchConfig {
    /// Hidden width of the semantic encoder and both decoders.
    pub codec_hidden: usize,
    pub tje_hidden: usize,
    pub gje_hidden: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Tokens per jamming-text sample.
    pub l_t: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            codec_hidden: 256,
            tje_hidden: 64,
            gje_hidden: 64,
            vocab_size: 1024,
            embed_dim: 16,
            l_t: 16,
        }
    }
}

/// Named random streams driving one training run.
pub struct Streams {
    pub channel: ChaCha12Rng,
    pub noise_leg: ChaCha12Rng,
    pub noise_eve: ChaCha12Rng,
    pub data: ChaCha12Rng,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Streams {
            channel: derive_stream(master_seed, "channel"),
            noise_leg: derive_stream(master_seed, "noise-leg"),
            noise_eve: derive_stream(master_seed, "noise-eve"),
            data: derive_stream(master_seed, "data"),
        }
    }
}

/// How the transmit frame is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxMode {
    /// `Y = S1` (stage 1).
    SemanticOnly,
    /// `Y = S1 + S2 + S3` (stages 2 and 3).
    IdentitySum,
    /// `Y = V1*S1 + V2*S2 + V3*S3` with the system's precoders (stages 4, 5).
    Precoded,
    /// `Y = V*S1` with `V` the per-frame SVD precoder of Bob's channel;
    /// jamming off. The non-learned reference.
    SvdBaseline,
}

impl TxMode {
    fn uses_jamming(&self) -> bool {
        matches!(self, TxMode::IdentitySum | TxMode::Precoded)
    }
}

/// The SemCom environment: five networks, code shape, channel setup and
/// the current precoders.
#[derive(Clone)]
pub struct SemComSystem {
    pub se: Network,
    pub tje: Network,
    pub gje: Network,
    pub sd1: Network,
    pub sd2: Network,
    pub shape: CodeShape,
    pub channel_cfg: ChannelConfig,
    pub corpus: TextCorpus,
    pub embedder: TextEmbedder,
    pub precoders: PrecoderSet,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub batch_size: usize,
    /// Multiplier on the environment learning rate; halved by the
    /// stage-4 non-finite-loss guard.
    pub lr_decay: f64,
}

impl SemComSystem {
    pub fn new(
        channel_cfg: ChannelConfig,
        shape: CodeShape,
        arch: &ArchConfig,
        height: usize,
        width: usize,
        channels: usize,
        corpus: TextCorpus,
        batch_size: usize,
        master_seed: u64,
    ) -> Result<Self> {
        channel_cfg.validate()?;
        let source_dim = height * width * channels;
        let code_dim = shape.code_dim();
        let embedder = TextEmbedder::new(arch.vocab_size, arch.embed_dim, arch.l_t, master_seed);
        let text_dim = embedder.text_dim();

        let seed_of = |name: &str| crate::rng::derive_seed(master_seed, name);
        let se = init_network(
            &[
                LayerSpec::dense(source_dim, arch.codec_hidden),
                LayerSpec::Relu,
                LayerSpec::dense(arch.codec_hidden, code_dim),
            ],
            seed_of("init/se"),
        )?;
        let tje = init_network(
            &[
                LayerSpec::dense(text_dim, arch.tje_hidden),
                LayerSpec::Relu,
                LayerSpec::dense(arch.tje_hidden, code_dim),
            ],
            seed_of("init/tje"),
        )?;
        let gje = init_network(
            &[
                LayerSpec::dense(source_dim, arch.gje_hidden),
                LayerSpec::Relu,
                LayerSpec::dense(arch.gje_hidden, code_dim),
            ],
            seed_of("init/gje"),
        )?;
        let decoder_spec = |seed: u64| {
            init_network(
                &[
                    LayerSpec::dense(code_dim, arch.codec_hidden),
                    LayerSpec::Relu,
                    LayerSpec::dense(arch.codec_hidden, source_dim),
                    LayerSpec::Sigmoid,
                ],
                seed,
            )
        };
        let sd1 = decoder_spec(seed_of("init/sd1"))?;
        // Eve mirrors Bob's architecture with her own initialization.
        let sd2 = decoder_spec(seed_of("init/sd2"))?;

        Ok(SemComSystem {
            se,
            tje,
            gje,
            sd1,
            sd2,
            shape,
            channel_cfg,
            corpus,
            embedder,
            precoders: PrecoderSet::identity(channel_cfg.n_m),
            height,
            width,
            channels,
            batch_size,
            lr_decay: 1.0,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Pre-drawn randomness for one minibatch: jamming sources and per-item
/// channel realizations (Bob's, and Eve's when her branch runs).
pub struct BatchDraws {
    pub texts: Vec<TextSample>,
    pub gauss: Vec<GaussSource>,
    pub h_bob: Vec<Mat>,
    pub h_eve: Vec<Mat>,
}

/// Draws jamming inputs and channels for `count` items. Per item, Bob's
/// channel is drawn before Eve's from the same stream; both links fade
/// independently and are redrawn every frame.
pub fn draw_batch(
    sys: &SemComSystem,
    streams: &mut Streams,
    count: usize,
    jamming: bool,
    eve: bool,
) -> Result<BatchDraws> {
    let mut texts = Vec::new();
    let mut gauss = Vec::new();
    if jamming {
        for _ in 0..count {
            texts.push(sample_text(&sys.corpus, &sys.embedder, &mut streams.data)?);
            gauss.push(sample_gauss(
                sys.height,
                sys.width,
                sys.channels,
                &mut streams.data,
            ));
        }
    }
    let mut h_bob = Vec::with_capacity(count);
    let mut h_eve = Vec::new();
    for _ in 0..count {
        h_bob.push(sample_channel(&sys.channel_cfg, &mut streams.channel)?);
        if eve {
            h_eve.push(sample_channel(&sys.channel_cfg, &mut streams.channel)?);
        }
    }
    Ok(BatchDraws {
        texts,
        gauss,
        h_bob,
        h_eve,
    })
}

struct ItemCtx {
    v: PrecoderSet,
    norm: NormCtx,
    h_bob: Mat,
    mmse_bob: MmseCtx,
    h_eve: Option<Mat>,
    mmse_eve: Option<MmseCtx>,
}

/// Everything needed to evaluate losses and run the backward pass.
pub struct ForwardPass {
    pub x_hat1: ImageBatch,
    pub x_hat2: Option<ImageBatch>,
    items: Vec<ItemCtx>,
    jamming: bool,
}

/// Runs the transmit pipeline for one minibatch: encode all streams,
/// superpose per item under `mode`, normalize to the power constraint,
/// fade through per-item channels with AWGN, MMSE-equalize, and decode.
pub fn forward_batch(
    sys: &mut SemComSystem,
    x: &ImageBatch,
    mode: TxMode,
    draws: &BatchDraws,
    streams: &mut Streams,
    eve: bool,
) -> Result<ForwardPass> {
    let count = x.len();
    let jamming = mode.uses_jamming();
    let shape = sys.shape;
    let (n_n, l_c) = (shape.n_n, shape.l_c);
    let power = sys.channel_cfg.power;
    let sigma2_leg = sys.channel_cfg.sigma2_leg();
    let sigma2_eve = sys.channel_cfg.sigma2_eve();

    let s1 = semantic_encode(x, &mut sys.se, &shape)?;
    let (s2, s3) = if jamming {
        (
            text_jam_encode(&draws.texts, &mut sys.tje, &shape)?,
            gauss_jam_encode(&draws.gauss, &mut sys.gje, &shape)?,
        )
    } else {
        (Mat::zeros(count, shape.code_dim()), Mat::zeros(count, shape.code_dim()))
    };

    let mut yb_hat = Mat::zeros(count, shape.code_dim());
    let mut ye_hat = Mat::zeros(count, shape.code_dim());
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let f1 = frame_from_code_row(&s1, i, n_n, l_c);
        let f2 = frame_from_code_row(&s2, i, n_n, l_c);
        let f3 = frame_from_code_row(&s3, i, n_n, l_c);
        let v = match mode {
            TxMode::SemanticOnly => PrecoderSet::semantic_only(n_n),
            TxMode::IdentitySum => PrecoderSet::identity(n_n),
            TxMode::Precoded => sys.precoders.clone(),
            TxMode::SvdBaseline => {
                let n = n_n;
                PrecoderSet {
                    v1: svd_precoder(&draws.h_bob[i])?,
                    v2: Mat::zeros(n, n),
                    v3: Mat::zeros(n, n),
                }
            }
        };
        let y = superpose(&f1, &f2, &f3, &v)?;
        let (y_norm, norm_ctx) = normalize_power_fwd(&y, power)?;

        let h_b = draws.h_bob[i].clone();
        let y1 = transmit(&y_norm, &h_b, sigma2_leg, &mut streams.noise_leg)?;
        let (y1_eq, mmse_b) = mmse_equalize_fwd(&y1, &h_b, sigma2_leg, power)?;
        frame_grad_into_row(&y1_eq, &mut yb_hat, i);

        let (h_eve, mmse_eve) = if eve {
            let h_e = draws.h_eve[i].clone();
            let y2 = transmit(&y_norm, &h_e, sigma2_eve, &mut streams.noise_eve)?;
            let (y2_eq, mmse_e) = mmse_equalize_fwd(&y2, &h_e, sigma2_eve, power)?;
            frame_grad_into_row(&y2_eq, &mut ye_hat, i);
            (Some(h_e), Some(mmse_e))
        } else {
            (None, None)
        };

        items.push(ItemCtx {
            v,
            norm: norm_ctx,
            h_bob: h_b,
            mmse_bob: mmse_b,
            h_eve,
            mmse_eve,
        });
    }

    let x_hat1 = decode(&yb_hat, &mut sys.sd1, sys.height, sys.width, sys.channels)?;
    let x_hat2 = if eve {
        Some(decode(&ye_hat, &mut sys.sd2, sys.height, sys.width, sys.channels)?)
    } else {
        None
    };

    Ok(ForwardPass {
        x_hat1,
        x_hat2,
        items,
        jamming,
    })
}

/// Backpropagates reconstruction gradients through decoders, equalizers,
/// channels, normalization and superposition into the encoder networks.
/// With `into_encoders` false the pass stops after the decoders (stage 3
/// trains Eve's decoder only).
pub fn backward_batch(
    sys: &mut SemComSystem,
    pass: &ForwardPass,
    d_xhat1: Option<&Mat>,
    d_xhat2: Option<&Mat>,
    into_encoders: bool,
) -> Result<()> {
    let shape = sys.shape;
    let (n_n, l_c) = (shape.n_n, shape.l_c);
    let count = pass.items.len();

    let d_yb = match d_xhat1 {
        Some(g) => Some(sys.sd1.backward(g)?),
        None => None,
    };
    let d_ye = match d_xhat2 {
        Some(g) => Some(sys.sd2.backward(g)?),
        None => None,
    };
    if !into_encoders {
        return Ok(());
    }

    let mut ds1 = Mat::zeros(count, shape.code_dim());
    let mut ds2 = Mat::zeros(count, shape.code_dim());
    let mut ds3 = Mat::zeros(count, shape.code_dim());
    for (i, ctx) in pass.items.iter().enumerate() {
        // Gradient arriving at the normalized frame, summed over branches.
        let mut g_norm = Mat::zeros(n_n, l_c);
        if let Some(d_yb) = &d_yb {
            let g = frame_from_code_row(d_yb, i, n_n, l_c);
            let g = mmse_equalize_vjp(&ctx.mmse_bob, &g);
            g_norm.add_assign(&transmit_vjp(&ctx.h_bob, &g));
        }
        if let (Some(d_ye), Some(h_e), Some(mmse_e)) = (&d_ye, &ctx.h_eve, &ctx.mmse_eve) {
            let g = frame_from_code_row(d_ye, i, n_n, l_c);
            let g = mmse_equalize_vjp(mmse_e, &g);
            g_norm.add_assign(&transmit_vjp(h_e, &g));
        }
        let g_y = normalize_power_vjp(&ctx.norm, &g_norm);
        frame_grad_into_row(&superpose_vjp(&ctx.v.v1, &g_y), &mut ds1, i);
        if pass.jamming {
            frame_grad_into_row(&superpose_vjp(&ctx.v.v2, &g_y), &mut ds2, i);
            frame_grad_into_row(&superpose_vjp(&ctx.v.v3, &g_y), &mut ds3, i);
        }
    }

    sys.se.backward(&ds1)?;
    if pass.jamming {
        sys.tje.backward(&ds2)?;
        sys.gje.backward(&ds3)?;
    }
    Ok(())
}

/// Which stage's loss and trainable set to use for a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Stage1,
    Stage2,
    Stage3,
    Stage4,
    Stage5,
}

impl StageKind {
    fn tx_mode(&self) -> TxMode {
        match self {
            StageKind::Stage1 => TxMode::SemanticOnly,
            StageKind::Stage2 | StageKind::Stage3 => TxMode::IdentitySum,
            StageKind::Stage4 | StageKind::Stage5 => TxMode::Precoded,
        }
    }

    fn needs_eve(&self) -> bool {
        matches!(self, StageKind::Stage3 | StageKind::Stage4 | StageKind::Stage5)
    }

    pub fn index(&self) -> u8 {
        match self {
            StageKind::Stage1 => 1,
            StageKind::Stage2 => 2,
            StageKind::Stage3 => 3,
            StageKind::Stage4 => 4,
            StageKind::Stage5 => 5,
        }
    }
}

/// One training minibatch: forward, stage loss, backward, optimizer steps
/// on the stage's trainable set. Returns the loss, or `None` when the
/// stage-4/5 guard skipped a non-finite step.
pub fn train_minibatch(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    x: &ImageBatch,
    stage: StageKind,
    lr: f64,
    lambda_r: f64,
) -> Result<Option<f64>> {
    let mode = stage.tx_mode();
    let eve = stage.needs_eve();
    let draws = draw_batch(sys, streams, x.len(), mode.uses_jamming(), eve)?;
    let pass = forward_batch(sys, x, mode, &draws, streams, eve)?;

    let opt = OptimizerConfig::adam(lr * sys.lr_decay);
    match stage {
        StageKind::Stage1 | StageKind::Stage2 => {
            let loss = mse(x, &pass.x_hat1)?;
            let d1 = mse_grad(&pass.x_hat1.data, &x.data, 1.0);
            backward_batch(sys, &pass, Some(&d1), None, true)?;
            sys.se.optimizer_step(&opt)?;
            sys.sd1.optimizer_step(&opt)?;
            if stage == StageKind::Stage2 {
                sys.tje.optimizer_step(&opt)?;
                sys.gje.optimizer_step(&opt)?;
            } else {
                // Stage 1 never forwards the jamming encoders.
            }
            Ok(Some(loss))
        }
        StageKind::Stage3 => {
            let x_hat2 = pass.x_hat2.as_ref().expect("stage 3 runs the eve branch");
            let loss = mse(x, x_hat2)?;
            let d2 = mse_grad(&x_hat2.data, &x.data, 1.0);
            backward_batch(sys, &pass, None, Some(&d2), false)?;
            sys.sd2.optimizer_step(&opt)?;
            Ok(Some(loss))
        }
        StageKind::Stage4 | StageKind::Stage5 => {
            let x_hat2 = pass.x_hat2.as_ref().expect("stage 4/5 runs the eve branch");
            let loss = mse(x, &pass.x_hat1)? - lambda_r * mse(x, x_hat2)?;
            if !loss.is_finite() {
                // Guard for the unbounded eavesdropper term: skip the
                // step and halve the environment learning rate.
                sys.lr_decay *= 0.5;
                sys.se.zero_grads();
                sys.tje.zero_grads();
                sys.gje.zero_grads();
                sys.sd1.zero_grads();
                sys.sd2.zero_grads();
                return Ok(None);
            }
            let d1 = mse_grad(&pass.x_hat1.data, &x.data, 1.0);
            let d2 = mse_grad(&x_hat2.data, &x.data, -lambda_r);
            backward_batch(sys, &pass, Some(&d1), Some(&d2), true)?;
            sys.se.optimizer_step(&opt)?;
            sys.tje.optimizer_step(&opt)?;
            sys.gje.optimizer_step(&opt)?;
            sys.sd1.optimizer_step(&opt)?;
            // Eve's decoder stays frozen; discard its scratch gradients.
            sys.sd2.zero_grads();
            Ok(Some(loss))
        }
    }
}

/// One pass over the training set in shuffled minibatches. Returns the
/// mean loss over performed steps.
pub fn train_epoch(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    train: &ImageBatch,
    stage: StageKind,
    lr: f64,
    lambda_r: f64,
) -> Result<f64> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut streams.data);

    let bs = sys.batch_size.max(1);
    let mut total = 0.0;
    let mut steps = 0usize;
    let cols = train.data.cols;
    let mut chunk = Vec::with_capacity(bs * cols);
    let mut start = 0;
    while start < order.len() {
        let end = (start + bs).min(order.len());
        chunk.clear();
        for &idx in &order[start..end] {
            chunk.extend_from_slice(train.data.row(idx));
        }
        let x = ImageBatch {
            data: Mat::from_vec(end - start, cols, chunk.clone()),
            height: train.height,
            width: train.width,
            channels: train.channels,
        };
        if let Some(loss) = train_minibatch(sys, streams, &x, stage, lr, lambda_r)? {
            total += loss;
            steps += 1;
        }
        start = end;
    }
    if steps == 0 {
        return Err(Error::Numerical(
            "every step in the epoch was skipped by the non-finite guard".into(),
        ));
    }
    Ok(total / steps as f64)
}

/// Quality/loss snapshot on a fixed set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_leg_db: f64,
    pub psnr_eve_db: f64,
    pub mse_leg: f64,
    pub mse_eve: f64,
    /// `L4 = mse_leg - lambda_r * mse_eve`.
    pub loss: f64,
    pub epoch: usize,
    pub stage: u8,
}

/// Evaluates both receivers on `set` under `mode`, using channels and
/// noise drawn from `eval_seed` only, so repeated calls see identical
/// channel realizations. No parameters change.
pub fn evaluate(
    sys: &mut SemComSystem,
    set: &ImageBatch,
    mode: TxMode,
    lambda_r: f64,
    eval_seed: u64,
) -> Result<EvalReport> {
    let mut streams = Streams::new(eval_seed);
    let bs = sys.batch_size.max(1);
    let total = set.len();
    let mut sse_leg = 0.0;
    let mut sse_eve = 0.0;
    let mut n_px = 0.0;
    let mut start = 0;
    while start < total {
        let end = (start + bs).min(total);
        let x = set.slice(start, end);
        let draws = draw_batch(sys, &mut streams, x.len(), mode.uses_jamming(), true)?;
        let pass = forward_batch(sys, &x, mode, &draws, &mut streams, true)?;
        for (a, b) in x.data.data.iter().zip(&pass.x_hat1.data.data) {
            sse_leg += (a - b) * (a - b);
        }
        let x_hat2 = pass.x_hat2.as_ref().expect("evaluate runs the eve branch");
        for (a, b) in x.data.data.iter().zip(&x_hat2.data.data) {
            sse_eve += (a - b) * (a - b);
        }
        n_px += (x.data.rows * x.data.cols) as f64;
        start = end;
    }
    let mse_leg = sse_leg / n_px;
    let mse_eve = sse_eve / n_px;
    Ok(EvalReport {
        psnr_leg_db: mse_to_psnr(mse_leg),
        psnr_eve_db: mse_to_psnr(mse_eve),
        mse_leg,
        mse_eve,
        loss: mse_leg - lambda_r * mse_eve,
        epoch: 0,
        stage: 0,
    })
}

/// Per-epoch training log row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub loss: f64,
}

/// Per-decision-step log row from stage 4.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionLog {
    pub step: usize,
    pub reward: f64,
    pub psnr_leg_db: f64,
    pub psnr_eve_db: f64,
    /// Mean environment loss over the step's K epochs.
    pub env_loss: f64,
    pub action: Vec<f64>,
}

/// The stage-4 policy trace.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PolicyLog {
    pub decisions: Vec<DecisionLog>,
}

impl PolicyLog {
    /// Highest-reward action; ties resolve to the earliest step.
    pub fn best(&self) -> Option<&DecisionLog> {
        self.decisions.iter().fold(None, |best, d| match best {
            None => Some(d),
            Some(b) if d.reward > b.reward => Some(d),
            Some(b) => Some(b),
        })
    }
}

pub fn stage1(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    train: &ImageBatch,
    plan: &StagePlan,
) -> Result<Vec<EpochLog>> {
    sys.lr_decay = 1.0;
    run_simple_stage(
        sys,
        streams,
        train,
        StageKind::Stage1,
        plan.stage1_epochs,
        plan.lr_stage123,
        plan.lambda_r,
    )
}

pub fn stage2(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    train: &ImageBatch,
    plan: &StagePlan,
) -> Result<Vec<EpochLog>> {
    sys.lr_decay = 1.0;
    run_simple_stage(
        sys,
        streams,
        train,
        StageKind::Stage2,
        plan.stage2_epochs,
        plan.lr_stage123,
        plan.lambda_r,
    )
}

pub fn stage3(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    train: &ImageBatch,
    plan: &StagePlan,
) -> Result<Vec<EpochLog>> {
    sys.lr_decay = 1.0;
    run_simple_stage(
        sys,
        streams,
        train,
        StageKind::Stage3,
        plan.stage3_epochs,
        plan.lr_stage123,
        plan.lambda_r,
    )
}

fn run_simple_stage(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    train: &ImageBatch,
    stage: StageKind,
    epochs: usize,
    lr: f64,
    lambda_r: f64,
) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let loss = train_epoch(sys, streams, train, stage, lr, lambda_r)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "stage {} diverged at epoch {epoch}: loss {loss}",
                stage.index()
            )));
        }
        logs.push(EpochLog {
            stage: stage.index(),
            epoch,
            loss,
        });
    }
    Ok(logs)
}

/// Stage 4: alternating agent/environment training. Every decision step
/// the agent fixes a precoder set for `K` environment epochs; afterwards
/// the held-out PSNRs yield reward and next state, the transition is
/// stored, and the agent updates once (when the buffer holds at least
/// its warm-up count). OU exploration decays linearly to zero over the
/// final 20% of steps.
pub fn stage4(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    agent: &mut DdpgAgent,
    train: &ImageBatch,
    eval_set: &ImageBatch,
    plan: &StagePlan,
    eval_seed: u64,
) -> Result<(PolicyLog, Vec<EpochLog>)> {
    plan.validate()?;
    sys.lr_decay = 1.0;
    let total_steps = plan.decision_steps;
    let k = plan.epochs_per_decision;
    let cfg = sys.channel_cfg;

    // Initial state from the system as stage 3 left it (identity sum).
    let init = evaluate(sys, eval_set, TxMode::IdentitySum, plan.lambda_r, eval_seed)?;
    let mut state = build_state(
        cfg.snr_leg_db,
        cfg.snr_eve_db,
        sys.shape.cu,
        init.psnr_leg_db,
        init.psnr_eve_db,
        init.loss,
        0,
        total_steps,
    )?;

    let mut policy_log = PolicyLog::default();
    let mut epoch_logs = Vec::with_capacity(plan.stage4_epochs());
    for t in 1..=total_steps {
        // Exploration scale: 1 until 80% progress, then linear to 0.
        let progress = t as f64 / total_steps as f64;
        let noise_scale = if progress <= 0.8 {
            1.0
        } else {
            ((1.0 - progress) / 0.2).max(0.0)
        };
        let action = agent.act(&state, true, noise_scale)?;
        sys.precoders = reshape_action(&action, cfg.n_m, cfg.n_n)?;

        let mut loss_sum = 0.0;
        for e in 0..k {
            let loss = train_epoch(sys, streams, train, StageKind::Stage4, plan.lr_stage4, plan.lambda_r)?;
            loss_sum += loss;
            epoch_logs.push(EpochLog {
                stage: 4,
                epoch: (t - 1) * k + e,
                loss,
            });
        }
        let env_loss = loss_sum / k as f64;

        let report = evaluate(sys, eval_set, TxMode::Precoded, plan.lambda_r, eval_seed)?;
        let reward = compute_reward(report.psnr_leg_db, report.psnr_eve_db, plan.lambda_r);
        let next_state = build_state(
            cfg.snr_leg_db,
            cfg.snr_eve_db,
            sys.shape.cu,
            report.psnr_leg_db,
            report.psnr_eve_db,
            env_loss,
            t,
            total_steps,
        )?;
        agent.observe(Transition {
            state,
            action: action.clone(),
            reward,
            next_state,
            done: t == total_steps,
        });
        agent.update()?;

        policy_log.decisions.push(DecisionLog {
            step: t,
            reward,
            psnr_leg_db: report.psnr_leg_db,
            psnr_eve_db: report.psnr_eve_db,
            env_loss,
            action,
        });
        state = next_state;
    }
    Ok((policy_log, epoch_logs))
}

/// Stage 5: fix the best stage-4 action and fine-tune the environment,
/// then report the final held-out evaluation.
pub fn stage5(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    best_action: &[f64],
    train: &ImageBatch,
    test: &ImageBatch,
    plan: &StagePlan,
    eval_seed: u64,
) -> Result<(Vec<EpochLog>, EvalReport)> {
    sys.lr_decay = 1.0;
    sys.precoders = reshape_action(best_action, sys.channel_cfg.n_m, sys.channel_cfg.n_n)?;
    let mut logs = Vec::with_capacity(plan.stage5_epochs);
    for epoch in 0..plan.stage5_epochs {
        let loss = train_epoch(sys, streams, train, StageKind::Stage5, plan.lr_stage5, plan.lambda_r)?;
        logs.push(EpochLog {
            stage: 5,
            epoch,
            loss,
        });
    }
    let mut report = evaluate(sys, test, TxMode::Precoded, plan.lambda_r, eval_seed)?;
    report.stage = 5;
    Ok((logs, report))
}

/// Outcome of a full five-stage run.
pub struct TrainOutcome {
    pub epoch_logs: Vec<EpochLog>,
    pub policy_log: PolicyLog,
    pub final_report: EvalReport,
    pub best_action: Vec<f64>,
}

/// Runs stages 1 through 5 in order.
#[allow(clippy::too_many_arguments)]
pub fn run_five_stages(
    sys: &mut SemComSystem,
    streams: &mut Streams,
    agent: &mut DdpgAgent,
    train: &ImageBatch,
    eval_mini: &ImageBatch,
    test: &ImageBatch,
    plan: &StagePlan,
    eval_seed: u64,
    mut on_stage_complete: impl FnMut(u8, &SemComSystem) -> Result<()>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    let mut epoch_logs = Vec::new();
    epoch_logs.extend(stage1(sys, streams, train, plan)?);
    on_stage_complete(1, sys)?;
    epoch_logs.extend(stage2(sys, streams, train, plan)?);
    on_stage_complete(2, sys)?;
    epoch_logs.extend(stage3(sys, streams, train, plan)?);
    on_stage_complete(3, sys)?;
    let (policy_log, stage4_logs) = stage4(sys, streams, agent, train, eval_mini, plan, eval_seed)?;
    epoch_logs.extend(stage4_logs);
    on_stage_complete(4, sys)?;
    let best_action = policy_log
        .best()
        .ok_or_else(|| Error::State("stage 4 produced no decisions".into()))?
        .action
        .clone();
    let (stage5_logs, final_report) =
        stage5(sys, streams, &best_action, train, test, plan, eval_seed)?;
    epoch_logs.extend(stage5_logs);
    on_stage_complete(5, sys)?;
    Ok(TrainOutcome {
        epoch_logs,
        policy_log,
        final_report,
        best_action,
    })
}

/// Post-hoc adaptive-eavesdropper evaluation, off by default in the
/// pipeline: a clone of the system retrains Eve's decoder against the
/// current precoded transmission for `epochs`, then reports test PSNRs.
/// The trained system itself is left untouched.
pub fn adaptive_eve_eval(
    sys: &SemComSystem,
    train: &ImageBatch,
    test: &ImageBatch,
    epochs: usize,
    lr: f64,
    lambda_r: f64,
    seed: u64,
) -> Result<EvalReport> {
    let mut clone = sys.clone();
    let mut streams = Streams::new(derive_seed(seed, "adaptive-eve"));
    let opt = OptimizerConfig::adam(lr);
    let bs = clone.batch_size.max(1);
    let cols = train.data.cols;
    for _ in 0..epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut streams.data);
        let mut start = 0;
        while start < order.len() {
            let end = (start + bs).min(order.len());
            let mut chunk = Vec::with_capacity((end - start) * cols);
            for &idx in &order[start..end] {
                chunk.extend_from_slice(train.data.row(idx));
            }
            let x = ImageBatch {
                data: Mat::from_vec(end - start, cols, chunk),
                height: train.height,
                width: train.width,
                channels: train.channels,
            };
            let draws = draw_batch(&clone, &mut streams, x.len(), true, true)?;
            let pass = forward_batch(&mut clone, &x, TxMode::Precoded, &draws, &mut streams, true)?;
            let x_hat2 = pass.x_hat2.as_ref().expect("eve branch");
            let d2 = mse_grad(&x_hat2.data, &x.data, 1.0);
            backward_batch(&mut clone, &pass, None, Some(&d2), false)?;
            clone.sd2.optimizer_step(&opt)?;
            start = end;
        }
    }
    let mut report = evaluate(&mut clone, test, TxMode::Precoded, lambda_r, derive_seed(seed, "eval"))?;
    report.stage = 5;
    Ok(report)
}

/// Checks the full differentiable chain (encode, precode, normalize,
/// noiseless channel, equalize, decode, MSE) against central finite
/// differences over every parameter of the four trainable transmit/
/// receive networks on a tiny instance. Returns the max relative error.
pub fn pipeline_grad_check(master_seed: u64) -> Result<f64> {
    let (height, width, channels) = (8, 8, 6);
    let channel_cfg = ChannelConfig::new(4, 4, 1.0, 10.0, 10.0)?;
    let shape = CodeShape::new(1, height, width, channels, 4)?;
    let arch = ArchConfig {
        codec_hidden: 8,
        tje_hidden: 8,
        gje_hidden: 8,
        vocab_size: 64,
        embed_dim: 4,
        l_t: 4,
    };
    let corpus = TextCorpus::bundled(arch.vocab_size)?;
    let mut sys = SemComSystem::new(
        channel_cfg,
        shape,
        &arch,
        height,
        width,
        channels,
        corpus,
        2,
        master_seed,
    )?;
    // Noiseless links so the loss is a deterministic function of params.
    sys.channel_cfg.snr_leg_db = f64::INFINITY;
    sys.channel_cfg.snr_eve_db = f64::INFINITY;
    // A fixed, non-trivial precoder set: exercises all three streams.
    let mut act_rng = derive_stream(master_seed, "grad-check/action");
    let action: Vec<f64> = (0..48)
        .map(|_| rand::Rng::random_range(&mut act_rng, -0.8..0.8))
        .collect();
    sys.precoders = reshape_action(&action, 4, 4)?;

    let mut streams = Streams::new(master_seed);
    let x = crate::codec::generate_images(2, height, width, channels, &mut streams.data);
    let draws = draw_batch(&sys, &mut streams, x.len(), true, false)?;

    // Analytic gradients through the full chain.
    let pass = forward_batch(&mut sys, &x, TxMode::Precoded, &draws, &mut streams, false)?;
    let d1 = mse_grad(&pass.x_hat1.data, &x.data, 1.0);
    for net in [&mut sys.se, &mut sys.tje, &mut sys.gje, &mut sys.sd1] {
        net.zero_grads();
    }
    backward_batch(&mut sys, &pass, Some(&d1), None, true)?;
    let analytic: Vec<Vec<f64>> = [&sys.se, &sys.tje, &sys.gje, &sys.sd1]
        .iter()
        .map(|n| n.grads().to_vec())
        .collect();

    // Central differences of the forward loss.
    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    for net_idx in 0..4 {
        let n_params = match net_idx {
            0 => sys.se.params().len(),
            1 => sys.tje.params().len(),
            2 => sys.gje.params().len(),
            _ => sys.sd1.params().len(),
        };
        for p in 0..n_params {
            let loss_at = |delta: f64, sys: &mut SemComSystem| -> Result<f64> {
                let net = match net_idx {
                    0 => &mut sys.se,
                    1 => &mut sys.tje,
                    2 => &mut sys.gje,
                    _ => &mut sys.sd1,
                };
                let orig = net.params()[p];
                net.params_mut()[p] = orig + delta;
                let mut s = Streams::new(master_seed);
                let pass = forward_batch(sys, &x, TxMode::Precoded, &draws, &mut s, false)?;
                let loss = mse(&x, &pass.x_hat1)?;
                let net = match net_idx {
                    0 => &mut sys.se,
                    1 => &mut sys.tje,
                    2 => &mut sys.gje,
                    _ => &mut sys.sd1,
                };
                net.params_mut()[p] = orig;
                Ok(loss)
            };
            let plus = loss_at(eps, &mut sys)?;
            let minus = loss_at(-eps, &mut sys)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[net_idx][p];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

/// On-disk manifest for a system checkpoint directory.
#[derive(Debug, Serialize, Deserialize)]
struct SystemManifest {
    n_m: usize,
    n_n: usize,
    power: f64,
    snr_leg_db: f64,
    snr_eve_db: f64,
    cu: usize,
    height: usize,
    width: usize,
    channels: usize,
    batch_size: usize,
    vocab_size: usize,
    embed_dim: usize,
    l_t: usize,
    embed_seed: u64,
    precoders: Vec<f64>,
}

/// Writes the five networks plus a TOML manifest into `dir`.
pub fn save_system(sys: &SemComSystem, embed_seed: u64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (name, net) in [
        ("se", &sys.se),
        ("tje", &sys.tje),
        ("gje", &sys.gje),
        ("sd1", &sys.sd1),
        ("sd2", &sys.sd2),
    ] {
        save_network(net, dir.join(format!("{name}.net")))?;
    }
    let manifest = SystemManifest {
        n_m: sys.channel_cfg.n_m,
        n_n: sys.channel_cfg.n_n,
        power: sys.channel_cfg.power,
        snr_leg_db: sys.channel_cfg.snr_leg_db,
        snr_eve_db: sys.channel_cfg.snr_eve_db,
        cu: sys.shape.cu,
        height: sys.height,
        width: sys.width,
        channels: sys.channels,
        batch_size: sys.batch_size,
        vocab_size: sys.corpus.vocab_size,
        embed_dim: sys.embedder.embed_dim,
        l_t: sys.embedder.l_t,
        embed_seed,
        precoders: sys.precoders.flatten(),
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join("model.toml"), text)?;
    Ok(())
}

/// Loads a system checkpoint directory written by [`save_system`].
pub fn load_system(dir: impl AsRef<Path>, corpus: TextCorpus) -> Result<SemComSystem> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("model.toml"))?;
    let manifest: SystemManifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))?;
    let channel_cfg = ChannelConfig::new(
        manifest.n_m,
        manifest.n_n,
        manifest.power,
        manifest.snr_leg_db,
        manifest.snr_eve_db,
    )?;
    let shape = CodeShape::new(
        manifest.cu,
        manifest.height,
        manifest.width,
        manifest.channels,
        manifest.n_m,
    )?;
    let embedder = TextEmbedder::new(
        manifest.vocab_size,
        manifest.embed_dim,
        manifest.l_t,
        manifest.embed_seed,
    );
    let precoders = reshape_action(&manifest.precoders, manifest.n_m, manifest.n_n)?;
    Ok(SemComSystem {
        se: load_network(dir.join("se.net"))?,
        tje: load_network(dir.join("tje.net"))?,
        gje: load_network(dir.join("gje.net"))?,
        sd1: load_network(dir.join("sd1.net"))?,
        sd2: load_network(dir.join("sd2.net"))?,
        shape,
        channel_cfg,
        corpus,
        embedder,
        precoders,
        height: manifest.height,
        width: manifest.width,
        channels: manifest.channels,
        batch_size: manifest.batch_size,
        lr_decay: 1.0,
    })
}
