//! Transmit-side encoders, receive-side decoders and their data sources.
//!
//! Three encoders feed the transmitter: the semantic encoder maps the
//! source image to `S1`, the text jamming encoder maps embedded
//! task-irrelevant text to `S2`, and the Gaussian jamming encoder maps a
//! fresh standard-normal field to `S3`. All three emit `N_n x L_c` frames
//! per item. Bob's and Eve's decoders map an equalized frame back to an
//! image in `[0,1]` (sigmoid output layer).
//!
//! The compression ratio is controlled by the integer `CU`:
//! `CR = CU/96`, realized as `L_c = CU * H*W*C / (96 * N_m)` channel uses
//! per frame, which requires `H*W*C` divisible by `96 * N_m`.
//!
//! Images are batch-major rows of `H*W*C` pixels in `[0,1]`. The bundled
//! corpus (plain text, whitespace tokenized into a hash-bucketed
//! vocabulary) supplies the jamming text; any text file can replace it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::channel::Frame;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::Network;

/// Bundled default jamming-text corpus (~50 kB of plain English).
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");

/// Magic for the flat binary image format.
pub const IMAGE_MAGIC: &[u8; 8] = b"SEMIMG01";

/// A batch of images, one row per item, pixels flattened row-major as
/// `(y, x, channel)` with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub data: Mat,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageBatch {
    pub fn new(data: Mat, height: usize, width: usize, channels: usize) -> Result<Self> {
        if data.cols != height * width * channels {
            return Err(Error::shape(
                format!("{} pixels", height * width * channels),
                format!("{} pixels", data.cols),
                "image batch",
            ));
        }
        if !data.data.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::Config(
                "image pixels must lie in [0,1] and be finite".into(),
            ));
        }
        Ok(ImageBatch {
            data,
            height,
            width,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// A new batch holding rows `[start, end)` of this one.
    pub fn slice(&self, start: usize, end: usize) -> ImageBatch {
        assert!(start <= end && end <= self.len());
        let cols = self.data.cols;
        ImageBatch {
            data: Mat::from_vec(
                end - start,
                cols,
                self.data.data[start * cols..end * cols].to_vec(),
            ),
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    /// Per-pixel mean over the batch; the constant predictor used as the
    /// no-information reconstruction baseline.
    pub fn mean_pixel(&self) -> f64 {
        self.data.data.iter().sum::<f64>() / self.data.data.len() as f64
    }

    /// MSE of the constant-mean predictor on this batch.
    pub fn constant_mean_mse(&self) -> f64 {
        let mean = self.mean_pixel();
        self.data
            .data
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / self.data.data.len() as f64
    }
}

/// Code-shape bookkeeping: `CU` fixes the compression ratio `CU/96` and
/// the frame length `L_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeShape {
    pub cu: usize,
    pub l_c: usize,
    pub n_m: usize,
    pub n_n: usize,
    /// Compression ratio `(N_m * L_c) / (H*W*C) = CU/96`.
    pub cr: f64,
}

impl CodeShape {
    pub fn new(cu: usize, height: usize, width: usize, channels: usize, n_m: usize) -> Result<Self> {
        if cu == 0 {
            return Err(Error::Config("CU must be >= 1".into()));
        }
        let source_dim = height * width * channels;
        let denom = 96 * n_m;
        if source_dim % denom != 0 {
            return Err(Error::Config(format!(
                "H*W*C = {source_dim} must be divisible by 96*N_m = {denom}"
            )));
        }
        let l_c = cu * source_dim / denom;
        Ok(CodeShape {
            cu,
            l_c,
            n_m,
            n_n: n_m,
            cr: cu as f64 / 96.0,
        })
    }

    /// Flat code length per item: `N_n * L_c`.
    pub fn code_dim(&self) -> usize {
        self.n_n * self.l_c
    }
}

/// A window of jamming text: raw token ids and their embedded vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSample {
    pub token_ids: Vec<u32>,
    pub embedded: Vec<f64>,
}

/// A fresh standard-normal field with image dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussSource {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Whitespace-tokenized text with ids hashed into a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct TextCorpus {
    tokens: Vec<u32>,
    pub vocab_size: usize,
}

fn hash_token(token: &str, vocab_size: usize) -> u32 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % vocab_size as u64) as u32
}

impl TextCorpus {
    pub fn from_text(text: &str, vocab_size: usize) -> Result<Self> {
        let tokens: Vec<u32> = text
            .split_whitespace()
            .map(|t| hash_token(t, vocab_size))
            .collect();
        if tokens.is_empty() {
            return Err(Error::Config("text corpus is empty".into()));
        }
        Ok(TextCorpus { tokens, vocab_size })
    }

    pub fn from_file(path: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, vocab_size)
    }

    pub fn bundled(vocab_size: usize) -> Result<Self> {
        Self::from_text(BUNDLED_CORPUS, vocab_size)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Fixed (seeded) token embedding table. Lookup concatenates one
/// `embed_dim` vector per token, so `text_dim = l_t * embed_dim`.
#[derive(Debug, Clone)]
pub struct TextEmbedder {
    table: Mat,
    pub embed_dim: usize,
    pub l_t: usize,
}

impl TextEmbedder {
    pub fn new(vocab_size: usize, embed_dim: usize, l_t: usize, seed: u64) -> Self {
        let mut rng = crate::rng::derive_stream(seed, "text-embed");
        TextEmbedder {
            table: Mat::from_fn(vocab_size, embed_dim, |_, _| rng.sample(StandardNormal)),
            embed_dim,
            l_t,
        }
    }

    pub fn text_dim(&self) -> usize {
        self.l_t * self.embed_dim
    }

    pub fn embed(&self, token_ids: &[u32]) -> Result<Vec<f64>> {
        if token_ids.len() != self.l_t {
            return Err(Error::shape(
                format!("{} tokens", self.l_t),
                format!("{} tokens", token_ids.len()),
                "text embedding",
            ));
        }
        let mut out = Vec::with_capacity(self.text_dim());
        for &id in token_ids {
            if id as usize >= self.table.rows {
                return Err(Error::Config(format!(
                    "token id {id} outside vocabulary of {}",
                    self.table.rows
                )));
            }
            out.extend_from_slice(self.table.row(id as usize));
        }
        Ok(out)
    }
}

/// Draws a uniform random window of `l_t` tokens and embeds it.
pub fn sample_text(
    corpus: &TextCorpus,
    embedder: &TextEmbedder,
    rng: &mut ChaCha12Rng,
) -> Result<TextSample> {
    let l_t = embedder.l_t;
    if corpus.len() < l_t {
        return Err(Error::Config(format!(
            "corpus has {} tokens, need at least {l_t}",
            corpus.len()
        )));
    }
    let start = rng.random_range(0..=corpus.len() - l_t);
    let token_ids = corpus.tokens[start..start + l_t].to_vec();
    let embedded = embedder.embed(&token_ids)?;
    Ok(TextSample {
        token_ids,
        embedded,
    })
}

/// Draws a fresh standard-normal jamming field.
pub fn sample_gauss(
    height: usize,
    width: usize,
    channels: usize,
    rng: &mut ChaCha12Rng,
) -> GaussSource {
    let n = height * width * channels;
    GaussSource {
        data: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        height,
        width,
        channels,
    }
}

fn encode_batch(input: &Mat, net: &mut Network, shape: &CodeShape, what: &str) -> Result<Mat> {
    if net.out_features() != shape.code_dim() {
        return Err(Error::shape(
            format!("{} outputs", shape.code_dim()),
            format!("{} outputs", net.out_features()),
            what,
        ));
    }
    net.forward(input)
}

/// Encodes a flattened image batch into semantic codes, one
/// `N_n * L_c` row per item.
pub fn semantic_encode(x: &ImageBatch, net: &mut Network, shape: &CodeShape) -> Result<Mat> {
    encode_batch(&x.data, net, shape, "semantic encoder")
}

/// Encodes embedded text samples into semantic-layer jamming codes.
pub fn text_jam_encode(
    texts: &[TextSample],
    net: &mut Network,
    shape: &CodeShape,
) -> Result<Mat> {
    let dim = net.in_features();
    let mut input = Mat::zeros(texts.len(), dim);
    for (i, t) in texts.iter().enumerate() {
        if t.embedded.len() != dim {
            return Err(Error::shape(
                format!("{dim} features"),
                format!("{} features", t.embedded.len()),
                "text jamming encoder",
            ));
        }
        input.row_mut(i).copy_from_slice(&t.embedded);
    }
    encode_batch(&input, net, shape, "text jamming encoder")
}

/// Encodes Gaussian fields into physical-layer jamming codes.
pub fn gauss_jam_encode(
    sources: &[GaussSource],
    net: &mut Network,
    shape: &CodeShape,
) -> Result<Mat> {
    let dim = net.in_features();
    let mut input = Mat::zeros(sources.len(), dim);
    for (i, g) in sources.iter().enumerate() {
        if g.data.len() != dim {
            return Err(Error::shape(
                format!("{dim} features"),
                format!("{} features", g.data.len()),
                "gaussian jamming encoder",
            ));
        }
        input.row_mut(i).copy_from_slice(&g.data);
    }
    encode_batch(&input, net, shape, "gaussian jamming encoder")
}

/// Decodes equalized frames (one flat `N_n * L_c` row per item) back to
/// an image batch. The decoder's sigmoid output keeps pixels in `[0,1]`.
pub fn decode(
    y_hat: &Mat,
    net: &mut Network,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ImageBatch> {
    if net.in_features() != y_hat.cols {
        return Err(Error::shape(
            format!("{} inputs", net.in_features()),
            format!("{} inputs", y_hat.cols),
            "decoder",
        ));
    }
    let out = net.forward(y_hat)?;
    ImageBatch::new(out, height, width, channels)
}

/// Views row `item` of a flat code batch as an `N_n x L_c` frame,
/// row-major: frame element `(i, j)` is code element `i * L_c + j`.
pub fn frame_from_code_row(codes: &Mat, item: usize, n_n: usize, l_c: usize) -> Frame {
    Mat::from_vec(n_n, l_c, codes.row(item).to_vec())
}

/// Scatters a frame-shaped gradient back into row `item` of a flat
/// code-gradient batch (inverse of [`frame_from_code_row`]).
pub fn frame_grad_into_row(grad: &Frame, out: &mut Mat, item: usize) {
    out.row_mut(item).copy_from_slice(&grad.data);
}

/// Synthetic source images: smoothed random fields made by bilinear
/// upsampling of a coarse uniform grid, so pixels stay in `[0,1]` and
/// neighboring pixels correlate like natural images.
pub fn generate_images(
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    rng: &mut ChaCha12Rng,
) -> ImageBatch {
    let grid = 3usize;
    let dim = height * width * channels;
    let mut data = Mat::zeros(count, dim);
    for item in 0..count {
        let row = data.row_mut(item);
        for ch in 0..channels {
            let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.random_range(0.0..1.0)).collect();
            for y in 0..height {
                for x in 0..width {
                    let gy = y as f64 / (height - 1).max(1) as f64 * (grid - 1) as f64;
                    let gx = x as f64 / (width - 1).max(1) as f64 * (grid - 1) as f64;
                    let y0 = gy.floor() as usize;
                    let x0 = gx.floor() as usize;
                    let y1 = (y0 + 1).min(grid - 1);
                    let x1 = (x0 + 1).min(grid - 1);
                    let fy = gy - y0 as f64;
                    let fx = gx - x0 as f64;
                    let v = coarse[y0 * grid + x0] * (1.0 - fy) * (1.0 - fx)
                        + coarse[y0 * grid + x1] * (1.0 - fy) * fx
                        + coarse[y1 * grid + x0] * fy * (1.0 - fx)
                        + coarse[y1 * grid + x1] * fy * fx;
                    row[(y * width + x) * channels + ch] = v;
                }
            }
        }
    }
    ImageBatch {
        data,
        height,
        width,
        channels,
    }
}

/// Writes the flat binary image format:
/// magic `SEMIMG01`, then u32 LE count/height/width/channels, then
/// `count*height*width*channels` bytes, each pixel as `round(v * 255)`.
pub fn save_images(batch: &ImageBatch, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(IMAGE_MAGIC)?;
    for v in [
        batch.len() as u32,
        batch.height as u32,
        batch.width as u32,
        batch.channels as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &p in &batch.data.data {
        w.write_all(&[(p * 255.0).round().clamp(0.0, 255.0) as u8])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the flat binary image format written by [`save_images`].
pub fn load_images(path: impl AsRef<Path>) -> Result<ImageBatch> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != IMAGE_MAGIC {
        return Err(Error::Config(format!(
            "image file: bad magic {:02x?}, expected {:02x?}",
            magic, IMAGE_MAGIC
        )));
    }
    let mut buf = [0u8; 4];
    let mut dims = [0u32; 4];
    for d in &mut dims {
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf);
    }
    let (count, height, width, channels) = (
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        dims[3] as usize,
    );
    let n = count * height * width * channels;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)?;
    let data = Mat::from_vec(
        count,
        height * width * channels,
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    );
    ImageBatch::new(data, height, width, channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, LayerSpec};
    use crate::rng::derive_stream;

    #[test]
    fn code_shape_matches_compression_grid() {
        let s = CodeShape::new(1, 32, 32, 3, 4).unwrap();
        assert_eq!(s.l_c, 8);
        assert!((s.cr - 1.0 / 96.0).abs() < 1e-15);

        let s5 = CodeShape::new(5, 32, 32, 3, 4).unwrap();
        assert_eq!(s5.l_c, 40);
        assert!((s5.cr - 5.0 / 96.0).abs() < 1e-15);

        // 8*8*3 = 192 is not divisible by 384.
        assert!(CodeShape::new(1, 8, 8, 3, 4).is_err());
        assert!(CodeShape::new(0, 32, 32, 3, 4).is_err());
    }

    #[test]
    fn symbol_count_bookkeeping_is_exact() {
        for cu in 1..=5 {
            let s = CodeShape::new(cu, 32, 32, 3, 4).unwrap();
            // N_m * L_c * 96 == CU * H*W*C, the integer form of CR = CU/96.
            assert_eq!(s.n_m * s.l_c * 96, cu * 32 * 32 * 3);
        }
    }

    fn tiny_shape() -> CodeShape {
        CodeShape::new(1, 16, 16, 3, 4).unwrap()
    }

    #[test]
    fn encoder_output_shape_contract() {
        let shape = tiny_shape();
        let mut rng = derive_stream(1, "data");
        let x = generate_images(3, 16, 16, 3, &mut rng);
        let mut net = init_network(
            &[
                LayerSpec::dense(768, 32),
                LayerSpec::Relu,
                LayerSpec::dense(32, shape.code_dim()),
            ],
            5,
        )
        .unwrap();
        let codes = semantic_encode(&x, &mut net, &shape).unwrap();
        assert_eq!(codes.rows, 3);
        assert_eq!(codes.cols, shape.code_dim());

        let frame = frame_from_code_row(&codes, 1, shape.n_n, shape.l_c);
        assert_eq!(frame.rows, 4);
        assert_eq!(frame.cols, 2);

        // Determinism on repeat.
        let again = semantic_encode(&x, &mut net, &shape).unwrap();
        assert_eq!(codes, again);
    }

    #[test]
    fn zero_image_zeroed_net_encodes_to_zero() {
        let shape = tiny_shape();
        let x = ImageBatch::new(Mat::zeros(2, 768), 16, 16, 3).unwrap();
        let mut net = init_network(&[LayerSpec::dense(768, shape.code_dim())], 0).unwrap();
        net.params_mut().fill(0.0);
        let codes = semantic_encode(&x, &mut net, &shape).unwrap();
        assert!(codes.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn text_sampling_is_seeded_and_in_vocab() {
        let corpus = TextCorpus::bundled(1024).unwrap();
        assert!(corpus.len() > 1000, "bundled corpus too small: {}", corpus.len());
        let embedder = TextEmbedder::new(1024, 16, 16, 3);
        let a = sample_text(&corpus, &embedder, &mut derive_stream(4, "data")).unwrap();
        let b = sample_text(&corpus, &embedder, &mut derive_stream(4, "data")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token_ids.len(), 16);
        assert_eq!(a.embedded.len(), 256);
        assert!(a.token_ids.iter().all(|&id| id < 1024));
    }

    #[test]
    fn short_corpus_is_rejected() {
        let corpus = TextCorpus::from_text("only three tokens", 1024).unwrap();
        let embedder = TextEmbedder::new(1024, 16, 16, 0);
        assert!(sample_text(&corpus, &embedder, &mut derive_stream(0, "data")).is_err());
    }

    #[test]
    fn distinct_windows_give_distinct_jamming_codes() {
        let shape = tiny_shape();
        let corpus = TextCorpus::bundled(1024).unwrap();
        let embedder = TextEmbedder::new(1024, 16, 16, 3);
        let mut rng = derive_stream(9, "data");
        let a = sample_text(&corpus, &embedder, &mut rng).unwrap();
        let b = sample_text(&corpus, &embedder, &mut rng).unwrap();
        assert_ne!(a.token_ids, b.token_ids);

        let mut net = init_network(
            &[
                LayerSpec::dense(256, 64),
                LayerSpec::Relu,
                LayerSpec::dense(64, shape.code_dim()),
            ],
            7,
        )
        .unwrap();
        let codes = text_jam_encode(&[a, b], &mut net, &shape).unwrap();
        let d: f64 = (0..codes.cols)
            .map(|j| (codes.get(0, j) - codes.get(1, j)).abs())
            .sum();
        assert!(d > 0.0);
    }

    #[test]
    fn gauss_source_moments() {
        let mut rng = derive_stream(10, "data");
        let mut sum = 0.0;
        let mut sq = 0.0;
        let n = 100_000;
        let g = (0..n / 768 + 1)
            .flat_map(|_| sample_gauss(16, 16, 3, &mut rng).data)
            .take(n)
            .collect::<Vec<f64>>();
        for &v in &g {
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn fresh_gauss_differs_across_frames() {
        let mut rng = derive_stream(11, "data");
        let a = sample_gauss(16, 16, 3, &mut rng);
        let b = sample_gauss(16, 16, 3, &mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn decoder_output_stays_in_unit_range() {
        let shape = tiny_shape();
        let mut net = init_network(
            &[
                LayerSpec::dense(shape.code_dim(), 32),
                LayerSpec::Relu,
                LayerSpec::dense(32, 768),
                LayerSpec::Sigmoid,
            ],
            13,
        )
        .unwrap();
        let mut rng = derive_stream(14, "data");
        let y = Mat::from_fn(4, shape.code_dim(), |_, _| rng.random_range(-3.0..3.0));
        let out = decode(&y, &mut net, 16, 16, 3).unwrap();
        assert!(out.data.data.iter().all(|&v| (0.0..=1.0).contains(&v)));

        let again = decode(&y, &mut net, 16, 16, 3).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn untrained_decoder_tracks_constant_predictor_baseline() {
        let shape = tiny_shape();
        let mut net = init_network(
            &[
                LayerSpec::dense(shape.code_dim(), 32),
                LayerSpec::Relu,
                LayerSpec::dense(32, 768),
                LayerSpec::Sigmoid,
            ],
            15,
        )
        .unwrap();
        let mut rng = derive_stream(16, "data");
        let target = generate_images(64, 16, 16, 3, &mut rng);
        let y = Mat::from_fn(64, shape.code_dim(), |_, _| rng.random_range(-1.0..1.0));
        let out = decode(&y, &mut net, 16, 16, 3).unwrap();
        let psnr_decoder = crate::trainer::psnr(&target, &out).unwrap();
        // Constant-0.5 predictor on the same targets, computed analytically.
        let mse_const: f64 = target
            .data
            .data
            .iter()
            .map(|v| (v - 0.5) * (v - 0.5))
            .sum::<f64>()
            / target.data.data.len() as f64;
        let psnr_const = 10.0 * (1.0 / mse_const).log10();
        assert!(
            (psnr_decoder - psnr_const).abs() < 3.0,
            "decoder {psnr_decoder} dB vs constant {psnr_const} dB"
        );
    }

    #[test]
    fn synthetic_images_are_valid_and_varied() {
        let mut rng = derive_stream(17, "data");
        let batch = generate_images(32, 32, 32, 3, &mut rng);
        assert_eq!(batch.len(), 32);
        assert!(batch.data.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Enough variance for reconstruction quality to be measurable.
        assert!(batch.constant_mean_mse() > 0.01, "{}", batch.constant_mean_mse());
    }

    #[test]
    fn image_file_roundtrip() {
        let mut rng = derive_stream(18, "data");
        let batch = generate_images(5, 16, 16, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.bin");
        save_images(&batch, &path).unwrap();
        let loaded = load_images(&path).unwrap();
        assert_eq!(loaded.len(), 5);
        assert_eq!(loaded.height, 16);
        // Quantized to 8 bits on disk.
        assert!(loaded.data.max_abs_diff(&batch.data) <= 0.5 / 255.0 + 1e-12);
    }
}
