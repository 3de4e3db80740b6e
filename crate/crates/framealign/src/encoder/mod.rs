//! Small trainable dual encoders.
//!
//! The audio side maps log-mel frames through a linear projection, a causal
//! moving-average mixer, and a second projection, then L2-normalizes each
//! frame. The text side hashes lowercased whitespace tokens into an
//! embedding table (FNV-1a, stable across platforms and runs), sums the
//! embeddings, projects, and normalizes. Both backward passes are derived by
//! hand and verified against central finite differences in the tests.

pub mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::MelFrames;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Tensor};

/// Guard against zero-norm embeddings before normalization.
const MIN_EMBED_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Mel bins the audio encoder consumes.
    pub mel_bins: usize,
    /// Width of the shared hidden layer.
    pub hidden: usize,
    /// Joint embedding dimension.
    pub dim: usize,
    /// Hash buckets in the text embedding table.
    pub buckets: usize,
    /// Causal moving-average window, in frames.
    pub mixer_window: usize,
    /// Frame hop in seconds; carried into checkpoints so evaluation uses
    /// the geometry the model was trained with.
    pub hop: f64,
    /// Initialization seed.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mel_bins: 64,
            hidden: 64,
            dim: 64,
            buckets: 1 << 14,
            mixer_window: 5,
            hop: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mel_bins == 0
            || self.hidden == 0
            || self.dim < 2
            || self.buckets == 0
            || self.mixer_window == 0
        {
            return Err(Error::invalid(
                "encoder config: sizes must be positive (dim at least 2)",
            ));
        }
        if !(self.hop > 0.0) {
            return Err(Error::invalid("encoder config: hop must be positive"));
        }
        Ok(())
    }
}

/// All trainable parameters, as named tensors. Biases are stored as 1-row
/// tensors so every parameter moves through the same code paths.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub text_embed: Tensor,
    pub text_proj_w: Tensor,
    pub text_proj_b: Tensor,
    pub audio_in_w: Tensor,
    pub audio_in_b: Tensor,
    pub audio_out_w: Tensor,
    pub audio_out_b: Tensor,
}

/// Fixed tensor order used by checkpoints, the optimizer, and tests.
pub const PARAM_NAMES: [&str; 7] = [
    "text_embed",
    "text_proj_w",
    "text_proj_b",
    "audio_in_w",
    "audio_in_b",
    "audio_out_w",
    "audio_out_b",
];

impl EncoderParams {
    /// Deterministic initialization: uniform Xavier-style weights, small
    /// nonzero biases (so silent audio still produces a usable embedding),
    /// all drawn from one seeded stream in the fixed tensor order.
    pub fn init(config: &EncoderConfig) -> Result<EncoderParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform = |rows: usize, cols: usize, limit: f64| {
            Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
        };
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let c = config;
        let text_embed = uniform(c.buckets, c.hidden, 1.0 / (c.hidden as f64).sqrt());
        let text_proj_w = uniform(c.hidden, c.dim, xavier(c.hidden, c.dim));
        let text_proj_b = uniform(1, c.dim, 0.01);
        let audio_in_w = uniform(c.mel_bins, c.hidden, xavier(c.mel_bins, c.hidden));
        let audio_in_b = uniform(1, c.hidden, 0.01);
        let audio_out_w = uniform(c.hidden, c.dim, xavier(c.hidden, c.dim));
        let audio_out_b = uniform(1, c.dim, 0.01);
        Ok(EncoderParams {
            config: config.clone(),
            text_embed,
            text_proj_w,
            text_proj_b,
            audio_in_w,
            audio_in_b,
            audio_out_w,
            audio_out_b,
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 7] {
        [
            (PARAM_NAMES[0], &self.text_embed),
            (PARAM_NAMES[1], &self.text_proj_w),
            (PARAM_NAMES[2], &self.text_proj_b),
            (PARAM_NAMES[3], &self.audio_in_w),
            (PARAM_NAMES[4], &self.audio_in_b),
            (PARAM_NAMES[5], &self.audio_out_w),
            (PARAM_NAMES[6], &self.audio_out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 7] {
        [
            (PARAM_NAMES[0], &mut self.text_embed),
            (PARAM_NAMES[1], &mut self.text_proj_w),
            (PARAM_NAMES[2], &mut self.text_proj_b),
            (PARAM_NAMES[3], &mut self.audio_in_w),
            (PARAM_NAMES[4], &mut self.audio_in_b),
            (PARAM_NAMES[5], &mut self.audio_out_w),
            (PARAM_NAMES[6], &mut self.audio_out_b),
        ]
    }
}

/// Per-parameter gradient (or optimizer moment) accumulator, shape-congruent
/// with EncoderParams.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub text_embed: Tensor,
    pub text_proj_w: Tensor,
    pub text_proj_b: Tensor,
    pub audio_in_w: Tensor,
    pub audio_in_b: Tensor,
    pub audio_out_w: Tensor,
    pub audio_out_b: Tensor,
}

impl Gradient {
    pub fn zeros_like(params: &EncoderParams) -> Gradient {
        let z = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        Gradient {
            text_embed: z(&params.text_embed),
            text_proj_w: z(&params.text_proj_w),
            text_proj_b: z(&params.text_proj_b),
            audio_in_w: z(&params.audio_in_w),
            audio_in_b: z(&params.audio_in_b),
            audio_out_w: z(&params.audio_out_w),
            audio_out_b: z(&params.audio_out_b),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 7] {
        [
            (PARAM_NAMES[0], &self.text_embed),
            (PARAM_NAMES[1], &self.text_proj_w),
            (PARAM_NAMES[2], &self.text_proj_b),
            (PARAM_NAMES[3], &self.audio_in_w),
            (PARAM_NAMES[4], &self.audio_in_b),
            (PARAM_NAMES[5], &self.audio_out_w),
            (PARAM_NAMES[6], &self.audio_out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 7] {
        [
            (PARAM_NAMES[0], &mut self.text_embed),
            (PARAM_NAMES[1], &mut self.text_proj_w),
            (PARAM_NAMES[2], &mut self.text_proj_b),
            (PARAM_NAMES[3], &mut self.audio_in_w),
            (PARAM_NAMES[4], &mut self.audio_in_b),
            (PARAM_NAMES[5], &mut self.audio_out_w),
            (PARAM_NAMES[6], &mut self.audio_out_b),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// self += other, elementwise across all tensors.
    pub fn accumulate(&mut self, other: &Gradient) -> Result<()> {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }
}

/// A clip's frame embeddings: one unit-norm row per frame, plus the frame
/// hop so indices map back to seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddings {
    pub data: Tensor,
    pub delta: f64,
}

impl FrameEmbeddings {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// A unit-norm text embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub data: Vec<f64>,
}

/// FNV-1a 64-bit hash; stable everywhere, unlike the std hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Lowercase, split on whitespace, hash each token into a bucket.
/// Punctuation is kept: the hash sees tokens exactly as written.
pub fn text_buckets(text: &str, buckets: usize) -> Vec<usize> {
    text.to_lowercase()
        .split_whitespace()
        .map(|tok| (fnv1a(tok.as_bytes()) % buckets as u64) as usize)
        .collect()
}

/// Full activations of one audio forward pass, kept for the backward pass.
pub struct AudioForward {
    /// Input mel matrix (T x M).
    pub mel: Tensor,
    /// After input projection (T x H).
    pub h1: Tensor,
    /// After causal moving average (T x H).
    pub h2: Tensor,
    /// Pre-normalization output (T x D).
    pub y: Tensor,
    /// Row norms of y.
    pub norms: Vec<f64>,
    pub embeddings: FrameEmbeddings,
}

/// Full activations of one text forward pass.
pub struct TextForward {
    pub buckets_hit: Vec<usize>,
    /// Summed token embeddings (H).
    pub bow: Vec<f64>,
    /// Pre-normalization output (D).
    pub y: Vec<f64>,
    pub norm: f64,
    pub embedding: TextEmbedding,
}

/// Encodes mel frames into unit-norm frame embeddings, keeping activations.
pub fn encode_audio_cached(params: &EncoderParams, mel: &MelFrames) -> Result<AudioForward> {
    let c = &params.config;
    if mel.bins() != c.mel_bins {
        return Err(Error::shape(format!(
            "encode_audio: {} mel bins, encoder expects {}",
            mel.bins(),
            c.mel_bins
        )));
    }
    let t_count = mel.frames();
    if t_count == 0 {
        return Err(Error::invalid("encode_audio: no frames"));
    }

    let x = &mel.data;
    let mut h1 = Tensor::zeros(t_count, c.hidden);
    for t in 0..t_count {
        let xr = x.row(t);
        let out = h1.row_mut(t);
        out.copy_from_slice(params.audio_in_b.row(0));
        for (m, &xv) in xr.iter().enumerate() {
            if xv != 0.0 {
                let wr = params.audio_in_w.row(m);
                for h in 0..c.hidden {
                    out[h] += xv * wr[h];
                }
            }
        }
    }

    // Causal moving average: frame t averages frames max(0, t-w+1)..=t.
    let mut h2 = Tensor::zeros(t_count, c.hidden);
    for t in 0..t_count {
        let lo = t.saturating_sub(c.mixer_window - 1);
        let count = (t - lo + 1) as f64;
        let out = h2.row_mut(t);
        for s in lo..=t {
            let src = h1.row(s);
            for h in 0..c.hidden {
                out[h] += src[h];
            }
        }
        for v in out.iter_mut() {
            *v /= count;
        }
    }

    let mut y = Tensor::zeros(t_count, c.dim);
    for t in 0..t_count {
        let hr = h2.row(t);
        let out = y.row_mut(t);
        out.copy_from_slice(params.audio_out_b.row(0));
        for (h, &hv) in hr.iter().enumerate() {
            let wr = params.audio_out_w.row(h);
            for d in 0..c.dim {
                out[d] += hv * wr[d];
            }
        }
    }

    let mut norms = Vec::with_capacity(t_count);
    let mut e = Tensor::zeros(t_count, c.dim);
    for t in 0..t_count {
        let n = norm(y.row(t));
        if n < MIN_EMBED_NORM {
            return Err(Error::invalid(format!(
                "encode_audio: zero-norm embedding at frame {t} (degenerate parameters)"
            )));
        }
        norms.push(n);
        let row = e.row_mut(t);
        for (d, &v) in y.row(t).iter().enumerate() {
            row[d] = v / n;
        }
    }

    Ok(AudioForward {
        mel: x.clone(),
        h1,
        h2,
        y,
        norms,
        embeddings: FrameEmbeddings {
            data: e,
            delta: mel.hop,
        },
    })
}

/// Encodes mel frames into unit-norm frame embeddings.
pub fn encode_audio(params: &EncoderParams, mel: &MelFrames) -> Result<FrameEmbeddings> {
    Ok(encode_audio_cached(params, mel)?.embeddings)
}

/// Encodes text into a unit-norm embedding, keeping activations.
pub fn encode_text_cached(params: &EncoderParams, text: &str) -> Result<TextForward> {
    let c = &params.config;
    let buckets_hit = text_buckets(text, c.buckets);
    if buckets_hit.is_empty() {
        return Err(Error::invalid("encode_text: empty text"));
    }
    let mut bow = vec![0.0; c.hidden];
    for &b in &buckets_hit {
        let row = params.text_embed.row(b);
        for h in 0..c.hidden {
            bow[h] += row[h];
        }
    }
    let mut y = params.text_proj_b.row(0).to_vec();
    for (h, &sv) in bow.iter().enumerate() {
        if sv != 0.0 {
            let wr = params.text_proj_w.row(h);
            for d in 0..c.dim {
                y[d] += sv * wr[d];
            }
        }
    }
    let n = norm(&y);
    if n < MIN_EMBED_NORM {
        return Err(Error::invalid(
            "encode_text: zero-norm embedding (degenerate parameters)",
        ));
    }
    let embedding = TextEmbedding {
        data: y.iter().map(|v| v / n).collect(),
    };
    Ok(TextForward {
        buckets_hit,
        bow,
        y,
        norm: n,
        embedding,
    })
}

/// Encodes text into a unit-norm embedding.
pub fn encode_text(params: &EncoderParams, text: &str) -> Result<TextEmbedding> {
    Ok(encode_text_cached(params, text)?.embedding)
}

/// Backward through v = y / ||y||: dy = (g - (g . v) v) / ||y||.
fn normalize_backward(v: &[f64], norm: f64, g: &[f64], out: &mut [f64]) {
    let gv = dot(g, v);
    for d in 0..v.len() {
        out[d] = (g[d] - gv * v[d]) / norm;
    }
}

/// Accumulates parameter gradients for one audio forward pass given the
/// upstream gradient on the normalized frame embeddings (T x D).
pub fn audio_backward(
    params: &EncoderParams,
    fwd: &AudioForward,
    upstream: &Tensor,
    grad: &mut Gradient,
) -> Result<()> {
    let c = &params.config;
    let t_count = fwd.embeddings.frames();
    if upstream.rows() != t_count || upstream.cols() != c.dim {
        return Err(Error::shape(format!(
            "audio_backward: upstream {}x{} does not match {}x{}",
            upstream.rows(),
            upstream.cols(),
            t_count,
            c.dim
        )));
    }
    if !upstream.is_finite() {
        return Err(Error::invalid("audio_backward: non-finite upstream gradient"));
    }

    let e = &fwd.embeddings.data;
    let mut dy = Tensor::zeros(t_count, c.dim);
    for t in 0..t_count {
        normalize_backward(e.row(t), fwd.norms[t], upstream.row(t), dy.row_mut(t));
    }

    // y = h2 W_out + b_out
    let mut dh2 = Tensor::zeros(t_count, c.hidden);
    for t in 0..t_count {
        let dyr = dy.row(t);
        let h2r = fwd.h2.row(t);
        for h in 0..c.hidden {
            let wr = params.audio_out_w.row(h);
            let gw = grad.audio_out_w.row_mut(h);
            let mut acc = 0.0;
            for d in 0..c.dim {
                gw[d] += h2r[h] * dyr[d];
                acc += wr[d] * dyr[d];
            }
            dh2.row_mut(t)[h] = acc;
        }
        let gb = grad.audio_out_b.row_mut(0);
        for d in 0..c.dim {
            gb[d] += dyr[d];
        }
    }

    // Moving average backward: dh1[s] receives dh2[t] / count(t) for every
    // window that contains s.
    let mut dh1 = Tensor::zeros(t_count, c.hidden);
    for t in 0..t_count {
        let lo = t.saturating_sub(c.mixer_window - 1);
        let count = (t - lo + 1) as f64;
        let src = dh2.row(t);
        for s in lo..=t {
            let dst = dh1.row_mut(s);
            for h in 0..c.hidden {
                dst[h] += src[h] / count;
            }
        }
    }

    // h1 = x W_in + b_in
    for t in 0..t_count {
        let dr = dh1.row(t);
        let xr = fwd.mel.row(t);
        for (m, &xv) in xr.iter().enumerate() {
            if xv != 0.0 {
                let gw = grad.audio_in_w.row_mut(m);
                for h in 0..c.hidden {
                    gw[h] += xv * dr[h];
                }
            }
        }
        let gb = grad.audio_in_b.row_mut(0);
        for h in 0..c.hidden {
            gb[h] += dr[h];
        }
    }

    Ok(())
}

/// Accumulates parameter gradients for one text forward pass given the
/// upstream gradient on the normalized embedding.
pub fn text_backward(
    params: &EncoderParams,
    fwd: &TextForward,
    upstream: &[f64],
    grad: &mut Gradient,
) -> Result<()> {
    let c = &params.config;
    if upstream.len() != c.dim {
        return Err(Error::shape(format!(
            "text_backward: upstream dim {} does not match {}",
            upstream.len(),
            c.dim
        )));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("text_backward: non-finite upstream gradient"));
    }

    let mut dy = vec![0.0; c.dim];
    normalize_backward(&fwd.embedding.data, fwd.norm, upstream, &mut dy);

    // y = bow W_proj + b
    let mut dbow = vec![0.0; c.hidden];
    for h in 0..c.hidden {
        let wr = params.text_proj_w.row(h);
        let gw = grad.text_proj_w.row_mut(h);
        let mut acc = 0.0;
        for d in 0..c.dim {
            gw[d] += fwd.bow[h] * dy[d];
            acc += wr[d] * dy[d];
        }
        dbow[h] = acc;
    }
    let gb = grad.text_proj_b.row_mut(0);
    for d in 0..c.dim {
        gb[d] += dy[d];
    }

    // bow = sum of embedding rows; duplicates accumulate once per hit.
    for &b in &fwd.buckets_hit {
        let ge = grad.text_embed.row_mut(b);
        for h in 0..c.hidden {
            ge[h] += dbow[h];
        }
    }

    Ok(())
}

/// Convenience wrapper: runs the backward pass for a batch of cached
/// forwards and upstream gradients, returning a fresh gradient.
pub fn backward(
    params: &EncoderParams,
    audio: &[(&AudioForward, &Tensor)],
    text: &[(&TextForward, &[f64])],
) -> Result<Gradient> {
    let mut grad = Gradient::zeros_like(params);
    for (fwd, upstream) in audio {
        audio_backward(params, fwd, upstream, &mut grad)?;
    }
    for (fwd, upstream) in text {
        text_backward(params, fwd, upstream, &mut grad)?;
    }
    Ok(grad)
}
