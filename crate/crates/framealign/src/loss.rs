//! Contrastive objectives over frame and clip embeddings.
//!
//! The frame-wise loss aligns each annotated region's text with every frame
//! the region spans: for a frame inside a region, the region's own text is
//! the positive and the region texts of all *other* clips in the batch are
//! the negatives. Region contributions are averaged over their frames, then
//! over regions, so long regions do not dominate. The global loss is the
//! familiar symmetric cross-entropy over clip-level audio/text pairs.
//!
//! Both losses return exact gradients with respect to the embeddings they
//! consume; encoder backward passes chain from those.

use crate::encoder::{FrameEmbeddings, TextEmbedding};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Tensor};

/// Half-open frame interval [t_on, t_off).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSpan {
    pub t_on: usize,
    pub t_off: usize,
}

impl FrameSpan {
    pub fn len(&self) -> usize {
        self.t_off - self.t_on
    }

    pub fn is_empty(&self) -> bool {
        self.t_off <= self.t_on
    }
}

/// Maps a region in seconds onto the frame grid: t_on = floor(onset / delta),
/// t_off = ceil(offset / delta), clamped to [0, t_count]. A region that
/// collapses after clamping (entirely past the audio end) degenerates to the
/// single frame nearest its midpoint, so every region trains at least one
/// frame.
pub fn region_to_frames(
    onset: f64,
    offset: f64,
    delta: f64,
    t_count: usize,
) -> Result<FrameSpan> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("region_to_frames: delta {delta} must be positive")));
    }
    if t_count == 0 {
        return Err(Error::invalid("region_to_frames: no frames"));
    }
    if !onset.is_finite() || !offset.is_finite() || onset < 0.0 || offset <= onset {
        return Err(Error::invalid(format!(
            "region_to_frames: bad region [{onset}, {offset})"
        )));
    }
    let t_on = ((onset / delta).floor() as usize).min(t_count);
    let t_off = (((offset / delta).ceil() as usize).max(t_on)).min(t_count);
    if t_off > t_on {
        return Ok(FrameSpan { t_on, t_off });
    }
    // Degenerate after clamping: single frame nearest the region midpoint.
    let mid = 0.5 * (onset + offset);
    let t_mid = ((mid / delta).floor() as usize).min(t_count - 1);
    Ok(FrameSpan {
        t_on: t_mid,
        t_off: t_mid + 1,
    })
}

/// Temperature-scaled cosine similarity (inputs are unit norm, so the dot
/// product is the cosine).
pub fn frame_similarity(frame: &[f64], text: &[f64], tau: f64) -> Result<f64> {
    if frame.len() != text.len() {
        return Err(Error::shape(format!(
            "frame_similarity: dim {} vs {}",
            frame.len(),
            text.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("frame_similarity: tau {tau} must be positive")));
    }
    Ok(dot(frame, text) / tau)
}

/// Softmax posterior of the positive text against the negatives for one
/// frame, computed with max subtraction. An empty negative set yields 1.
pub fn frame_posterior(
    frame: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<f64> {
    let s_pos = frame_similarity(frame, positive, tau)?;
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(s_pos);
    for n in negatives {
        logits.push(frame_similarity(frame, n, tau)?);
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let z: f64 = logits.iter().map(|&s| (s - m).exp()).sum();
    Ok((s_pos - m).exp() / z)
}

/// One annotated region ready for the loss: its frame span and encoded text.
#[derive(Clone, Debug)]
pub struct RegionEntry {
    pub span: FrameSpan,
    pub text: TextEmbedding,
}

/// One clip in a batch: frame embeddings plus its regions.
#[derive(Clone, Debug)]
pub struct ClipEntry {
    pub frames: FrameEmbeddings,
    pub regions: Vec<RegionEntry>,
}

/// A batch ready for the frame-wise loss. Needs at least two clips so that
/// every clip has a non-trivial negative set.
#[derive(Clone, Debug)]
pub struct BatchAssembly {
    pub clips: Vec<ClipEntry>,
    pub tau: f64,
}

/// Gradients of the frame-wise loss with respect to the embeddings.
#[derive(Clone, Debug)]
pub struct FrameLossGrad {
    /// Per clip, dL/d(frame embeddings), T x D.
    pub frames: Vec<Tensor>,
    /// Per clip and region, dL/d(text embedding).
    pub texts: Vec<Vec<Vec<f64>>>,
}

fn validate_batch(batch: &BatchAssembly) -> Result<usize> {
    if batch.clips.len() < 2 {
        return Err(Error::invalid(format!(
            "frame_wise_loss: batch of {} clips, need at least 2 for negatives",
            batch.clips.len()
        )));
    }
    if !(batch.tau > 0.0) {
        return Err(Error::invalid(format!(
            "frame_wise_loss: tau {} must be positive",
            batch.tau
        )));
    }
    let dim = batch.clips[0].frames.dim();
    let mut total_regions = 0;
    for (i, clip) in batch.clips.iter().enumerate() {
        if clip.frames.dim() != dim {
            return Err(Error::shape(format!(
                "frame_wise_loss: clip {i} dim {} vs {}",
                clip.frames.dim(),
                dim
            )));
        }
        let t_count = clip.frames.frames();
        for (j, region) in clip.regions.iter().enumerate() {
            if region.span.is_empty() || region.span.t_off > t_count {
                return Err(Error::invalid(format!(
                    "frame_wise_loss: clip {i} region {j} span [{}, {}) outside {t_count} frames",
                    region.span.t_on, region.span.t_off
                )));
            }
            if region.text.data.len() != dim {
                return Err(Error::shape(format!(
                    "frame_wise_loss: clip {i} region {j} text dim {} vs {}",
                    region.text.data.len(),
                    dim
                )));
            }
            total_regions += 1;
        }
    }
    if total_regions == 0 {
        return Err(Error::invalid("frame_wise_loss: batch has no regions"));
    }
    Ok(total_regions)
}

/// Frame-wise contrastive loss and its embedding gradients.
///
/// loss = -(1 / R) * sum over regions r of (1 / |span_r|) *
///        sum over frames t in span_r of log p(text_r | frame_t),
/// where the posterior competes against region texts from other clips only.
pub fn frame_wise_loss(batch: &BatchAssembly) -> Result<(f64, FrameLossGrad)> {
    let total_regions = validate_batch(batch)?;
    let n = batch.clips.len();
    let dim = batch.clips[0].frames.dim();
    let inv_tau = 1.0 / batch.tau;

    let mut grad = FrameLossGrad {
        frames: batch
            .clips
            .iter()
            .map(|c| Tensor::zeros(c.frames.frames(), dim))
            .collect(),
        texts: batch
            .clips
            .iter()
            .map(|c| c.regions.iter().map(|r| vec![0.0; r.text.data.len()]).collect())
            .collect(),
    };

    let mut loss = 0.0;
    let mut logits: Vec<f64> = Vec::new();
    for i in 0..n {
        // Negatives for clip i: every region text of every other clip.
        let negatives: Vec<(usize, usize)> = (0..n)
            .filter(|&j| j != i)
            .flat_map(|j| (0..batch.clips[j].regions.len()).map(move |k| (j, k)))
            .collect();

        for (j_self, region) in batch.clips[i].regions.iter().enumerate() {
            let weight = 1.0 / (total_regions as f64 * region.span.len() as f64);
            for t in region.span.t_on..region.span.t_off {
                let frame = batch.clips[i].frames.data.row(t);

                logits.clear();
                logits.push(dot(frame, &region.text.data) * inv_tau);
                for &(j, k) in &negatives {
                    logits.push(dot(frame, &batch.clips[j].regions[k].text.data) * inv_tau);
                }
                let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let z: f64 = logits.iter().map(|&s| (s - m).exp()).sum();
                let lse = m + z.ln();
                loss += weight * (lse - logits[0]);

                // Softmax probabilities double as gradient coefficients.
                let q_pos = (logits[0] - lse).exp();
                let coef_pos = weight * (q_pos - 1.0) * inv_tau;
                {
                    let frame_grad = grad.frames[i].row_mut(t);
                    for d in 0..dim {
                        frame_grad[d] += coef_pos * region.text.data[d];
                    }
                }
                {
                    let text_grad = &mut grad.texts[i][j_self];
                    for d in 0..dim {
                        text_grad[d] += coef_pos * frame[d];
                    }
                }
                for (pos, &(j, k)) in negatives.iter().enumerate() {
                    let q = (logits[pos + 1] - lse).exp();
                    let coef = weight * q * inv_tau;
                    let neg_text = &batch.clips[j].regions[k].text.data;
                    let frame_grad = grad.frames[i].row_mut(t);
                    for d in 0..dim {
                        frame_grad[d] += coef * neg_text[d];
                    }
                    let text_grad = &mut grad.texts[j][k];
                    for d in 0..dim {
                        text_grad[d] += coef * frame[d];
                    }
                }
            }
        }
    }

    Ok((loss, grad))
}

/// Gradients of the global loss with respect to the clip-level embeddings.
#[derive(Clone, Debug)]
pub struct GlobalLossGrad {
    pub audio: Tensor,
    pub text: Tensor,
}

/// Symmetric clip-level contrastive loss: mean of audio-to-text and
/// text-to-audio cross-entropies with matching pairs on the diagonal.
pub fn global_clap_loss(audio: &Tensor, text: &Tensor, tau: f64) -> Result<(f64, GlobalLossGrad)> {
    let n = audio.rows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "global_clap_loss: batch of {n} pairs, need at least 2"
        )));
    }
    if text.rows() != n || text.cols() != audio.cols() {
        return Err(Error::shape(format!(
            "global_clap_loss: audio {}x{} vs text {}x{}",
            audio.rows(),
            audio.cols(),
            text.rows(),
            text.cols()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("global_clap_loss: tau {tau} must be positive")));
    }
    if !audio.is_finite() || !text.is_finite() {
        return Err(Error::invalid("global_clap_loss: non-finite embeddings"));
    }
    let dim = audio.cols();
    let inv_tau = 1.0 / tau;

    let mut s = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            *s.at_mut(i, j) = dot(audio.row(i), text.row(j)) * inv_tau;
        }
    }

    // Row softmax (audio -> text) and column softmax (text -> audio).
    let mut p = Tensor::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += (lse - s.at(i, i)) / (2.0 * n as f64);
        for j in 0..n {
            *p.at_mut(i, j) = (s.at(i, j) - lse).exp();
        }
    }
    let mut q = Tensor::zeros(n, n);
    for j in 0..n {
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(s.at(i, j));
        }
        let mut z = 0.0;
        for i in 0..n {
            z += (s.at(i, j) - m).exp();
        }
        let lse = m + z.ln();
        loss += (lse - s.at(j, j)) / (2.0 * n as f64);
        for i in 0..n {
            *q.at_mut(i, j) = (s.at(i, j) - lse).exp();
        }
    }

    // dL/dS = (P - I + Q - I) / (2N); chain through S = A T' / tau.
    let scale = 1.0 / (2.0 * n as f64);
    let mut grad = GlobalLossGrad {
        audio: Tensor::zeros(n, dim),
        text: Tensor::zeros(n, dim),
    };
    for i in 0..n {
        for j in 0..n {
            let mut ds = (p.at(i, j) + q.at(i, j)) * scale;
            if i == j {
                ds -= 2.0 * scale;
            }
            let ds_tau = ds * inv_tau;
            let ga = grad.audio.row_mut(i);
            let tr = text.row(j);
            for d in 0..dim {
                ga[d] += ds_tau * tr[d];
            }
            let gt = grad.text.row_mut(j);
            let ar = audio.row(i);
            for d in 0..dim {
                gt[d] += ds_tau * ar[d];
            }
        }
    }

    Ok((loss, grad))
}

/// Cache for the clip-level pooling backward pass.
#[derive(Clone, Debug)]
pub struct GlobalPoolCache {
    pub pooled: Vec<f64>,
    pub norm: f64,
    pub frames: usize,
}

/// Clip-level audio embedding: mean of the frame embeddings, renormalized.
pub fn global_audio_embedding(frames: &FrameEmbeddings) -> Result<(Vec<f64>, GlobalPoolCache)> {
    let t_count = frames.frames();
    let dim = frames.dim();
    if t_count == 0 {
        return Err(Error::invalid("global_audio_embedding: no frames"));
    }
    let mut mean = vec![0.0; dim];
    for t in 0..t_count {
        for (d, &v) in frames.data.row(t).iter().enumerate() {
            mean[d] += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= t_count as f64;
    }
    let n = norm(&mean);
    if n < 1e-12 {
        return Err(Error::invalid(
            "global_audio_embedding: frame embeddings cancel to zero",
        ));
    }
    let pooled: Vec<f64> = mean.iter().map(|v| v / n).collect();
    Ok((
        pooled.clone(),
        GlobalPoolCache {
            pooled,
            norm: n,
            frames: t_count,
        },
    ))
}

/// Backward through mean-then-normalize pooling: spreads the upstream
/// gradient uniformly over the frames.
pub fn global_audio_backward(cache: &GlobalPoolCache, upstream: &[f64]) -> Result<Tensor> {
    let dim = cache.pooled.len();
    if upstream.len() != dim {
        return Err(Error::shape(format!(
            "global_audio_backward: upstream dim {} vs {dim}",
            upstream.len()
        )));
    }
    let gv = dot(upstream, &cache.pooled);
    let mut per_frame = vec![0.0; dim];
    for d in 0..dim {
        per_frame[d] = (upstream[d] - gv * cache.pooled[d]) / cache.norm / cache.frames as f64;
    }
    let mut out = Tensor::zeros(cache.frames, dim);
    for t in 0..cache.frames {
        out.row_mut(t).copy_from_slice(&per_frame);
    }
    Ok(out)
}
