//! Training: Adam with linear warmup and cosine annealing, deterministic
//! batching, per-epoch checkpoints, and a step-level metrics log.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{mel_frontend, read_wav, MelFrames};
use crate::dataset::AnnotatedClip;
use crate::encoder::{
    audio_backward, checkpoint, encode_audio_cached, encode_text_cached, EncoderConfig,
    EncoderParams, Gradient,
};
use crate::error::{Error, Result};
use crate::loss::{
    frame_wise_loss, global_audio_backward, global_audio_embedding, global_clap_loss,
    region_to_frames, BatchAssembly, ClipEntry, RegionEntry,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Clip-level symmetric contrastive loss over weak captions.
    Global,
    /// Frame-wise contrastive loss over strong regions.
    FrameWise,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossKind> {
        match s {
            "global" => Ok(LossKind::Global),
            "frame_wise" => Ok(LossKind::FrameWise),
            other => Err(Error::invalid(format!(
                "unknown loss kind {other:?} (want \"global\" or \"frame_wise\")"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub tau: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 8,
            peak_lr: 6e-4,
            final_lr: 1e-7,
            warmup_epochs: 1,
            tau: 0.05,
            seed: 0,
            loss: LossKind::FrameWise,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("train config: batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train config: epochs must be positive"));
        }
        if !(self.peak_lr > self.final_lr && self.final_lr > 0.0) {
            return Err(Error::invalid(format!(
                "train config: need peak_lr > final_lr > 0, got {} and {}",
                self.peak_lr, self.final_lr
            )));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "train config: warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("train config: tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("train config: val_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Learning rate at a 1-based step: linear ramp from zero over the warmup
/// steps, then cosine from peak to final. lr(total_steps) = final_lr exactly.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    if total_steps == 0 {
        return Err(Error::invalid("lr_at: total_steps must be positive"));
    }
    let warmup = total_steps * cfg.warmup_epochs / cfg.epochs;
    let step = step.min(total_steps);
    if warmup > 0 && step <= warmup {
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(cfg.final_lr
        + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, shape-congruent with the parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Gradient,
    pub v: Gradient,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> OptimizerState {
        OptimizerState {
            m: Gradient::zeros_like(params),
            v: Gradient::zeros_like(params),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient contained a NaN or infinity; parameters and moments
    /// were left untouched and the incident was logged.
    SkippedNonFinite,
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut EncoderParams,
    grad: &Gradient,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<StepOutcome> {
    if !(lr > 0.0) && lr != 0.0 {
        return Err(Error::invalid(format!("adam_step: bad learning rate {lr}")));
    }
    if !grad.is_finite() {
        log::warn!("adam_step: non-finite gradient at optimizer step {}, skipping", state.step + 1);
        return Ok(StepOutcome::SkippedNonFinite);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grad.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()))
    {
        if p.rows() != g.rows() || p.cols() != g.cols() {
            return Err(Error::shape(format!(
                "adam_step: parameter {}x{} vs gradient {}x{}",
                p.rows(),
                p.cols(),
                g.rows(),
                g.cols()
            )));
        }
        let pd = p.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gd[i];
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(StepOutcome::Applied)
}

/// One clip prepared for training: cached mel features plus its captions.
#[derive(Clone, Debug)]
pub struct TrainClip {
    pub clip_id: String,
    pub mel: MelFrames,
    /// (onset, offset, caption) triples for the frame-wise loss.
    pub regions: Vec<(f64, f64, String)>,
    /// Clip-level caption for the global loss.
    pub weak_caption: String,
}

/// Where the parameters come from. Resume holds full parameters by value;
/// the enum is built once per run, so the size imbalance is harmless.
#[allow(clippy::large_enum_variant)]
pub enum TrainInit<'a> {
    Fresh(&'a EncoderConfig),
    Resume(EncoderParams),
}

/// Clip-level caption: the annotated one when present, otherwise the
/// region captions joined in order with repeats removed.
pub fn weak_caption_of(clip: &AnnotatedClip) -> String {
    if let Some(w) = &clip.weak_caption {
        if !w.trim().is_empty() {
            return w.clone();
        }
    }
    let mut parts: Vec<&str> = Vec::new();
    for r in &clip.regions {
        if !parts.contains(&r.text.as_str()) {
            parts.push(&r.text);
        }
    }
    parts.join(" ")
}

/// Reads each clip's audio relative to `root` and computes mel features.
pub fn load_train_clips(
    clips: &[AnnotatedClip],
    root: &Path,
    hop: f64,
    mel_bins: usize,
) -> Result<Vec<TrainClip>> {
    clips
        .iter()
        .map(|clip| {
            let rel = clip.audio_path.as_deref().ok_or_else(|| Error::Validation {
                record: 0,
                clip_id: clip.clip_id.clone(),
                message: "clip has no audio_path".into(),
            })?;
            let w = read_wav(&root.join(rel))?;
            let mel = mel_frontend(&w, hop, mel_bins)?;
            Ok(TrainClip {
                clip_id: clip.clip_id.clone(),
                mel,
                regions: clip
                    .regions
                    .iter()
                    .map(|r| (r.onset, r.offset, r.text.clone()))
                    .collect(),
                weak_caption: weak_caption_of(clip),
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub best: EncoderParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_loss: Vec<f64>,
    pub log: Vec<TrainLogRow>,
    pub skipped_steps: usize,
}

/// Loss (and optionally parameter gradients) for one batch of clips.
fn batch_loss(
    params: &EncoderParams,
    clips: &[TrainClip],
    indices: &[usize],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(f64, Option<Gradient>)> {
    let audio_fwds: Vec<_> = indices
        .iter()
        .map(|&i| encode_audio_cached(params, &clips[i].mel))
        .collect::<Result<_>>()?;

    match cfg.loss {
        LossKind::FrameWise => {
            let mut text_fwds = Vec::new();
            let mut entries = Vec::with_capacity(indices.len());
            for (slot, &i) in indices.iter().enumerate() {
                let t_count = audio_fwds[slot].embeddings.frames();
                let mut regions = Vec::with_capacity(clips[i].regions.len());
                let mut fwds = Vec::with_capacity(clips[i].regions.len());
                for (onset, offset, text) in &clips[i].regions {
                    let span = region_to_frames(*onset, *offset, clips[i].mel.hop, t_count)?;
                    let fwd = encode_text_cached(params, text)?;
                    regions.push(RegionEntry {
                        span,
                        text: fwd.embedding.clone(),
                    });
                    fwds.push(fwd);
                }
                entries.push(ClipEntry {
                    frames: audio_fwds[slot].embeddings.clone(),
                    regions,
                });
                text_fwds.push(fwds);
            }
            let batch = BatchAssembly {
                clips: entries,
                tau: cfg.tau,
            };
            let (loss, embed_grad) = frame_wise_loss(&batch)?;
            if !want_grad {
                return Ok((loss, None));
            }
            let mut grad = Gradient::zeros_like(params);
            for slot in 0..indices.len() {
                audio_backward(params, &audio_fwds[slot], &embed_grad.frames[slot], &mut grad)?;
                for (j, fwd) in text_fwds[slot].iter().enumerate() {
                    crate::encoder::text_backward(
                        params,
                        fwd,
                        &embed_grad.texts[slot][j],
                        &mut grad,
                    )?;
                }
            }
            Ok((loss, Some(grad)))
        }
        LossKind::Global => {
            let n = indices.len();
            let dim = params.config.dim;
            let mut audio = Tensor::zeros(n, dim);
            let mut caches = Vec::with_capacity(n);
            for (slot, fwd) in audio_fwds.iter().enumerate() {
                let (pooled, cache) = global_audio_embedding(&fwd.embeddings)?;
                audio.row_mut(slot).copy_from_slice(&pooled);
                caches.push(cache);
            }
            let mut text = Tensor::zeros(n, dim);
            let mut text_fwds = Vec::with_capacity(n);
            for (slot, &i) in indices.iter().enumerate() {
                let fwd = encode_text_cached(params, &clips[i].weak_caption)?;
                text.row_mut(slot).copy_from_slice(&fwd.embedding.data);
                text_fwds.push(fwd);
            }
            let (loss, embed_grad) = global_clap_loss(&audio, &text, cfg.tau)?;
            if !want_grad {
                return Ok((loss, None));
            }
            let mut grad = Gradient::zeros_like(params);
            for slot in 0..n {
                let frame_upstream =
                    global_audio_backward(&caches[slot], embed_grad.audio.row(slot))?;
                audio_backward(params, &audio_fwds[slot], &frame_upstream, &mut grad)?;
                crate::encoder::text_backward(
                    params,
                    &text_fwds[slot],
                    embed_grad.text.row(slot),
                    &mut grad,
                )?;
            }
            Ok((loss, Some(grad)))
        }
    }
}

/// Mean loss over a clip set, batched like training but without gradients.
/// Trailing clips that cannot fill a pair are dropped.
fn eval_loss(
    params: &EncoderParams,
    clips: &[TrainClip],
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let mut batches = 0usize;
    let mut total = 0.0;
    for chunk in indices.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let (loss, _) = batch_loss(params, clips, chunk, cfg, false)?;
        total += loss;
        batches += 1;
    }
    if batches == 0 {
        return Ok(None);
    }
    Ok(Some(total / batches as f64))
}

/// Trains the encoders. Fully deterministic for a given seed and clip set:
/// two runs produce identical logs and byte-identical checkpoints. When
/// `out_dir` is given, writes epoch_NNN.ckpt, best.ckpt, final.ckpt, and
/// metrics.csv (step,lr,loss).
pub fn train(
    clips: &[TrainClip],
    init: TrainInit,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::invalid("train: no clips"));
    }
    let mut params = match init {
        TrainInit::Fresh(enc_cfg) => EncoderParams::init(enc_cfg)?,
        TrainInit::Resume(p) => p,
    };
    for clip in clips {
        if clip.mel.bins() != params.config.mel_bins {
            return Err(Error::shape(format!(
                "train: clip {} has {} mel bins, encoder expects {}",
                clip.clip_id,
                clip.mel.bins(),
                params.config.mel_bins
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut rng);
    let val_n = (clips.len() as f64 * cfg.val_fraction).round() as usize;
    // A validation side needs at least one pair; otherwise fall back to the
    // epoch's mean training loss.
    let val_n = if val_n >= 2 { val_n } else { 0 };
    let (val_idx, train_idx) = order.split_at(val_n);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let steps_per_epoch = train_idx.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "train: {} training clips cannot fill one batch of {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    let total_steps = steps_per_epoch * cfg.epochs;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut state = OptimizerState::new(&params);
    let mut log = Vec::with_capacity(total_steps);
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_val_loss = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, EncoderParams)> = None;
    let mut skipped_steps = 0usize;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for b in 0..steps_per_epoch {
            let chunk = &train_idx[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let (loss, grad) = batch_loss(&params, clips, chunk, cfg, true)?;
            let grad = grad.expect("gradient requested");
            step += 1;
            let lr = lr_at(step, total_steps, cfg)?;
            if adam_step(&mut params, &grad, &mut state, lr)? == StepOutcome::SkippedNonFinite {
                skipped_steps += 1;
            }
            epoch_loss += loss;
            log.push(TrainLogRow { step, lr, loss });
        }
        let train_mean = epoch_loss / steps_per_epoch as f64;
        epoch_train_loss.push(train_mean);

        let val = match eval_loss(&params, clips, &val_idx, cfg)? {
            Some(v) => v,
            None => train_mean,
        };
        epoch_val_loss.push(val);

        if best.as_ref().is_none_or(|(_, b, _)| val < *b) {
            best = Some((epoch, val, params.clone()));
        }

        if let Some(dir) = out_dir {
            checkpoint::save(&params, &dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }

    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch ran");

    if let Some(dir) = out_dir {
        checkpoint::save(&best_params, &dir.join("best.ckpt"))?;
        checkpoint::save(&params, &dir.join("final.ckpt"))?;
        let mut csv = String::from("step,lr,loss\n");
        for row in &log {
            let _ = writeln!(csv, "{},{},{}", row.step, row.lr, row.loss);
        }
        std::fs::write(dir.join("metrics.csv"), csv)?;
    }

    Ok(TrainOutcome {
        params,
        best: best_params,
        best_epoch,
        best_val_loss,
        epoch_train_loss,
        epoch_val_loss,
        log,
        skipped_steps,
    })
}
