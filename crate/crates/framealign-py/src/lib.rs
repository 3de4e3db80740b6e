//! Python bindings: encoders, the synthetic corpus, dataset utilities, and
//! the evaluation primitives, for notebook-scale experiments.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use framealign::audio::{mel_frontend, read_wav};
use framealign::dataset;
use framealign::encoder::{self, checkpoint, EncoderConfig, EncoderParams};
use framealign::eval;
use framealign::train;
use framealign::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(inner) => PyIOError::new_err(inner.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// One annotated clip from a manifest.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Clip {
    #[pyo3(get)]
    clip_id: String,
    #[pyo3(get)]
    audio_path: Option<String>,
    #[pyo3(get)]
    duration: f64,
    #[pyo3(get)]
    subclass: String,
    #[pyo3(get)]
    weak_caption: Option<String>,
    /// (onset, offset, caption) triples.
    #[pyo3(get)]
    regions: Vec<(f64, f64, String)>,
}

impl From<&dataset::AnnotatedClip> for Clip {
    fn from(c: &dataset::AnnotatedClip) -> Clip {
        Clip {
            clip_id: c.clip_id.clone(),
            audio_path: c.audio_path.clone(),
            duration: c.duration,
            subclass: c.subclass.clone(),
            weak_caption: c.weak_caption.clone(),
            regions: c
                .regions
                .iter()
                .map(|r| (r.onset, r.offset, r.text.clone()))
                .collect(),
        }
    }
}

/// The dual encoders plus their configuration.
#[pyclass]
struct Encoder {
    params: EncoderParams,
}

#[pymethods]
impl Encoder {
    /// Fresh, seeded parameters.
    #[staticmethod]
    #[pyo3(signature = (mel_bins=64, hidden=64, dim=64, buckets=16384, mixer_window=5, hop=0.02, seed=0))]
    fn init(
        mel_bins: usize,
        hidden: usize,
        dim: usize,
        buckets: usize,
        mixer_window: usize,
        hop: f64,
        seed: u64,
    ) -> PyResult<Encoder> {
        let config = EncoderConfig {
            mel_bins,
            hidden,
            dim,
            buckets,
            mixer_window,
            hop,
            seed,
        };
        Ok(Encoder {
            params: EncoderParams::init(&config).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Encoder> {
        Ok(Encoder {
            params: checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.params, &path).map_err(err)
    }

    /// (mel_bins, hidden, dim, buckets, mixer_window, hop, seed).
    #[getter]
    fn config(&self) -> (usize, usize, usize, usize, usize, f64, u64) {
        let c = &self.params.config;
        (c.mel_bins, c.hidden, c.dim, c.buckets, c.mixer_window, c.hop, c.seed)
    }

    /// Unit-norm text embedding.
    fn encode_text(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(encoder::encode_text(&self.params, text).map_err(err)?.data)
    }

    /// Frame embeddings for a wav file: (rows, frame_duration_seconds).
    fn encode_wav(&self, path: PathBuf) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let frames = self.frames_for(&path)?;
        let rows = (0..frames.frames())
            .map(|t| frames.data.row(t).to_vec())
            .collect();
        Ok((rows, frames.delta))
    }

    /// Clip-level audio embedding (renormalized mean of the frames).
    fn encode_wav_global(&self, path: PathBuf) -> PyResult<Vec<f64>> {
        let frames = self.frames_for(&path)?;
        let (pooled, _) = framealign::loss::global_audio_embedding(&frames).map_err(err)?;
        Ok(pooled)
    }

    /// Per-frame cosine scores of a text query against a wav file:
    /// (scores, frame_duration_seconds).
    fn score_wav(&self, path: PathBuf, query: &str) -> PyResult<(Vec<f64>, f64)> {
        let frames = self.frames_for(&path)?;
        let q = encoder::encode_text(&self.params, query).map_err(err)?;
        let track = eval::score_track(&frames, &q, "clip", "query").map_err(err)?;
        Ok((track.scores, track.delta))
    }
}

impl Encoder {
    fn frames_for(&self, path: &Path) -> PyResult<encoder::FrameEmbeddings> {
        let w = read_wav(path).map_err(err)?;
        let mel =
            mel_frontend(&w, self.params.config.hop, self.params.config.mel_bins).map_err(err)?;
        encoder::encode_audio(&self.params, &mel).map_err(err)
    }
}

/// Writes a synthetic benchmark corpus and returns the clip count.
#[pyfunction]
#[pyo3(signature = (out_dir, classes=5, clips_per_class=8, seed=0))]
fn generate_corpus(out_dir: PathBuf, classes: usize, clips_per_class: usize, seed: u64) -> PyResult<usize> {
    let spec = framealign::synth::SynthSpec {
        classes,
        clips_per_class,
        seed,
        ..Default::default()
    };
    let corpus = framealign::synth::generate(&spec).map_err(err)?;
    framealign::synth::write_corpus(&corpus, &out_dir).map_err(err)?;
    Ok(corpus.clips.len())
}

#[pyfunction]
fn load_manifest(path: PathBuf) -> PyResult<Vec<Clip>> {
    Ok(dataset::load_manifest(&path)
        .map_err(err)?
        .iter()
        .map(Clip::from)
        .collect())
}

#[pyfunction]
#[pyo3(signature = (path, filter_stop_words=false))]
fn dataset_stats_json(path: PathBuf, filter_stop_words: bool) -> PyResult<String> {
    let clips = dataset::load_manifest(&path).map_err(err)?;
    Ok(dataset::dataset_stats(&clips, filter_stop_words).map_err(err)?.to_json())
}

/// Stratified split: (train_ids, test_ids, warnings).
#[pyfunction]
#[pyo3(signature = (path, test_fraction, seed=0))]
fn stratified_split_ids(
    path: PathBuf,
    test_fraction: f64,
    seed: u64,
) -> PyResult<(Vec<String>, Vec<String>, Vec<String>)> {
    let clips = dataset::load_manifest(&path).map_err(err)?;
    let outcome = dataset::stratified_split(&clips, test_fraction, seed).map_err(err)?;
    Ok((outcome.split.train_ids, outcome.split.test_ids, outcome.warnings))
}

#[pyfunction]
fn merge_intervals(intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    dataset::merge_intervals(&intervals)
}

/// Half-open frame span covered by a region, given the frame duration and
/// the clip's frame count.
#[pyfunction]
fn region_to_frames(onset: f64, offset: f64, delta: f64, t_count: usize) -> PyResult<(usize, usize)> {
    let span = framealign::loss::region_to_frames(onset, offset, delta, t_count).map_err(err)?;
    Ok((span.t_on, span.t_off))
}

/// Per-frame spans above a threshold, in seconds.
#[pyfunction]
fn extract_event_spans(scores: Vec<f64>, delta: f64, threshold: f64) -> Vec<(f64, f64)> {
    let track = eval::ScoreTrack {
        clip_id: "clip".into(),
        class_id: "query".into(),
        scores,
        delta,
    };
    eval::extract_events(&track, threshold)
        .into_iter()
        .map(|e| (e.onset, e.offset))
        .collect()
}

/// Partial AUROC over (score, label) pairs, normalized by max_fpr.
#[pyfunction]
#[pyo3(signature = (scores, labels, max_fpr=0.1))]
fn partial_auroc(scores: Vec<f64>, labels: Vec<bool>, max_fpr: f64) -> PyResult<f64> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let pairs: Vec<(f64, bool)> = scores.into_iter().zip(labels).collect();
    eval::pauroc::partial_auroc(&pairs, max_fpr).map_err(err)
}

/// Retrieval rank of the correct candidate (1-based, ties break by index).
#[pyfunction]
fn retrieval_rank(similarities: Vec<f64>, correct: usize) -> PyResult<usize> {
    eval::retrieval::rank_of(&similarities, correct).map_err(err)
}

/// Trains on a manifest and writes checkpoints; returns
/// (epoch_train_losses, best_epoch, best_val_loss).
#[pyfunction]
#[pyo3(signature = (
    manifest, out_dir, audio_root=None, loss="frame_wise", epochs=4, batch_size=4,
    peak_lr=3e-3, final_lr=1e-6, warmup_epochs=1, tau=0.1, val_fraction=0.0, seed=0,
    mel_bins=24, hidden=24, dim=16, buckets=512, mixer_window=5, hop=0.1, resume=None
))]
#[allow(clippy::too_many_arguments)]
fn train_encoder(
    manifest: PathBuf,
    out_dir: PathBuf,
    audio_root: Option<PathBuf>,
    loss: &str,
    epochs: usize,
    batch_size: usize,
    peak_lr: f64,
    final_lr: f64,
    warmup_epochs: usize,
    tau: f64,
    val_fraction: f64,
    seed: u64,
    mel_bins: usize,
    hidden: usize,
    dim: usize,
    buckets: usize,
    mixer_window: usize,
    hop: f64,
    resume: Option<PathBuf>,
) -> PyResult<(Vec<f64>, usize, f64)> {
    let clips = dataset::load_manifest(&manifest).map_err(err)?;
    let root = audio_root
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
    let cfg = train::TrainConfig {
        batch_size,
        epochs,
        peak_lr,
        final_lr,
        warmup_epochs,
        tau,
        seed,
        loss: loss.parse().map_err(err)?,
        val_fraction,
    };
    let enc_cfg = EncoderConfig {
        mel_bins,
        hidden,
        dim,
        buckets,
        mixer_window,
        hop,
        seed,
    };
    let init = match resume {
        Some(path) => train::TrainInit::Resume(checkpoint::load(&path).map_err(err)?),
        None => train::TrainInit::Fresh(&enc_cfg),
    };
    let (hop, mel_bins) = match &init {
        train::TrainInit::Resume(p) => (p.config.hop, p.config.mel_bins),
        train::TrainInit::Fresh(c) => (c.hop, c.mel_bins),
    };
    let train_clips = train::load_train_clips(&clips, &root, hop, mel_bins).map_err(err)?;
    let outcome = train::train(&train_clips, init, &cfg, Some(&out_dir)).map_err(err)?;
    Ok((outcome.epoch_train_loss, outcome.best_epoch, outcome.best_val_loss))
}

#[pymodule]
fn framealign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Encoder>()?;
    m.add_class::<Clip>()?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats_json, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_split_ids, m)?)?;
    m.add_function(wrap_pyfunction!(merge_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(region_to_frames, m)?)?;
    m.add_function(wrap_pyfunction!(extract_event_spans, m)?)?;
    m.add_function(wrap_pyfunction!(partial_auroc, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval_rank, m)?)?;
    m.add_function(wrap_pyfunction!(train_encoder, m)?)?;
    Ok(())
}
