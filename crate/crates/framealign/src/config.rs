//! TOML configuration. Every field is optional; a missing field falls back
//! to the built-in default, and command-line flags override both.

use std::path::Path;

use serde::Deserialize;

use crate::audio::PreprocessOptions;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::pauroc::PaurocConfig;
use crate::eval::psds::PsdsConfig;
use crate::synth::SynthSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl FileConfig {
    /// Loads a TOML file, or returns all-defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub trim_threshold_db: Option<f64>,
    pub target_sample_rate: Option<u32>,
    pub min_duration: Option<f64>,
    pub max_duration: Option<f64>,
    pub fade_duration: Option<f64>,
    pub search_hop: Option<f64>,
    pub filter_stop_words: Option<bool>,
}

impl PipelineSection {
    pub fn resolve(&self) -> PreprocessOptions {
        let d = PreprocessOptions::default();
        PreprocessOptions {
            trim_threshold_db: self.trim_threshold_db.unwrap_or(d.trim_threshold_db),
            target_sample_rate: self.target_sample_rate.unwrap_or(d.target_sample_rate),
            min_duration: self.min_duration.unwrap_or(d.min_duration),
            max_duration: self.max_duration.unwrap_or(d.max_duration),
            fade_duration: self.fade_duration.unwrap_or(d.fade_duration),
            search_hop: self.search_hop.unwrap_or(d.search_hop),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub mel_bins: Option<usize>,
    pub hidden: Option<usize>,
    pub dim: Option<usize>,
    pub buckets: Option<usize>,
    pub mixer_window: Option<usize>,
    pub hop: Option<f64>,
}

impl EncoderSection {
    /// The encoder seed comes from the command line, not the file, so one
    /// config can drive differently seeded runs.
    pub fn resolve(&self, seed: u64) -> EncoderConfig {
        let d = EncoderConfig::default();
        EncoderConfig {
            mel_bins: self.mel_bins.unwrap_or(d.mel_bins),
            hidden: self.hidden.unwrap_or(d.hidden),
            dim: self.dim.unwrap_or(d.dim),
            buckets: self.buckets.unwrap_or(d.buckets),
            mixer_window: self.mixer_window.unwrap_or(d.mixer_window),
            hop: self.hop.unwrap_or(d.hop),
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub peak_lr: Option<f64>,
    pub final_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub tau: Option<f64>,
    pub val_fraction: Option<f64>,
    pub loss: Option<String>,
}

impl TrainSection {
    pub fn resolve(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            peak_lr: self.peak_lr.unwrap_or(d.peak_lr),
            final_lr: self.final_lr.unwrap_or(d.final_lr),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            tau: self.tau.unwrap_or(d.tau),
            seed,
            loss: match &self.loss {
                Some(s) => s.parse()?,
                None => d.loss,
            },
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
        })
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub segment_duration: Option<f64>,
    pub max_fpr: Option<f64>,
    pub dtc: Option<f64>,
    pub gtc: Option<f64>,
    pub max_efpr: Option<f64>,
    pub variance_penalty: Option<f64>,
    pub thresholds: Option<usize>,
}

impl EvalSection {
    pub fn resolve(&self) -> (PaurocConfig, PsdsConfig, usize) {
        let dp = PaurocConfig::default();
        let ds = PsdsConfig::default();
        (
            PaurocConfig {
                segment_duration: self.segment_duration.unwrap_or(dp.segment_duration),
                max_fpr: self.max_fpr.unwrap_or(dp.max_fpr),
            },
            PsdsConfig {
                dtc: self.dtc.unwrap_or(ds.dtc),
                gtc: self.gtc.unwrap_or(ds.gtc),
                max_efpr: self.max_efpr.unwrap_or(ds.max_efpr),
                variance_penalty: self.variance_penalty.unwrap_or(ds.variance_penalty),
            },
            self.thresholds.unwrap_or(50),
        )
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub classes: Option<usize>,
    pub clips_per_class: Option<usize>,
    pub clip_duration_min: Option<f64>,
    pub clip_duration_max: Option<f64>,
    pub event_duration_min: Option<f64>,
    pub event_duration_max: Option<f64>,
    pub events_per_clip_min: Option<usize>,
    pub events_per_clip_max: Option<usize>,
    pub noise_floor_db: Option<f64>,
    pub sample_rate: Option<u32>,
}

impl SynthSection {
    pub fn resolve(&self, seed: u64) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            classes: self.classes.unwrap_or(d.classes),
            clips_per_class: self.clips_per_class.unwrap_or(d.clips_per_class),
            clip_duration: (
                self.clip_duration_min.unwrap_or(d.clip_duration.0),
                self.clip_duration_max.unwrap_or(d.clip_duration.1),
            ),
            event_duration: (
                self.event_duration_min.unwrap_or(d.event_duration.0),
                self.event_duration_max.unwrap_or(d.event_duration.1),
            ),
            events_per_clip: (
                self.events_per_clip_min.unwrap_or(d.events_per_clip.0),
                self.events_per_clip_max.unwrap_or(d.events_per_clip.1),
            ),
            noise_floor_db: self.noise_floor_db.unwrap_or(d.noise_floor_db),
            sample_rate: self.sample_rate.unwrap_or(d.sample_rate),
            seed,
        }
    }
}
