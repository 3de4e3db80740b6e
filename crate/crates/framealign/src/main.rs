//! Command-line front end: dataset preparation, training, and evaluation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use framealign::audio::{mel_frontend, preprocess_waveform, read_wav, write_wav};
use framealign::train::{load_train_clips, train, weak_caption_of, TrainInit};
use framealign::caption::{
    CaptionCleaner, CleanOptions, CompletionTransport, HttpTransport, MockTransport, SystemClock,
};
use framealign::config::FileConfig;
use framealign::dataset::{
    dataset_stats, load_manifest, save_manifest, stratified_split, AnnotatedClip, DatasetSplit,
};
use framealign::encoder::{checkpoint, encode_audio, encode_text, EncoderParams};
use framealign::error::Error;
use framealign::eval::io::{read_events_tsv, read_query_list, MetricReport};
use framealign::eval::pauroc::pauroc_report;
use framealign::eval::psds::{detection_grid, psds1, threshold_grid};
use framealign::eval::retrieval::{retrieval_report, similarity_matrix};
use framealign::eval::{score_track, EventRole, ScoreTrack};
use framealign::loss::global_audio_embedding;
use framealign::tensor::Tensor;
use framealign::Result;

#[derive(Parser)]
#[command(
    name = "framealign",
    version,
    about = "Frame-level audio-text alignment: dataset prep, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize, trim, resample, and window raw audio; remap regions.
    Preprocess(PreprocessArgs),
    /// Corpus statistics from a manifest.
    Stats(StatsArgs),
    /// Deterministic stratified train/test split.
    Split(SplitArgs),
    /// Train the dual encoders.
    Train(TrainArgs),
    /// Detection metrics for text queries against ground truth.
    Evaluate(EvaluateArgs),
    /// Text-to-audio retrieval over clip embeddings.
    Retrieve(RetrieveArgs),
    /// Rewrite captions through a completion endpoint.
    CleanCaptions(CleanCaptionsArgs),
    /// Generate the synthetic benchmark corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice this command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory audio paths are relative to; defaults to the manifest's.
    #[arg(long)]
    audio_root: Option<PathBuf>,
    /// Output directory for processed audio and manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Emit JSON instead of the text table.
    #[arg(long)]
    json: bool,
    /// Drop common function words from the vocabulary count.
    #[arg(long)]
    filter_stop_words: bool,
    /// Optional file to write the report to (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Fraction of each subclass assigned to the test side.
    #[arg(long, default_value_t = 0.16)]
    test_fraction: f64,
    /// Output JSON file with train and test clip ids.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    audio_root: Option<PathBuf>,
    /// Directory for checkpoints and the metrics log.
    #[arg(long)]
    out_dir: PathBuf,
    /// Loss kind: "frame_wise" or "global". Overrides the config file.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Continue from an existing checkpoint instead of fresh parameters.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Restrict training to the train side of this split file.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    audio_root: Option<PathBuf>,
    /// Ground-truth events (clip, onset, offset, class).
    #[arg(long)]
    ground_truth: PathBuf,
    /// Class list: `id` or `id<TAB>query text` per line.
    #[arg(long)]
    classes: PathBuf,
    /// Restrict scoring to the test side of this split file.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    audio_root: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CleanCaptionsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Output manifest with rewritten captions.
    #[arg(long)]
    out: PathBuf,
    /// Use the offline mock transport (echoes captions).
    #[arg(long)]
    mock: bool,
    /// Offline response table, one "original<TAB>cleaned" pair per line;
    /// implies --mock.
    #[arg(long)]
    mock_table: Option<PathBuf>,
    /// Chat-completion endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "FRAMEALIGN_API_KEY")]
    api_key_env: String,
    /// Prompt template file containing a {caption} placeholder.
    #[arg(long)]
    prompt_template: Option<PathBuf>,
    /// Minimum seconds between requests.
    #[arg(long)]
    min_interval: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

fn audio_root_for(manifest: &Path, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn clip_waveform(
    clip: &AnnotatedClip,
    root: &Path,
) -> Result<framealign::audio::Waveform> {
    let rel = clip.audio_path.as_deref().ok_or_else(|| {
        Error::Validation {
            record: 0,
            clip_id: clip.clip_id.clone(),
            message: "clip has no audio_path".into(),
        }
    })?;
    read_wav(&root.join(rel))
}

/// Applies a split file: keep only ids on the chosen side.
fn apply_split(
    clips: Vec<AnnotatedClip>,
    split: &Option<PathBuf>,
    test_side: bool,
) -> Result<Vec<AnnotatedClip>> {
    let Some(path) = split else {
        return Ok(clips);
    };
    let split = DatasetSplit::load(path)?;
    let keep: &[String] = if test_side { &split.test_ids } else { &split.train_ids };
    let kept: Vec<AnnotatedClip> = clips
        .into_iter()
        .filter(|c| keep.contains(&c.clip_id))
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "split {} leaves no clips on the {} side",
            path.display(),
            if test_side { "test" } else { "train" }
        )));
    }
    Ok(kept)
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let opts = cfg.pipeline.resolve();
    let clips = load_manifest(&args.manifest)?;
    let root = audio_root_for(&args.manifest, &args.audio_root);
    std::fs::create_dir_all(args.out_dir.join("audio"))?;

    let mut kept = Vec::new();
    let (mut dropped_short, mut dropped_regions) = (0usize, 0usize);
    for (i, clip) in clips.iter().enumerate() {
        let w = clip_waveform(clip, &root)?;
        let Some(processed) = preprocess_waveform(&w, &opts, args.common.seed + i as u64)?
        else {
            dropped_short += 1;
            log::info!("dropping {}: shorter than {}s after trim", clip.clip_id, opts.min_duration);
            continue;
        };
        let duration = processed.waveform.duration();
        let mut regions = Vec::with_capacity(clip.regions.len());
        for r in &clip.regions {
            let onset = (r.onset - processed.shift).max(0.0);
            let offset = (r.offset - processed.shift).min(duration);
            if offset - onset > 0.0 {
                let mut r = r.clone();
                r.onset = onset;
                r.offset = offset;
                regions.push(r);
            } else {
                dropped_regions += 1;
            }
        }
        let rel = format!("audio/{}.wav", clip.clip_id);
        write_wav(&args.out_dir.join(&rel), &processed.waveform)?;
        let mut out = clip.clone();
        out.audio_path = Some(rel);
        out.duration = duration;
        out.regions = regions;
        kept.push(out);
    }
    save_manifest(&args.out_dir.join("manifest.jsonl"), &kept)?;
    println!(
        "processed {} of {} clips ({dropped_short} too short, {dropped_regions} regions dropped)",
        kept.len(),
        clips.len()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let filter = args.filter_stop_words
        || cfg.pipeline.filter_stop_words.unwrap_or(false);
    let clips = load_manifest(&args.manifest)?;
    let report = dataset_stats(&clips, filter)?;
    let text = if args.json { report.to_json() } else { report.to_text_table() };
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let clips = load_manifest(&args.manifest)?;
    let outcome = stratified_split(&clips, args.test_fraction, args.common.seed)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    outcome.split.save(&args.out)?;
    println!(
        "split {} clips into {} train / {} test",
        clips.len(),
        outcome.split.train_ids.len(),
        outcome.split.test_ids.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let enc_cfg = cfg.encoder.resolve(args.common.seed);
    let mut train_cfg = cfg.train.resolve(args.common.seed)?;
    if let Some(loss) = &args.loss {
        train_cfg.loss = loss.parse()?;
    }
    if let Some(v) = args.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.peak_lr {
        train_cfg.peak_lr = v;
    }
    if let Some(v) = args.tau {
        train_cfg.tau = v;
    }

    let clips = load_manifest(&args.manifest)?;
    let clips = apply_split(clips, &args.split, false)?;
    let root = audio_root_for(&args.manifest, &args.audio_root);
    let init = match &args.resume {
        Some(path) => TrainInit::Resume(checkpoint::load(path)?),
        None => TrainInit::Fresh(&enc_cfg),
    };
    let (hop, mel_bins) = match &init {
        TrainInit::Resume(p) => (p.config.hop, p.config.mel_bins),
        TrainInit::Fresh(c) => (c.hop, c.mel_bins),
    };
    let train_clips = load_train_clips(&clips, &root, hop, mel_bins)?;

    let outcome = train(&train_clips, init, &train_cfg, Some(&args.out_dir))?;
    println!(
        "trained {} epochs on {} clips: train loss {:.4} -> {:.4}, best val {:.4} (epoch {})",
        train_cfg.epochs,
        train_clips.len(),
        outcome.epoch_train_loss.first().unwrap(),
        outcome.epoch_train_loss.last().unwrap(),
        outcome.best_val_loss,
        outcome.best_epoch
    );
    if outcome.skipped_steps > 0 {
        eprintln!("warning: {} optimizer steps skipped on non-finite gradients", outcome.skipped_steps);
    }
    println!("checkpoints in {}", args.out_dir.display());
    Ok(())
}

/// Frame scores for every clip against every class query.
fn score_all_tracks(
    params: &EncoderParams,
    clips: &[AnnotatedClip],
    root: &Path,
    queries: &[(String, String)],
) -> Result<Vec<ScoreTrack>> {
    let query_embeds: Vec<(String, framealign::encoder::TextEmbedding)> = queries
        .iter()
        .map(|(id, text)| Ok((id.clone(), encode_text(params, text)?)))
        .collect::<Result<_>>()?;
    let mut tracks = Vec::with_capacity(clips.len() * queries.len());
    for clip in clips {
        let w = clip_waveform(clip, root)?;
        let mel = mel_frontend(&w, params.config.hop, params.config.mel_bins)?;
        let frames = encode_audio(params, &mel)?;
        for (class_id, query) in &query_embeds {
            tracks.push(score_track(&frames, query, &clip.clip_id, class_id)?);
        }
    }
    Ok(tracks)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let (pauroc_cfg, psds_cfg, n_thresholds) = cfg.eval.resolve();
    let params = checkpoint::load(&args.checkpoint)?;
    let clips = load_manifest(&args.manifest)?;
    let clips = apply_split(clips, &args.split, true)?;
    let root = audio_root_for(&args.manifest, &args.audio_root);
    let queries = read_query_list(&args.classes)?;
    let ground_truth = read_events_tsv(&args.ground_truth, EventRole::GroundTruth)?;

    let tracks = score_all_tracks(&params, &clips, &root, &queries)?;
    let pauroc = pauroc_report(&tracks, &ground_truth, &pauroc_cfg)?;
    let operating_points = detection_grid(&tracks, &threshold_grid(n_thresholds))?;
    let class_ids: Vec<String> = queries.iter().map(|(id, _)| id.clone()).collect();
    let dataset_duration: f64 = clips.iter().map(|c| c.duration).sum();
    let psds = psds1(&operating_points, &ground_truth, &class_ids, dataset_duration, &psds_cfg)?;

    let report = MetricReport {
        pauroc: Some(pauroc),
        psds: Some(psds),
        retrieval: None,
    };
    print!("{}", report.to_text_table());
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_json())?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let params = checkpoint::load(&args.checkpoint)?;
    let clips = load_manifest(&args.manifest)?;
    let clips = apply_split(clips, &args.split, true)?;
    let root = audio_root_for(&args.manifest, &args.audio_root);

    let dim = params.config.dim;
    let mut audio = Tensor::zeros(clips.len(), dim);
    let mut text = Tensor::zeros(clips.len(), dim);
    for (i, clip) in clips.iter().enumerate() {
        let w = clip_waveform(clip, &root)?;
        let mel = mel_frontend(&w, params.config.hop, params.config.mel_bins)?;
        let frames = encode_audio(&params, &mel)?;
        let (pooled, _) = global_audio_embedding(&frames)?;
        audio.row_mut(i).copy_from_slice(&pooled);
        let caption = weak_caption_of(clip);
        text.row_mut(i).copy_from_slice(&encode_text(&params, &caption)?.data);
    }
    let sim = similarity_matrix(&text, &audio)?;
    let correct: Vec<usize> = (0..clips.len()).collect();
    let report = MetricReport {
        pauroc: None,
        psds: None,
        retrieval: Some(retrieval_report(&sim, &correct)?),
    };
    print!("{}", report.to_text_table());
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_json())?;
    }
    Ok(())
}

fn clean_with<T: CompletionTransport>(
    transport: T,
    opts: CleanOptions,
    clips: &mut [AnnotatedClip],
) -> Result<(usize, usize)> {
    let mut cleaner = CaptionCleaner::new(transport, SystemClock::default(), opts)?;
    let (mut cleaned, mut degraded) = (0usize, 0usize);
    for clip in clips.iter_mut() {
        for region in clip.regions.iter_mut() {
            let out = cleaner.clean_one(&region.text)?;
            if out.cleaned {
                cleaned += 1;
            } else {
                degraded += 1;
            }
            region.text = out.text;
        }
        if let Some(weak) = &clip.weak_caption {
            let out = cleaner.clean_one(weak)?;
            if out.cleaned {
                cleaned += 1;
            } else {
                degraded += 1;
            }
            clip.weak_caption = Some(out.text);
        }
    }
    Ok((cleaned, degraded))
}

fn cmd_clean_captions(args: CleanCaptionsArgs) -> Result<()> {
    let mut opts = CleanOptions::default();
    if let Some(path) = &args.prompt_template {
        opts.prompt_template = std::fs::read_to_string(path)?;
    }
    if let Some(v) = args.min_interval {
        opts.min_interval = v;
    }
    let mut clips = load_manifest(&args.manifest)?;

    let (cleaned, degraded) = if let Some(path) = &args.mock_table {
        clean_with(MockTransport::from_table_file(path)?, opts, &mut clips)?
    } else if args.mock {
        clean_with(MockTransport::default(), opts, &mut clips)?
    } else {
        let endpoint = args.endpoint.as_deref().ok_or_else(|| {
            Error::invalid("clean-captions needs --endpoint (or --mock for offline runs)")
        })?;
        let transport = HttpTransport::new(endpoint, &args.model, &args.api_key_env)?;
        clean_with(transport, opts, &mut clips)?
    };

    save_manifest(&args.out, &clips)?;
    println!("cleaned {cleaned} captions ({degraded} kept original after failures)");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let spec = cfg.synth.resolve(args.common.seed);
    let corpus = framealign::synth::generate(&spec)?;
    framealign::synth::write_corpus(&corpus, &args.out_dir)?;
    println!(
        "wrote {} clips, {} events, {} classes to {}",
        corpus.clips.len(),
        corpus.ground_truth.events.len(),
        corpus.class_ids.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::CleanCaptions(args) => cmd_clean_captions(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
