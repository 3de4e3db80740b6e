//! Dataset model for strongly-annotated audio clips.
//!
//! A clip carries free-text regions, each bound to an onset/offset pair in
//! seconds. Manifests are JSON Lines, one clip per line. Seconds are written
//! with at least three fractional digits so that files round-trip byte for
//! byte through save -> load -> save.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed overshoot of a region offset past the clip duration, in seconds.
/// Equal to one analysis frame; anything larger is a validation error.
pub const REGION_OFFSET_TOLERANCE: f64 = 0.02;

/// Duration bounds for a clip that has been through preprocessing.
pub const PROCESSED_MIN_DURATION: f64 = 15.0;
pub const PROCESSED_MAX_DURATION: f64 = 30.0;

/// One temporally-strong annotation: a free-text description bound to a
/// time span within its clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub onset: f64,
    pub offset: f64,
    pub text: String,
    pub annotator: Option<String>,
}

/// An audio clip plus its strong regions and optional clip-level caption.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedClip {
    pub clip_id: String,
    pub audio_path: Option<String>,
    pub duration: f64,
    pub subclass: String,
    pub weak_caption: Option<String>,
    pub regions: Vec<Region>,
}

impl AnnotatedClip {
    /// Checks invariants that hold for every clip, processed or raw.
    /// Returns a human-readable message for the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.clip_id.trim().is_empty() {
            return Err("empty clip_id".to_string());
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(format!("non-positive duration {}", self.duration));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !r.onset.is_finite() || !r.offset.is_finite() {
                return Err(format!("region {i}: non-finite bounds"));
            }
            if r.onset < 0.0 {
                return Err(format!("region {i}: negative onset {}", r.onset));
            }
            if r.offset <= r.onset {
                return Err(format!(
                    "region {i}: offset {} not after onset {}",
                    r.offset, r.onset
                ));
            }
            if r.offset > self.duration + REGION_OFFSET_TOLERANCE {
                return Err(format!(
                    "region {i}: offset {} exceeds duration {} by more than {}",
                    r.offset, self.duration, REGION_OFFSET_TOLERANCE
                ));
            }
            if r.text.trim().is_empty() {
                return Err(format!("region {i}: empty text"));
            }
        }
        Ok(())
    }

    /// Additional bound that applies only after preprocessing.
    pub fn validate_processed(&self) -> std::result::Result<(), String> {
        if self.duration < PROCESSED_MIN_DURATION - 1e-9
            || self.duration > PROCESSED_MAX_DURATION + 1e-9
        {
            return Err(format!(
                "processed duration {} outside [{PROCESSED_MIN_DURATION}, {PROCESSED_MAX_DURATION}]",
                self.duration
            ));
        }
        Ok(())
    }
}

/// Two-level label taxonomy: subclasses, each pointing at a superclass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub superclasses: Vec<String>,
    pub subclasses: Vec<SubclassDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubclassDef {
    pub id: String,
    pub parent: String,
}

impl Ontology {
    pub fn validate(&self) -> Result<()> {
        let mut supers = BTreeSet::new();
        for s in &self.superclasses {
            if s.trim().is_empty() {
                return Err(Error::invalid("ontology: empty superclass name"));
            }
            if !supers.insert(s.as_str()) {
                return Err(Error::invalid(format!("ontology: duplicate superclass {s}")));
            }
        }
        let mut subs = BTreeSet::new();
        for s in &self.subclasses {
            if s.id.trim().is_empty() {
                return Err(Error::invalid("ontology: empty subclass id"));
            }
            if !subs.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("ontology: duplicate subclass {}", s.id)));
            }
            if !supers.contains(s.parent.as_str()) {
                return Err(Error::invalid(format!(
                    "ontology: subclass {} references unknown superclass {}",
                    s.id, s.parent
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Ontology> {
        let text = std::fs::read_to_string(path)?;
        let ont: Ontology = serde_json::from_str(&text).map_err(|e| Error::Parse {
            record: e.line(),
            message: e.to_string(),
        })?;
        ont.validate()?;
        Ok(ont)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).expect("ontology serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Disjoint train/test partition by clip id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&str> = self.train_ids.iter().map(|s| s.as_str()).collect();
        let test: BTreeSet<&str> = self.test_ids.iter().map(|s| s.as_str()).collect();
        if train.len() != self.train_ids.len() || test.len() != self.test_ids.len() {
            return Err(Error::invalid("split: duplicate ids within a side"));
        }
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::invalid(format!("split: id {id} on both sides")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetSplit> {
        let text = std::fs::read_to_string(path)?;
        let split: DatasetSplit = serde_json::from_str(&text).map_err(|e| Error::Parse {
            record: e.line(),
            message: e.to_string(),
        })?;
        split.validate()?;
        Ok(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct ManifestRegionRecord {
    onset_s: f64,
    offset_s: f64,
    text: String,
    #[serde(default)]
    annotator: Option<String>,
}

#[derive(Deserialize)]
struct ManifestRecord {
    clip_id: String,
    #[serde(default)]
    audio_path: Option<String>,
    duration_s: f64,
    subclass: String,
    #[serde(default)]
    weak_caption: Option<String>,
    #[serde(default)]
    regions: Vec<ManifestRegionRecord>,
}

/// Loads a JSON Lines manifest. Blank lines are skipped. Every record is
/// validated; errors carry the 1-based line number.
pub fn load_manifest(path: &Path) -> Result<Vec<AnnotatedClip>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut clips = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let record = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            record,
            message: e.to_string(),
        })?;
        let clip = AnnotatedClip {
            clip_id: rec.clip_id,
            audio_path: rec.audio_path,
            duration: rec.duration_s,
            subclass: rec.subclass,
            weak_caption: rec.weak_caption,
            regions: rec
                .regions
                .into_iter()
                .map(|r| Region {
                    onset: r.onset_s,
                    offset: r.offset_s,
                    text: r.text,
                    annotator: r.annotator,
                })
                .collect(),
        };
        clip.validate().map_err(|message| Error::Validation {
            record,
            clip_id: clip.clip_id.clone(),
            message,
        })?;
        if !seen.insert(clip.clip_id.clone()) {
            return Err(Error::Validation {
                record,
                clip_id: clip.clip_id.clone(),
                message: "duplicate clip_id".to_string(),
            });
        }
        clips.push(clip);
    }
    Ok(clips)
}

/// Formats a seconds value with at least three fractional digits, padding
/// the shortest round-trip decimal form with zeros. `f64` display in Rust
/// never switches to scientific notation, so the result always reparses to
/// the same bits.
pub fn format_seconds(v: f64) -> String {
    let mut s = format!("{v}");
    match s.find('.') {
        Some(dot) => {
            let frac = s.len() - dot - 1;
            for _ in frac..3 {
                s.push('0');
            }
        }
        None => s.push_str(".000"),
    }
    s
}

fn push_json_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Renders one manifest line. Key order is fixed; optional fields are
/// omitted when absent so that emitted files are canonical.
pub fn manifest_line(clip: &AnnotatedClip) -> String {
    let mut out = String::new();
    out.push_str("{\"clip_id\":");
    push_json_string(&mut out, &clip.clip_id);
    if let Some(path) = &clip.audio_path {
        out.push_str(",\"audio_path\":");
        push_json_string(&mut out, path);
    }
    let _ = write!(out, ",\"duration_s\":{}", format_seconds(clip.duration));
    out.push_str(",\"subclass\":");
    push_json_string(&mut out, &clip.subclass);
    if let Some(caption) = &clip.weak_caption {
        out.push_str(",\"weak_caption\":");
        push_json_string(&mut out, caption);
    }
    out.push_str(",\"regions\":[");
    for (i, r) in clip.regions.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{{\"onset_s\":{},\"offset_s\":{},\"text\":",
            format_seconds(r.onset),
            format_seconds(r.offset)
        );
        push_json_string(&mut out, &r.text);
        if let Some(a) = &r.annotator {
            out.push_str(",\"annotator\":");
            push_json_string(&mut out, a);
        }
        out.push('}');
    }
    out.push_str("]}");
    out
}

/// Writes a JSON Lines manifest. Clips are validated first; the record index
/// in an error is the would-be line number.
pub fn save_manifest(path: &Path, clips: &[AnnotatedClip]) -> Result<()> {
    for (idx, clip) in clips.iter().enumerate() {
        clip.validate().map_err(|message| Error::Validation {
            record: idx + 1,
            clip_id: clip.clip_id.clone(),
            message,
        })?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for clip in clips {
        file.write_all(manifest_line(clip).as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Merges a set of (start, end) intervals into disjoint sorted intervals.
/// Intervals that merely touch are merged.
pub fn merge_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = intervals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite interval bounds"));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (on, off) in sorted {
        match merged.last_mut() {
            Some(last) if on <= last.1 => {
                if off > last.1 {
                    last.1 = off;
                }
            }
            _ => merged.push((on, off)),
        }
    }
    merged
}

/// Merges region time spans into disjoint sorted intervals.
pub fn merge_overlapping_regions(regions: &[Region]) -> Vec<(f64, f64)> {
    let spans: Vec<(f64, f64)> = regions.iter().map(|r| (r.onset, r.offset)).collect();
    merge_intervals(&spans)
}

/// Fraction of the clip covered by at least one region, clamped to [0, 1].
pub fn coverage(clip: &AnnotatedClip) -> f64 {
    if clip.duration <= 0.0 {
        return 0.0;
    }
    let merged = merge_overlapping_regions(&clip.regions);
    let covered: f64 = merged.iter().map(|(on, off)| off - on).sum();
    (covered / clip.duration).clamp(0.0, 1.0)
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "in", "on", "at", "is", "are", "was", "were", "be",
    "been", "being", "it", "its", "with", "by", "to", "from", "as", "that", "this", "then",
];

/// Lowercases, splits on whitespace, and trims non-alphanumeric edges.
/// Used only for vocabulary statistics; the encoder tokenizer is separate
/// and keeps punctuation.
pub fn caption_tokens(text: &str, filter_stop_words: bool) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .filter(|w| !filter_stop_words || !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

pub const COVERAGE_HISTOGRAM_BINS: usize = 31;

/// Corpus-level descriptive statistics.
#[derive(Clone, Debug, Serialize)]
pub struct StatsReport {
    pub clip_count: usize,
    pub region_count: usize,
    pub regions_per_clip: f64,
    pub audio_hours: f64,
    pub region_hours: f64,
    pub caption_words_mean: f64,
    pub caption_words_std: f64,
    pub vocab_size: usize,
    pub stop_words_filtered: bool,
    pub mean_coverage: f64,
    /// Equal-width bins over [0, 1]; coverage 1.0 lands in the last bin.
    pub coverage_histogram: Vec<usize>,
    pub subclass_counts: BTreeMap<String, usize>,
}

impl StatsReport {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "clips               {}", self.clip_count);
        let _ = writeln!(out, "regions             {}", self.region_count);
        let _ = writeln!(out, "regions per clip    {:.2}", self.regions_per_clip);
        let _ = writeln!(out, "audio hours         {:.2}", self.audio_hours);
        let _ = writeln!(out, "region hours        {:.2}", self.region_hours);
        let _ = writeln!(out, "caption words mean  {:.2}", self.caption_words_mean);
        let _ = writeln!(out, "caption words std   {:.2}", self.caption_words_std);
        let _ = writeln!(
            out,
            "vocabulary          {}{}",
            self.vocab_size,
            if self.stop_words_filtered {
                " (stop words filtered)"
            } else {
                ""
            }
        );
        let _ = writeln!(out, "mean coverage       {:.4}", self.mean_coverage);
        let _ = writeln!(out, "coverage histogram  {:?}", self.coverage_histogram);
        let _ = writeln!(out, "subclasses          {}", self.subclass_counts.len());
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Computes corpus statistics over a set of clips.
pub fn dataset_stats(clips: &[AnnotatedClip], filter_stop_words: bool) -> Result<StatsReport> {
    if clips.is_empty() {
        return Err(Error::invalid("dataset_stats: no clips"));
    }
    let clip_count = clips.len();
    let mut region_count = 0usize;
    let mut audio_seconds = 0.0;
    let mut region_seconds = 0.0;
    let mut word_counts: Vec<f64> = Vec::new();
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    let mut coverage_sum = 0.0;
    let mut histogram = vec![0usize; COVERAGE_HISTOGRAM_BINS];
    let mut subclass_counts: BTreeMap<String, usize> = BTreeMap::new();

    for clip in clips {
        audio_seconds += clip.duration;
        *subclass_counts.entry(clip.subclass.clone()).or_insert(0) += 1;
        for r in &clip.regions {
            region_count += 1;
            region_seconds += r.offset - r.onset;
            word_counts.push(r.text.split_whitespace().count() as f64);
            for tok in caption_tokens(&r.text, filter_stop_words) {
                vocab.insert(tok);
            }
        }
        let c = coverage(clip);
        coverage_sum += c;
        let bin = ((c * COVERAGE_HISTOGRAM_BINS as f64) as usize).min(COVERAGE_HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }

    let (words_mean, words_std) = if word_counts.is_empty() {
        (0.0, 0.0)
    } else {
        let n = word_counts.len() as f64;
        let mean = word_counts.iter().sum::<f64>() / n;
        let var = word_counts.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };

    Ok(StatsReport {
        clip_count,
        region_count,
        regions_per_clip: region_count as f64 / clip_count as f64,
        audio_hours: audio_seconds / 3600.0,
        region_hours: region_seconds / 3600.0,
        caption_words_mean: words_mean,
        caption_words_std: words_std,
        vocab_size: vocab.len(),
        stop_words_filtered: filter_stop_words,
        mean_coverage: coverage_sum / clip_count as f64,
        coverage_histogram: histogram,
        subclass_counts,
    })
}

/// A split plus any allocation warnings (subclasses too small to land clips
/// on both sides).
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub split: DatasetSplit,
    pub warnings: Vec<String>,
}

/// Partitions clips into train/test, stratified by subclass. Test counts per
/// subclass follow the largest-remainder method, so each subclass receives
/// within one clip of its exact quota and the total matches
/// round(len * test_fraction). Deterministic for a given seed and clip set;
/// independent of input order.
pub fn stratified_split(
    clips: &[AnnotatedClip],
    test_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "stratified_split: test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    if clips.is_empty() {
        return Err(Error::invalid("stratified_split: no clips"));
    }

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for clip in clips {
        groups
            .entry(clip.subclass.as_str())
            .or_default()
            .push(clip.clip_id.as_str());
    }

    let total = clips.len();
    let target_total = (total as f64 * test_fraction).round() as usize;

    // Largest-remainder allocation of target_total across subclasses.
    struct Alloc<'a> {
        name: &'a str,
        base: usize,
        remainder: f64,
        extra: usize,
    }
    let mut allocs: Vec<Alloc> = groups
        .iter()
        .map(|(name, ids)| {
            let quota = ids.len() as f64 * test_fraction;
            let base = quota.floor() as usize;
            Alloc {
                name,
                base,
                remainder: quota - base as f64,
                extra: 0,
            }
        })
        .collect();
    let base_sum: usize = allocs.iter().map(|a| a.base).sum();
    let deficit = target_total.saturating_sub(base_sum);
    let mut order: Vec<usize> = (0..allocs.len()).collect();
    order.sort_by(|&i, &j| {
        allocs[j]
            .remainder
            .partial_cmp(&allocs[i].remainder)
            .expect("finite remainder")
            .then_with(|| allocs[i].name.cmp(allocs[j].name))
    });
    for &i in order.iter().take(deficit) {
        allocs[i].extra = 1;
    }
    let take: BTreeMap<&str, usize> = allocs
        .iter()
        .map(|a| (a.name, a.base + a.extra))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids: Vec<String> = Vec::new();
    let mut test_ids: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    for (name, ids) in groups.iter_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_test = take[name].min(ids.len());
        if n_test == 0 {
            warnings.push(format!(
                "subclass {name}: {} clips, none allocated to test",
                ids.len()
            ));
        } else if n_test == ids.len() {
            warnings.push(format!(
                "subclass {name}: all {} clips allocated to test",
                ids.len()
            ));
        }
        for (i, id) in ids.iter().enumerate() {
            if i < n_test {
                test_ids.push(id.to_string());
            } else {
                train_ids.push(id.to_string());
            }
        }
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();

    let split = DatasetSplit { train_ids, test_ids };
    split.validate()?;
    Ok(SplitOutcome { split, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(onset: f64, offset: f64, text: &str) -> Region {
        Region {
            onset,
            offset,
            text: text.to_string(),
            annotator: None,
        }
    }

    fn clip(id: &str, duration: f64, subclass: &str, regions: Vec<Region>) -> AnnotatedClip {
        AnnotatedClip {
            clip_id: id.to_string(),
            audio_path: None,
            duration,
            subclass: subclass.to_string(),
            weak_caption: None,
            regions,
        }
    }

    #[test]
    fn merge_hand_cases() {
        assert!(merge_intervals(&[]).is_empty());
        assert_eq!(merge_intervals(&[(1.0, 2.0)]), vec![(1.0, 2.0)]);
        // Touching intervals merge.
        assert_eq!(merge_intervals(&[(0.0, 1.0), (1.0, 2.0)]), vec![(0.0, 2.0)]);
        // Containment, disorder, and a gap.
        assert_eq!(
            merge_intervals(&[(5.0, 6.0), (0.0, 3.0), (1.0, 2.0), (2.5, 4.0)]),
            vec![(0.0, 4.0), (5.0, 6.0)]
        );
    }

    #[test]
    fn five_region_train_clip_covers_everything() {
        let c = clip(
            "train",
            20.848,
            "vehicle",
            vec![
                region(0.000, 2.605, "approaching with horn"),
                region(2.624, 20.848, "going by"),
                region(0.040, 1.746, "horn blares"),
                region(1.760, 2.969, "drives by"),
                region(2.982, 20.848, "fades away"),
            ],
        );
        let merged = merge_overlapping_regions(&c.regions);
        assert_eq!(merged, vec![(0.0, 20.848)]);
        assert_eq!(coverage(&c), 1.0);
    }

    #[test]
    fn two_region_coverage_leaves_gap() {
        let c = clip(
            "train",
            20.848,
            "vehicle",
            vec![
                region(0.000, 2.605, "approaching with horn"),
                region(2.624, 20.848, "going by"),
            ],
        );
        let expected = (2.605 + (20.848 - 2.624)) / 20.848;
        assert!((coverage(&c) - expected).abs() < 1e-12);
        assert!(coverage(&c) < 1.0);
    }

    #[test]
    fn merge_matches_millisecond_raster_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..12);
            let mut intervals = Vec::new();
            for _ in 0..n {
                let on = rng.gen_range(0..29_000_u32);
                let len = rng.gen_range(1..=(30_000 - on));
                intervals.push((on as f64 / 1000.0, (on + len) as f64 / 1000.0));
            }
            let merged = merge_intervals(&intervals);
            let oracle = raster_merge_ms(&intervals);
            assert_eq!(merged.len(), oracle.len());
            for (a, b) in merged.iter().zip(&oracle) {
                assert_eq!((a.0 * 1000.0).round() as u32, b.0);
                assert_eq!((a.1 * 1000.0).round() as u32, b.1);
            }
        }
    }

    /// Rasterizes intervals onto a 1 ms grid and reads back runs of covered
    /// cells. Exact for interval bounds that are integer milliseconds.
    fn raster_merge_ms(intervals: &[(f64, f64)]) -> Vec<(u32, u32)> {
        let mut cells = vec![false; 30_001];
        for &(on, off) in intervals {
            let a = (on * 1000.0).round() as usize;
            let b = (off * 1000.0).round() as usize;
            for cell in cells.iter_mut().take(b).skip(a) {
                *cell = true;
            }
        }
        let mut runs = Vec::new();
        let mut start: Option<usize> = None;
        for (i, &c) in cells.iter().enumerate() {
            match (c, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s as u32, i as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s as u32, cells.len() as u32));
        }
        runs
    }

    #[test]
    fn manifest_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let clips = vec![
            AnnotatedClip {
                clip_id: "a_01".into(),
                audio_path: Some("audio/a_01.wav".into()),
                duration: 20.848,
                subclass: "vehicle".into(),
                weak_caption: Some("A train approaches \"loudly\".".into()),
                regions: vec![
                    region(0.0, 2.605, "horn"),
                    Region {
                        onset: 2.624,
                        offset: 20.848,
                        text: "going\tby".into(),
                        annotator: Some("ann-3".into()),
                    },
                ],
            },
            clip("b_02", 17.5, "animal", vec![region(0.2, 10.0, "dog barks")]),
        ];
        let p1 = dir.path().join("m1.jsonl");
        let p2 = dir.path().join("m2.jsonl");
        save_manifest(&p1, &clips).unwrap();
        let loaded = load_manifest(&p1).unwrap();
        save_manifest(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(loaded, clips);
    }

    #[test]
    fn seconds_formatting_pads_to_three_digits() {
        assert_eq!(format_seconds(0.0), "0.000");
        assert_eq!(format_seconds(0.2), "0.200");
        assert_eq!(format_seconds(13.5), "13.500");
        assert_eq!(format_seconds(20.848), "20.848");
        assert_eq!(format_seconds(1.0005), "1.0005");
        assert_eq!(format_seconds(15.0), "15.000");
    }

    #[test]
    fn parse_error_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = manifest_line(&clip("ok", 16.0, "x", vec![region(0.0, 1.0, "t")]));
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn validation_error_reports_clip_and_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let bad = r#"{"clip_id":"c9","duration_s":10.000,"subclass":"x","regions":[{"onset_s":3.000,"offset_s":2.000,"text":"rev"}]}"#;
        std::fs::write(&path, format!("{bad}\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Validation { record, clip_id, .. }) => {
                assert_eq!(record, 1);
                assert_eq!(clip_id, "c9");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn offset_may_overshoot_duration_by_one_frame_only() {
        let ok = clip("c", 10.0, "x", vec![region(0.0, 10.019, "t")]);
        assert!(ok.validate().is_ok());
        let bad = clip("c", 10.0, "x", vec![region(0.0, 10.021, "t")]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn duplicate_clip_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let line = manifest_line(&clip("same", 16.0, "x", vec![region(0.0, 1.0, "t")]));
        std::fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Validation { record, .. }) => assert_eq!(record, 2),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn stats_basics() {
        let clips = vec![
            clip(
                "a",
                20.0,
                "vehicle",
                vec![region(0.0, 10.0, "A loud train"), region(10.0, 20.0, "the train fades")],
            ),
            clip("b", 16.0, "animal", vec![region(0.0, 8.0, "a dog barks")]),
        ];
        let s = dataset_stats(&clips, false).unwrap();
        assert_eq!(s.clip_count, 2);
        assert_eq!(s.region_count, 3);
        assert!((s.regions_per_clip - 1.5).abs() < 1e-12);
        assert!((s.audio_hours - 36.0 / 3600.0).abs() < 1e-12);
        assert!((s.region_hours - 28.0 / 3600.0).abs() < 1e-12);
        assert!((s.caption_words_mean - 3.0).abs() < 1e-12);
        // Vocab: a, loud, train, the, fades, dog, barks = 7 distinct.
        assert_eq!(s.vocab_size, 7);
        assert!((s.mean_coverage - 0.75).abs() < 1e-12);
        assert_eq!(s.coverage_histogram.iter().sum::<usize>(), 2);
        assert_eq!(s.coverage_histogram[30], 1);

        let filtered = dataset_stats(&clips, true).unwrap();
        // Stop words removed: loud, train, fades, dog, barks = 5.
        assert_eq!(filtered.vocab_size, 5);
    }

    #[test]
    fn stats_order_invariant() {
        let mut clips: Vec<AnnotatedClip> = (0..20)
            .map(|i| {
                clip(
                    &format!("c{i}"),
                    15.0 + i as f64 * 0.5,
                    if i % 3 == 0 { "a" } else { "b" },
                    vec![region(0.0, 5.0 + i as f64 * 0.3, "words vary here")],
                )
            })
            .collect();
        let s1 = dataset_stats(&clips, false).unwrap();
        clips.reverse();
        let s2 = dataset_stats(&clips, false).unwrap();
        assert_eq!(s1.coverage_histogram, s2.coverage_histogram);
        assert_eq!(s1.vocab_size, s2.vocab_size);
        assert!((s1.mean_coverage - s2.mean_coverage).abs() < 1e-12);
    }

    fn split_fixture(counts: &[(&str, usize)]) -> Vec<AnnotatedClip> {
        let mut clips = Vec::new();
        for (sub, n) in counts {
            for i in 0..*n {
                clips.push(clip(
                    &format!("{sub}_{i:03}"),
                    16.0,
                    sub,
                    vec![region(0.0, 1.0, "x")],
                ));
            }
        }
        clips
    }

    #[test]
    fn split_partitions_and_respects_quotas() {
        let clips = split_fixture(&[("a", 40), ("b", 25), ("c", 7), ("d", 1)]);
        let out = stratified_split(&clips, 0.2, 3).unwrap();
        let split = &out.split;
        assert_eq!(split.train_ids.len() + split.test_ids.len(), 73);
        assert_eq!(split.test_ids.len(), (73.0_f64 * 0.2).round() as usize);
        split.validate().unwrap();
        for (sub, n) in [("a", 40usize), ("b", 25), ("c", 7), ("d", 1)] {
            let in_test = split
                .test_ids
                .iter()
                .filter(|id| id.starts_with(&format!("{sub}_")))
                .count();
            let quota = n as f64 * 0.2;
            assert!(
                (in_test as f64 - quota).abs() < 1.0,
                "subclass {sub}: {in_test} vs quota {quota}"
            );
        }
    }

    #[test]
    fn split_deterministic_and_order_independent() {
        let mut clips = split_fixture(&[("a", 30), ("b", 30)]);
        let s1 = stratified_split(&clips, 0.25, 9).unwrap();
        clips.reverse();
        let s2 = stratified_split(&clips, 0.25, 9).unwrap();
        assert_eq!(s1.split, s2.split);
        let s3 = stratified_split(&clips, 0.25, 10).unwrap();
        assert_ne!(s1.split, s3.split);
    }

    #[test]
    fn split_warns_on_tiny_subclass() {
        let clips = split_fixture(&[("a", 50), ("lonely", 1)]);
        let out = stratified_split(&clips, 0.1, 1).unwrap();
        assert!(out.warnings.iter().any(|w| w.contains("lonely")));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let clips = split_fixture(&[("a", 10)]);
        assert!(stratified_split(&clips, 0.0, 1).is_err());
        assert!(stratified_split(&clips, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn merge_output_disjoint_sorted(raw in proptest::collection::vec((0u32..29_000, 1u32..5_000), 0..20)) {
            let intervals: Vec<(f64, f64)> = raw
                .iter()
                .map(|&(on, len)| (on as f64 / 1000.0, (on + len).min(30_000) as f64 / 1000.0))
                .collect();
            let merged = merge_intervals(&intervals);
            for w in merged.windows(2) {
                prop_assert!(w[0].1 < w[1].0, "intervals must be disjoint and sorted with a gap");
            }
            for (on, off) in &merged {
                prop_assert!(on < off);
            }
            let total: f64 = merged.iter().map(|(a, b)| b - a).sum();
            let sum: f64 = intervals.iter().map(|(a, b)| b - a).sum();
            prop_assert!(total <= sum + 1e-9);
            if let Some(max_len) = intervals
                .iter()
                .map(|(a, b)| b - a)
                .max_by(|x, y| x.partial_cmp(y).unwrap())
            {
                prop_assert!(total >= max_len - 1e-9);
            }
        }

        #[test]
        fn merge_permutation_invariant(
            raw in proptest::collection::vec((0u32..29_000, 1u32..5_000), 1..12),
            seed in 0u64..1000,
        ) {
            let intervals: Vec<(f64, f64)> = raw
                .iter()
                .map(|&(on, len)| (on as f64 / 1000.0, (on + len).min(30_000) as f64 / 1000.0))
                .collect();
            let mut shuffled = intervals.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(merge_intervals(&intervals), merge_intervals(&shuffled));
        }

        #[test]
        fn coverage_unchanged_by_splitting_a_region(
            on in 0u32..10_000,
            len in 2u32..10_000,
            cut in 1u32..9_999,
        ) {
            let cut = on + 1 + cut % (len - 1);
            let whole = clip(
                "w",
                30.0,
                "x",
                vec![region(on as f64 / 1000.0, (on + len) as f64 / 1000.0, "t")],
            );
            let halves = clip(
                "h",
                30.0,
                "x",
                vec![
                    region(on as f64 / 1000.0, cut as f64 / 1000.0, "t1"),
                    region(cut as f64 / 1000.0, (on + len) as f64 / 1000.0, "t2"),
                ],
            );
            prop_assert!((coverage(&whole) - coverage(&halves)).abs() < 1e-12);
        }
    }
}
