//! Frame-aligned synthetic parallel corpus.
//!
//! Phone alignments of natural recordings are ingested from text files, a
//! duration-controllable [`Synthesizer`] renders the same phone sequence
//! with exactly the aligned durations, and each rendered source mel is
//! paired with the natural target mel and the target's log-f0.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{
    decode_melf, encode_melf, mel_spectrogram, AnalysisConfig, MelSpectrogram, Waveform,
};
use crate::error::{Error, Result};
use crate::pitch::{
    estimate_f0, f0_from_mel, f0_stats, log_f0_with_fallback, read_f0_csv, write_f0_csv,
    CombConfig, F0Contour, F0Stats, LogF0, PitchConfig, FALLBACK_LOG_F0,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneSegment {
    pub phone: String,
    pub start: usize,
    pub end: usize,
}

impl PhoneSegment {
    pub fn frames(&self) -> usize {
        self.end - self.start
    }
}

/// Contiguous phone segmentation of one utterance, in frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhoneAlignment {
    pub utterance_id: String,
    pub speaker_id: String,
    pub phones: Vec<PhoneSegment>,
}

impl PhoneAlignment {
    /// Build from `(phone, duration)` pairs laid end to end from frame 0.
    pub fn from_durations(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        durations: &[(&str, usize)],
    ) -> Result<Self> {
        let mut start = 0;
        let mut phones = Vec::with_capacity(durations.len());
        for &(p, d) in durations {
            phones.push(PhoneSegment {
                phone: p.to_string(),
                start,
                end: start + d,
            });
            start += d;
        }
        let a = PhoneAlignment {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            phones,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn total_frames(&self) -> usize {
        self.phones.last().map_or(0, |p| p.end)
    }

    pub fn durations(&self) -> Vec<(String, usize)> {
        self.phones
            .iter()
            .map(|p| (p.phone.clone(), p.frames()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phones.is_empty() {
            return Err(Error::Invalid(format!(
                "alignment {} has no phones",
                self.utterance_id
            )));
        }
        check_id(&self.utterance_id)?;
        check_id(&self.speaker_id)?;
        let mut expected = 0;
        for (i, p) in self.phones.iter().enumerate() {
            if p.start >= p.end {
                return Err(Error::Invalid(format!("phone {i}: empty or negative duration")));
            }
            if p.start != expected {
                return Err(Error::Invalid(format!(
                    "phone {i}: starts at {} but previous ends at {expected}",
                    p.start
                )));
            }
            expected = p.end;
        }
        Ok(())
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        || id.starts_with('.')
    {
        return Err(Error::Invalid(format!(
            "identifier {id:?} must be non-empty [A-Za-z0-9_.-]"
        )));
    }
    Ok(())
}

/// Parse an alignment file holding any number of utterances, one phone per
/// line: `utt_id speaker_id phone start_frame end_frame`. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_alignments(path: impl AsRef<Path>) -> Result<Vec<PhoneAlignment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment_text(&text, path)
}

/// Parse a file that must contain exactly one utterance.
pub fn parse_alignment(path: impl AsRef<Path>) -> Result<PhoneAlignment> {
    let path = path.as_ref();
    let mut all = parse_alignments(path)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        n => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("expected one utterance, found {n}"),
        }),
    }
}

pub fn parse_alignment_text(text: &str, path: &Path) -> Result<Vec<PhoneAlignment>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out: Vec<PhoneAlignment> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(err(
                line_no,
                format!("expected 5 columns (utt speaker phone start end), got {}", cols.len()),
            ));
        }
        let frame = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| err(line_no, format!("invalid frame index {s:?}")))
        };
        let (start, end) = (frame(cols[3])?, frame(cols[4])?);
        if start < 0 || end < 0 {
            return Err(err(line_no, "negative frame index".into()));
        }
        if end <= start {
            return Err(err(line_no, format!("non-positive duration {start}..{end}")));
        }
        let (utt, spk) = (cols[0], cols[1]);
        check_id(utt).map_err(|e| err(line_no, e.to_string()))?;
        check_id(spk).map_err(|e| err(line_no, e.to_string()))?;
        let new_utt = out.last().map_or(true, |a| a.utterance_id != utt);
        if new_utt {
            if !seen.insert(utt.to_string()) {
                return Err(err(line_no, format!("utterance {utt} is not contiguous in file")));
            }
            if start != 0 {
                return Err(err(line_no, format!("first phone of {utt} starts at {start}, not 0")));
            }
            out.push(PhoneAlignment {
                utterance_id: utt.to_string(),
                speaker_id: spk.to_string(),
                phones: Vec::new(),
            });
        }
        let cur = out.last_mut().unwrap();
        if cur.speaker_id != spk {
            return Err(err(line_no, format!("speaker changes within utterance {utt}")));
        }
        if let Some(prev) = cur.phones.last() {
            let prev_end = prev.end as i64;
            if start < prev_end {
                return Err(err(line_no, format!("overlap: starts at {start} before previous end {prev_end}")));
            }
            if start > prev_end {
                return Err(err(line_no, format!("gap: starts at {start} after previous end {prev_end}")));
            }
        }
        cur.phones.push(PhoneSegment {
            phone: cols[2].to_string(),
            start: start as usize,
            end: end as usize,
        });
    }
    Ok(out)
}

pub fn write_alignments(path: impl AsRef<Path>, alignments: &[PhoneAlignment]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for a in alignments {
        for p in &a.phones {
            s.push_str(&format!(
                "{} {} {} {} {}\n",
                a.utterance_id, a.speaker_id, p.phone, p.start, p.end
            ));
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// A duration-controllable acoustic model: renders a phone sequence into a
/// mel spectrogram with exactly `sum(durations)` frames.
pub trait Synthesizer: Sync {
    fn synthesize(&self, phones: &[(String, usize)]) -> Result<MelSpectrogram>;

    fn synthesize_alignment(&self, a: &PhoneAlignment) -> Result<MelSpectrogram> {
        a.validate()?;
        self.synthesize(&a.durations())
    }
}

/// Deterministic stand-in synthesizer. Each phone symbol maps to a fixed
/// smoothed spectral profile seeded from a hash of the symbol; consecutive
/// phones are joined with a linear two-frame cross-fade.
#[derive(Clone, Debug)]
pub struct ToySynthesizer {
    pub seed: u64,
    pub bins: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl ToySynthesizer {
    pub fn new(seed: u64, cfg: &AnalysisConfig) -> Self {
        ToySynthesizer {
            seed,
            bins: cfg.mel_bins,
            hop_length: cfg.hop_length,
            sample_rate: cfg.sample_rate,
        }
    }

    pub fn template(&self, phone: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(phone.as_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        let raw: Vec<f64> = (0..self.bins).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let level: f64 = rng.gen_range(-1.0..1.0);
        (0..self.bins)
            .map(|b| {
                let lo = b.saturating_sub(2);
                let hi = (b + 2).min(self.bins - 1);
                let avg = raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
                (-3.0 + level + 4.0 * avg) as f32
            })
            .collect()
    }
}

impl Synthesizer for ToySynthesizer {
    fn synthesize(&self, phones: &[(String, usize)]) -> Result<MelSpectrogram> {
        let total: usize = phones.iter().map(|(_, d)| d).sum();
        if phones.is_empty() || total == 0 {
            return Err(Error::Invalid("cannot synthesize an empty phone sequence".into()));
        }
        let mut data = Vec::with_capacity(total * self.bins);
        let mut prev: Option<Vec<f32>> = None;
        for (phone, dur) in phones {
            let cur = self.template(phone);
            for j in 0..*dur {
                match (&prev, j) {
                    (Some(p), 0 | 1) => {
                        let a = (j + 1) as f32 / 3.0;
                        data.extend(p.iter().zip(&cur).map(|(x, y)| (1.0 - a) * x + a * y));
                    }
                    _ => data.extend_from_slice(&cur),
                }
            }
            prev = Some(cur);
        }
        MelSpectrogram::new(total, self.bins, data, self.hop_length, self.sample_rate)
    }
}

/// One training triple: synthetic source mel, natural target mel and the
/// target's log-f0, all with the same frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelUtterancePair {
    pub utterance_id: String,
    pub speaker_id: String,
    pub source_mel: MelSpectrogram,
    pub target_mel: MelSpectrogram,
    pub target_f0: F0Contour,
    pub target_logf0: LogF0,
}

impl ParallelUtterancePair {
    pub fn new(
        utterance_id: String,
        speaker_id: String,
        source_mel: MelSpectrogram,
        target_mel: MelSpectrogram,
        target_f0: F0Contour,
        target_logf0: LogF0,
    ) -> Result<Self> {
        let t = source_mel.frames;
        if target_mel.frames != t || target_f0.len() != t || target_logf0.len() != t {
            return Err(Error::Shape(format!(
                "pair {utterance_id}: source {t} frames, target {}, f0 {}, log-f0 {}",
                target_mel.frames,
                target_f0.len(),
                target_logf0.len()
            )));
        }
        if source_mel.bins != target_mel.bins {
            return Err(Error::Shape(format!(
                "pair {utterance_id}: {} vs {} mel bins",
                source_mel.bins, target_mel.bins
            )));
        }
        Ok(ParallelUtterancePair {
            utterance_id,
            speaker_id,
            source_mel,
            target_mel,
            target_f0,
            target_logf0,
        })
    }

    pub fn frames(&self) -> usize {
        self.source_mel.frames
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchPolicy {
    /// Record the utterance in the skip list and keep going.
    #[default]
    Skip,
    /// Abort the build.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub utterance_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimmedUtterance {
    pub utterance_id: String,
    pub natural_frames: usize,
    pub aligned_frames: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub skipped: Vec<SkippedUtterance>,
    pub trimmed: Vec<TrimmedUtterance>,
}

#[derive(Clone, Debug)]
pub struct CorpusBuild {
    pub pairs: Vec<ParallelUtterancePair>,
    pub report: BuildReport,
    /// Voiced log-f0 moments of the synthetic source speaker, measured with
    /// the mel-domain estimator used at inference time.
    pub source_f0_stats: Option<F0Stats>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusOptions {
    pub pitch: PitchConfig,
    pub comb: CombConfig,
    pub on_mismatch: MismatchPolicy,
}

enum Staged {
    Ready {
        source: MelSpectrogram,
        target: MelSpectrogram,
        f0: F0Contour,
        trimmed: Option<TrimmedUtterance>,
    },
    Skipped(SkippedUtterance),
}

/// Build frame-matched pairs. Work per utterance runs on the rayon pool;
/// results are merged in sorted utterance-id order so the output does not
/// depend on the thread count.
pub fn build_parallel_corpus(
    alignments: &[PhoneAlignment],
    synth: &dyn Synthesizer,
    natural_audio: &BTreeMap<String, Waveform>,
    cfg: &AnalysisConfig,
    opts: &CorpusOptions,
) -> Result<CorpusBuild> {
    cfg.validate()?;
    let pitch = PitchConfig {
        hop_length: cfg.hop_length,
        ..opts.pitch.clone()
    };
    let mut sorted: Vec<&PhoneAlignment> = alignments.iter().collect();
    sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    for w in sorted.windows(2) {
        if w[0].utterance_id == w[1].utterance_id {
            return Err(Error::Invalid(format!(
                "duplicate utterance {}",
                w[0].utterance_id
            )));
        }
    }

    let staged: Vec<Result<Staged>> = sorted
        .par_iter()
        .map(|a| {
            a.validate()?;
            let aligned = a.total_frames();
            let skip = |reason: String| -> Result<Staged> {
                match opts.on_mismatch {
                    MismatchPolicy::Skip => Ok(Staged::Skipped(SkippedUtterance {
                        utterance_id: a.utterance_id.clone(),
                        reason,
                    })),
                    MismatchPolicy::Error => Err(Error::Invalid(format!(
                        "utterance {}: {reason}",
                        a.utterance_id
                    ))),
                }
            };
            let Some(audio) = natural_audio.get(&a.utterance_id) else {
                return skip("missing audio".into());
            };
            let target = mel_spectrogram(audio, cfg)?;
            let natural = target.frames;
            if natural.abs_diff(aligned) > 1 {
                return skip(format!(
                    "natural audio has {natural} frames, alignment has {aligned}"
                ));
            }
            let f0 = estimate_f0(audio, &pitch)?;
            let source = synth.synthesize_alignment(a)?;
            if source.frames != aligned {
                return Err(Error::Shape(format!(
                    "synthesizer returned {} frames for a {aligned}-frame alignment",
                    source.frames
                )));
            }
            let trimmed = (natural != aligned).then(|| TrimmedUtterance {
                utterance_id: a.utterance_id.clone(),
                natural_frames: natural,
                aligned_frames: aligned,
            });
            Ok(Staged::Ready {
                source,
                target: target.fit_to(aligned),
                f0: f0.fit_to(aligned),
                trimmed,
            })
        })
        .collect();

    let mut report = BuildReport::default();
    let mut ready = Vec::new();
    for (a, s) in sorted.iter().zip(staged) {
        match s? {
            Staged::Ready {
                source,
                target,
                f0,
                trimmed,
            } => {
                if let Some(t) = trimmed {
                    log::info!(
                        "{}: trimmed natural mel {} -> {} frames",
                        t.utterance_id,
                        t.natural_frames,
                        t.aligned_frames
                    );
                    report.trimmed.push(t);
                }
                ready.push((*a, source, target, f0));
            }
            Staged::Skipped(s) => {
                log::warn!("skipping {}: {}", s.utterance_id, s.reason);
                report.skipped.push(s);
            }
        }
    }

    // speaker-level fallback for utterances with no voiced frame
    let mut by_speaker: BTreeMap<&str, Vec<&F0Contour>> = BTreeMap::new();
    for (a, _, _, f0) in &ready {
        by_speaker.entry(a.speaker_id.as_str()).or_default().push(f0);
    }
    let speaker_fill: BTreeMap<&str, f64> = by_speaker
        .iter()
        .map(|(s, cs)| (*s, f0_stats(cs.iter().copied()).map_or(FALLBACK_LOG_F0, |st| st.mean)))
        .collect();

    let comb = CombConfig {
        f0_min: pitch.f0_min,
        f0_max: pitch.f0_max,
        ..opts.comb.clone()
    };
    let mut source_contours = Vec::with_capacity(ready.len());
    let mut pairs = Vec::with_capacity(ready.len());
    for (a, source, target, f0) in ready {
        source_contours.push(f0_from_mel(&source, cfg, &comb));
        let logf0 = log_f0_with_fallback(&f0, speaker_fill[a.speaker_id.as_str()]);
        let pair = ParallelUtterancePair::new(
            a.utterance_id.clone(),
            a.speaker_id.clone(),
            source,
            target,
            f0,
            logf0,
        )?;
        assert_eq!(pair.source_mel.frames, pair.target_mel.frames);
        pairs.push(pair);
    }
    Ok(CorpusBuild {
        pairs,
        report,
        source_f0_stats: f0_stats(&source_contours).ok(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub frames: usize,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub analysis: AnalysisConfig,
    pub utterances: Vec<ManifestEntry>,
    pub speakers: Vec<String>,
    pub total_frames: usize,
    pub report: BuildReport,
    pub source_f0_stats: Option<F0Stats>,
    pub speaker_f0_stats: BTreeMap<String, F0Stats>,
    pub manifest_hash: String,
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    utterance_id: String,
    speaker_id: String,
    frames: usize,
    logf0_fill: f64,
}

fn pair_dir(root: &Path, utt: &str) -> PathBuf {
    root.join("pairs").join(utt)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialize pairs and the manifest under `root`:
/// `pairs/<utt>/{source.melf,target.melf,f0.csv,meta.json}` plus
/// `manifest.json`.
pub fn write_corpus(root: impl AsRef<Path>, build: &CorpusBuild, cfg: &AnalysisConfig) -> Result<CorpusManifest> {
    let root = root.as_ref();
    let cfg_json = serde_json::to_vec_pretty(cfg)?;
    let mut entries = Vec::with_capacity(build.pairs.len());
    let mut speakers = BTreeSet::new();
    let mut contours: BTreeMap<String, Vec<&F0Contour>> = BTreeMap::new();
    for p in &build.pairs {
        let dir = pair_dir(root, &p.utterance_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let src = encode_melf(&p.source_mel);
        let tgt = encode_melf(&p.target_mel);
        write_file(&dir.join("source.melf"), &src)?;
        write_file(&dir.join("source.json"), &cfg_json)?;
        write_file(&dir.join("target.melf"), &tgt)?;
        write_file(&dir.join("target.json"), &cfg_json)?;
        write_f0_csv(dir.join("f0.csv"), &p.target_f0)?;
        let meta = serde_json::to_vec_pretty(&PairMeta {
            utterance_id: p.utterance_id.clone(),
            speaker_id: p.speaker_id.clone(),
            frames: p.frames(),
            logf0_fill: p.target_logf0.fill,
        })?;
        write_file(&dir.join("meta.json"), &meta)?;
        let f0_bytes = fs::read(dir.join("f0.csv")).map_err(|e| Error::io(&dir, e))?;
        let mut h = Sha256::new();
        for part in [&src, &tgt, &f0_bytes, &meta] {
            h.update(part);
        }
        entries.push(ManifestEntry {
            utterance_id: p.utterance_id.clone(),
            speaker_id: p.speaker_id.clone(),
            frames: p.frames(),
            hash: hex::encode(h.finalize()),
        });
        speakers.insert(p.speaker_id.clone());
        contours
            .entry(p.speaker_id.clone())
            .or_default()
            .push(&p.target_f0);
    }
    let speaker_f0_stats = contours
        .into_iter()
        .filter_map(|(s, cs)| f0_stats(cs).ok().map(|st| (s, st)))
        .collect();
    let mut manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        analysis: cfg.clone(),
        total_frames: entries.iter().map(|e| e.frames).sum(),
        utterances: entries,
        speakers: speakers.into_iter().collect(),
        report: build.report.clone(),
        source_f0_stats: build.source_f0_stats,
        speaker_f0_stats,
        manifest_hash: String::new(),
    };
    manifest.manifest_hash = manifest.content_hash()?;
    write_file(
        &root.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

impl CorpusManifest {
    /// SHA-256 of the manifest serialized with an empty hash field.
    pub fn content_hash(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.manifest_hash.clear();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&copy)?)))
    }

    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        let p = root.as_ref().join("manifest.json");
        let m: CorpusManifest =
            serde_json::from_slice(&fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Invalid(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}

/// Load every pair listed in the manifest. Frame-count mismatches are
/// rejected here, before any training step sees them.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<(CorpusManifest, Vec<ParallelUtterancePair>)> {
    let root = root.as_ref();
    let manifest = CorpusManifest::read(root)?;
    let cfg = &manifest.analysis;
    let pairs = manifest
        .utterances
        .iter()
        .map(|e| {
            let dir = pair_dir(root, &e.utterance_id);
            let read = |name: &str| {
                let p = dir.join(name);
                fs::read(&p).map_err(|err| Error::io(&p, err))
            };
            let source = decode_melf(&read("source.melf")?, cfg)?;
            let target = decode_melf(&read("target.melf")?, cfg)?;
            let f0 = read_f0_csv(dir.join("f0.csv"))?;
            let meta: PairMeta = serde_json::from_slice(&read("meta.json")?)?;
            let logf0 = log_f0_with_fallback(&f0, meta.logf0_fill);
            ParallelUtterancePair::new(
                e.utterance_id.clone(),
                e.speaker_id.clone(),
                source,
                target,
                f0,
                logf0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pairs))
}

/// Load every `<utt>.wav` under `dir` keyed by file stem.
pub fn load_audio_dir(dir: impl AsRef<Path>, sample_rate: u32) -> Result<BTreeMap<String, Waveform>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("wav") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Invalid(format!("bad file name {}", path.display())))?
            .to_string();
        let w = crate::dsp::load_wav(&path)?.decimate_to(sample_rate)?;
        out.insert(stem, w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<PhoneAlignment>> {
        parse_alignment_text(text, Path::new("test.txt"))
    }

    #[test]
    fn contiguous_phones_parse() {
        let a = parse("u1 s1 aa 0 10\nu1 s1 iy 10 25\n").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].total_frames(), 25);
    }

    #[test]
    fn overlap_reports_line_two() {
        let e = parse("u1 s1 aa 0 10\nu1 s1 iy 8 20\n").unwrap_err();
        match e {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("overlap"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn gap_and_negative_rejected() {
        assert!(matches!(
            parse("u1 s1 aa 0 10\nu1 s1 iy 12 20\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse("u1 s1 aa -3 10\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("u1 s1 aa 5 5\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("u1 s1 aa 2 5\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn toy_output_matches_durations_and_is_deterministic() {
        let cfg = AnalysisConfig::default();
        let synth = ToySynthesizer::new(7, &cfg);
        let a = PhoneAlignment::from_durations("u", "s", &[("aa", 10), ("iy", 15)]).unwrap();
        let m1 = synth.synthesize_alignment(&a).unwrap();
        let m2 = synth.synthesize_alignment(&a).unwrap();
        assert_eq!((m1.frames, m1.bins), (25, 80));
        assert_eq!(m1.data, m2.data);
    }

    #[test]
    fn distinct_phones_have_distinct_templates() {
        let synth = ToySynthesizer::new(7, &AnalysisConfig::default());
        let a = synth.template("aa");
        let b = synth.template("iy");
        let d: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt();
        assert!(d >= 0.1, "{d}");
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let synth = ToySynthesizer::new(0, &AnalysisConfig::default());
        assert!(synth.synthesize(&[]).is_err());
    }
}
