use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use voicefilter::checkpoint::{load_embedder, load_vf, param_hash, save_embedder, save_vf, ModelKind, SaveInfo};
use voicefilter::config::PipelineConfig;
use voicefilter::corpus::{
    build_parallel_corpus, load_audio_dir, load_corpus, parse_alignments, write_corpus, CorpusManifest, MismatchPolicy,
    ParallelUtterancePair, ToySynthesizer,
};
use voicefilter::dsp::{load_wav, mel_spectrogram, read_melf, write_melf, write_wav, AnalysisConfig, MelSpectrogram};
use voicefilter::embed::{group_by_speaker, train_embedder, Embedder};
use voicefilter::eval::{cfsd, csed, mushra_report, read_mushra_csv};
use voicefilter::infer::{build_profile, infer, load_profile, save_profile};
use voicefilter::pitch::{write_f0_csv, F0Contour};
use voicefilter::toy::ToyWorld;
use voicefilter::train::{finetune, train_background};
use voicefilter::verify::run_suite;
use voicefilter::Error;

use crate::output::{CliError, Output};

/// Flag value, else config value, else a usage error.
fn pick(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.clone())
        .ok_or_else(|| CliError::Usage(format!("missing {what} (flag or [paths] entry)")))
}

fn must_exist(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{} does not exist", p.display())).into())
    }
}

fn must_exist_all(ps: &[&Path]) -> Result<(), CliError> {
    ps.iter().try_for_each(|p| must_exist(p))
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }.into())
}

fn load_pairs(root: &Path) -> Result<(CorpusManifest, Vec<ParallelUtterancePair>), CliError> {
    Ok(load_corpus(root)?)
}

#[derive(Debug, Args)]
pub struct GenToy {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GenToy {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let out = pick(&self.out, &cfg.paths.output, "--out")?;
        let world = ToyWorld::generate(&cfg.toy, &cfg.analysis)?;
        world.write(&out)?;
        Output::new(
            json!({
                "out": out,
                "background_utterances": world.background.len(),
                "target_utterances": world.target.len(),
            }),
            format!(
                "wrote {} background and {} target utterances to {}",
                world.background.len(),
                world.target.len(),
                out.display()
            ),
        )
    }
}

#[derive(Debug, Args)]
pub struct BuildCorpus {
    /// Phone alignment file.
    #[arg(long)]
    align: PathBuf,
    /// Directory of `<utterance>.wav` recordings.
    #[arg(long)]
    audio: PathBuf,
    /// Corpus output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to do with utterances whose lengths disagree by more than a frame.
    #[arg(long, value_enum)]
    on_mismatch: Option<Mismatch>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Mismatch {
    Skip,
    Error,
}

impl BuildCorpus {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let out = pick(&self.out, &cfg.paths.corpus, "--out")?;
        must_exist_all(&[&self.align, &self.audio])?;
        let alignments = parse_alignments(&self.align)?;
        let audio = load_audio_dir(&self.audio, cfg.analysis.sample_rate)?;
        let mut opts = cfg.corpus.clone();
        if let Some(m) = self.on_mismatch {
            opts.on_mismatch = match m {
                Mismatch::Skip => MismatchPolicy::Skip,
                Mismatch::Error => MismatchPolicy::Error,
            };
        }
        let synth = ToySynthesizer::new(cfg.seed, &cfg.analysis);
        let build = build_parallel_corpus(&alignments, &synth, &audio, &cfg.analysis, &opts)?;
        let manifest = write_corpus(&out, &build, &cfg.analysis)?;
        Output::new(
            json!({
                "out": out,
                "pairs": manifest.utterances.len(),
                "speakers": manifest.speakers,
                "total_frames": manifest.total_frames,
                "skipped": manifest.report.skipped.len(),
                "trimmed": manifest.report.trimmed.len(),
                "manifest_hash": manifest.manifest_hash,
            }),
            format!(
                "{} pairs ({} skipped, {} trimmed), manifest {}",
                manifest.utterances.len(),
                manifest.report.skipped.len(),
                manifest.report.trimmed.len(),
                manifest.manifest_hash
            ),
        )
    }
}

#[derive(Debug, Args)]
pub struct TrainEmbedder {
    /// Corpus directories (repeatable).
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
}

impl TrainEmbedder {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let mut roots = self.corpus.clone();
        if roots.is_empty() {
            roots.extend(cfg.paths.corpus.clone());
        }
        if roots.is_empty() {
            return Err(CliError::Usage("missing --corpus".into()));
        }
        let out = pick(&self.out, &cfg.paths.embedder, "--out")?;
        must_exist_all(&roots.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
        let mut pairs = Vec::new();
        for r in &roots {
            pairs.extend(load_pairs(r)?.1);
        }
        let groups = group_by_speaker(pairs.iter().map(|p| (p.speaker_id.as_str(), &p.target_mel)));
        let mut ecfg = cfg.embedder.clone();
        if let Some(s) = self.steps {
            ecfg.steps = s;
        }
        let (model, report) = train_embedder(&groups, &ecfg)?;
        save_embedder(&out, &model, SaveInfo { steps: ecfg.steps as u64, seed: ecfg.seed, ..Default::default() })?;
        let last = report.losses.last().copied();
        Output::new(
            json!({ "out": out, "speakers": groups.len(), "steps": ecfg.steps, "final_loss": last }),
            format!(
                "embedder trained on {} speakers for {} steps, final GE2E loss {}",
                groups.len(),
                ecfg.steps,
                last.map_or("n/a".into(), |l| format!("{l:.4}"))
            ),
        )
    }
}

#[derive(Debug, Args)]
pub struct TrainVf {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Background checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
}

impl TrainVf {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let corpus = pick(&self.corpus, &cfg.paths.corpus, "--corpus")?;
        let emb_path = pick(&self.embedder, &cfg.paths.embedder, "--embedder")?;
        let out = pick(&self.out, &cfg.paths.background, "--out")?;
        must_exist_all(&[&corpus, &emb_path])?;
        let (_, pairs) = load_pairs(&corpus)?;
        let embedder = load_embedder(&emb_path)?;
        let mut tcfg = cfg.train.clone();
        if let Some(s) = self.steps {
            tcfg.steps = s;
        }
        let (model, adam, report) = train_background(&pairs, &embedder, &cfg.model, &tcfg)?;
        save_vf(
            &out,
            &model,
            ModelKind::Background,
            SaveInfo { steps: tcfg.steps as u64, seed: tcfg.seed, speaker: None, adam: Some(&adam) },
        )?;
        let window = (tcfg.steps / 10).max(1);
        let (first, last) = report.window_means(window).unwrap_or((f64::NAN, f64::NAN));
        Output::new(
            json!({
                "out": out,
                "steps": tcfg.steps,
                "pairs": pairs.len(),
                "loss_first_window": first,
                "loss_last_window": last,
                "param_hash": param_hash(&model),
            }),
            format!("background model: {} steps, L1 {first:.4} -> {last:.4}", tcfg.steps),
        )
    }
}

/// Target corpus, its single speaker (or the one chosen) and the source
/// statistics recorded when it was built.
fn target_set(
    dir: &Path,
    speaker: &Option<String>,
) -> Result<(String, Vec<ParallelUtterancePair>, voicefilter::pitch::F0Stats), CliError> {
    let (manifest, pairs) = load_pairs(dir)?;
    let spk = match speaker {
        Some(s) => s.clone(),
        None if manifest.speakers.len() == 1 => manifest.speakers[0].clone(),
        None => {
            return Err(CliError::Usage(format!(
                "{} holds {} speakers; choose one with --speaker",
                dir.display(),
                manifest.speakers.len()
            )))
        }
    };
    let pairs: Vec<_> = pairs.into_iter().filter(|p| p.speaker_id == spk).collect();
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("no utterances of speaker {spk} in {}", dir.display())).into());
    }
    let src = manifest
        .source_f0_stats
        .ok_or_else(|| Error::Invalid("corpus manifest has no source f0 statistics".into()))?;
    Ok((spk, pairs, src))
}

#[derive(Debug, Args)]
pub struct Finetune {
    #[arg(long)]
    background: Option<PathBuf>,
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Corpus of the target speaker's adaptation data.
    #[arg(long)]
    target_dir: Option<PathBuf>,
    /// Profile directory to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    speaker: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl Finetune {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let bg_path = pick(&self.background, &cfg.paths.background, "--background")?;
        let emb_path = pick(&self.embedder, &cfg.paths.embedder, "--embedder")?;
        let target = pick(&self.target_dir, &cfg.paths.target_corpus, "--target-dir")?;
        let out = pick(&self.out, &cfg.paths.profile, "--out")?;
        must_exist_all(&[&bg_path, &emb_path, &target])?;
        let (bg, kind) = load_vf(&bg_path)?;
        if kind != ModelKind::Background {
            log::warn!("{} is not a background checkpoint", bg_path.display());
        }
        let embedder = load_embedder(&emb_path)?;
        let (spk, pairs, src) = target_set(&target, &self.speaker)?;
        let mut tcfg = cfg.train.clone();
        if let Some(s) = self.steps {
            tcfg.finetune_steps = s;
        }
        if self.learning_rate.is_some() {
            tcfg.finetune_learning_rate = self.learning_rate;
        }
        if self.batch_size.is_some() {
            tcfg.finetune_batch_size = self.batch_size;
        }
        let (model, report) = finetune(&bg, &pairs, &embedder, &tcfg)?;
        let profile = build_profile(&spk, &embedder, &pairs, src, &cfg.analysis, &cfg.corpus.comb, cfg.infer.griffin_lim_iters)?;
        save_profile(&out, &model, &profile)?;
        Output::new(
            json!({
                "out": out,
                "speaker": spk,
                "utterances": pairs.len(),
                "duration_secs": report.duration_secs,
                "steps": tcfg.finetune_steps,
                "loss_before": report.loss_before,
                "loss_after": report.loss_after,
                "param_hash": param_hash(&model),
            }),
            format!(
                "fine-tuned on {} utterances of {spk} ({:.1} s): L1 {:.4} -> {:.4}; profile in {}",
                pairs.len(),
                report.duration_secs,
                report.loss_before,
                report.loss_after,
                out.display()
            ),
        )
    }
}

#[derive(Debug, Args)]
pub struct MakeProfile {
    /// Voice filter checkpoint (fine-tuned or background).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(long)]
    target_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    speaker: Option<String>,
}

impl MakeProfile {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let emb_path = pick(&self.embedder, &cfg.paths.embedder, "--embedder")?;
        let target = pick(&self.target_dir, &cfg.paths.target_corpus, "--target-dir")?;
        let out = pick(&self.out, &cfg.paths.profile, "--out")?;
        must_exist_all(&[&self.model, &emb_path, &target])?;
        let (model, _) = load_vf(&self.model)?;
        let embedder = load_embedder(&emb_path)?;
        let (spk, pairs, src) = target_set(&target, &self.speaker)?;
        let profile = build_profile(&spk, &embedder, &pairs, src, &cfg.analysis, &cfg.corpus.comb, cfg.infer.griffin_lim_iters)?;
        save_profile(&out, &model, &profile)?;
        Output::new(
            json!({ "out": out, "speaker": spk, "target_stats": profile.target_stats, "source_stats": profile.source_stats }),
            format!("profile for {spk} written to {}", out.display()),
        )
    }
}

#[derive(Debug, Args)]
pub struct Infer {
    /// Alignments to convert.
    #[arg(long)]
    align: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Output directory for `<utterance>.wav`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write source and converted mels and the conditioning f0.
    #[arg(long)]
    debug_dump: bool,
}

impl Infer {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let prof_dir = pick(&self.profile, &cfg.paths.profile, "--profile")?;
        let out = pick(&self.out, &cfg.paths.output, "--out")?;
        must_exist_all(&[&self.align, &prof_dir])?;
        let alignments = parse_alignments(&self.align)?;
        let (model, profile) = load_profile(&prof_dir)?;
        let synth = ToySynthesizer::new(cfg.seed, &profile.analysis);
        mkdir(&out)?;
        let mut written = Vec::new();
        for a in &alignments {
            let r = infer(a, &synth, &model, &profile)?;
            let id = &a.utterance_id;
            write_wav(out.join(format!("{id}.wav")), &r.waveform)?;
            if self.debug_dump {
                write_melf(out.join(format!("{id}.source.melf")), &r.source_mel, &profile.analysis)?;
                write_melf(out.join(format!("{id}.converted.melf")), &r.converted_mel, &profile.analysis)?;
                let hz = r.logf0.values.iter().zip(&r.logf0.voiced).map(|(v, &on)| if on { v.exp() } else { 0.0 }).collect();
                let c = F0Contour::new(hz, r.logf0.voiced.clone())?;
                write_f0_csv(out.join(format!("{id}.f0.csv")), &c)?;
            }
            written.push(json!({ "utterance_id": id, "frames": r.converted_mel.frames, "samples": r.waveform.len() }));
        }
        Output::new(
            json!({ "out": out, "speaker": profile.speaker_id, "utterances": written }),
            format!("converted {} utterances into {}", alignments.len(), out.display()),
        )
    }
}

const LOOSE_SPEAKER: &str = "all";

/// Mels under `dir`, keyed by speaker: each subdirectory is a speaker,
/// loose files belong to the speaker `all`.
fn load_mel_set(dir: &Path, cfg: &AnalysisConfig, melf: bool) -> Result<Vec<(String, MelSpectrogram)>, CliError> {
    fn files(dir: &Path, melf: bool) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })? {
            let p = e.map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let keep = if melf {
                name.ends_with(".melf") && !name.ends_with(".source.melf")
            } else {
                name.ends_with(".wav")
            };
            if p.is_file() && keep {
                out.push(p);
            }
        }
        out.sort();
        Ok(out)
    }
    let load = |p: &Path| -> Result<MelSpectrogram, CliError> {
        if melf {
            Ok(read_melf(p)?.0)
        } else {
            let w = load_wav(p)?.decimate_to(cfg.sample_rate)?;
            Ok(mel_spectrogram(&w, cfg)?)
        }
    };
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let loose = files(dir, melf)?;
    if !loose.is_empty() {
        groups.insert(LOOSE_SPEAKER.to_string(), loose);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for s in subdirs {
        let fs = files(&s, melf)?;
        if !fs.is_empty() {
            let name = s.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
            groups.entry(name).or_default().extend(fs);
        }
    }
    let mut out = Vec::new();
    for (spk, paths) in groups {
        for p in paths {
            out.push((spk.clone(), load(&p)?));
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("no {} files in {}", if melf { "melf" } else { "wav" }, dir.display())).into());
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct EvalSets {
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Synthesized audio directory.
    #[arg(long)]
    synth: PathBuf,
    /// Reference recordings directory.
    #[arg(long)]
    reference: PathBuf,
    /// Read `.melf` spectrograms instead of WAV files.
    #[arg(long)]
    melf: bool,
}

impl EvalSets {
    fn load(
        &self,
        cfg: &PipelineConfig,
    ) -> Result<(Embedder<f32>, Vec<(String, MelSpectrogram)>, Vec<(String, MelSpectrogram)>), CliError> {
        let emb_path = pick(&self.embedder, &cfg.paths.embedder, "--embedder")?;
        must_exist_all(&[&emb_path, &self.synth, &self.reference])?;
        Ok((
            load_embedder(&emb_path)?,
            load_mel_set(&self.synth, &cfg.analysis, self.melf)?,
            load_mel_set(&self.reference, &cfg.analysis, self.melf)?,
        ))
    }
}

#[derive(Debug, Args)]
pub struct EvalCsed {
    #[command(flatten)]
    sets: EvalSets,
}

impl EvalCsed {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let (emb, synth, reference) = self.sets.load(cfg)?;
        let embed = |set: &[(String, MelSpectrogram)]| -> Result<Vec<Vec<f32>>, CliError> {
            Ok(set.iter().map(|(_, m)| emb.embed(m)).collect::<Result<_, _>>()?)
        };
        let value = csed(&embed(&synth)?, &embed(&reference)?)?;
        Output::new(
            json!({ "csed": value, "synth_utterances": synth.len(), "reference_utterances": reference.len() }),
            format!("CSED {value:.4} ({} synthesized, {} reference)", synth.len(), reference.len()),
        )
    }
}

#[derive(Debug, Args)]
pub struct EvalCfsd {
    #[command(flatten)]
    sets: EvalSets,
    /// One distance over all speakers instead of the per-speaker mean.
    #[arg(long)]
    pooled: bool,
}

impl EvalCfsd {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let (emb, synth, reference) = self.sets.load(cfg)?;
        let pooled = self.pooled || cfg.eval.pooled;
        let r = cfsd(&reference, &synth, &emb, pooled)?;
        let mut text = format!("cFSD {:.4}{}\n", r.value, if pooled { " (pooled)" } else { "" });
        for (s, v) in &r.per_speaker {
            writeln!(text, "  {s}: {v:.4}").unwrap();
        }
        Output::new(&r, text)
    }
}

#[derive(Debug, Args)]
pub struct EvalMushra {
    /// CSV with `listener_id,system_id,utterance_id,score`.
    scores: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalMushra {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        must_exist(&self.scores)?;
        let alpha = self.alpha.unwrap_or(cfg.eval.alpha);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Usage("--alpha must be in (0, 1)".into()));
        }
        let records = read_mushra_csv(&self.scores)?;
        let report = mushra_report(&records, alpha)?;
        if let Some(p) = &self.out {
            let bytes = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
            fs::write(p, bytes).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        }
        Output::new(&report, report.to_table())
    }
}

#[derive(Debug, Args)]
pub struct Verify {
    /// Random instances per check.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
}

impl Verify {
    pub fn run(&self, cfg: &PipelineConfig) -> Result<Output, CliError> {
        let results = run_suite(cfg.seed, self.seeds);
        let mut text = String::new();
        for r in &results {
            writeln!(text, "{} {}: {} ({:.2}s)", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail, r.seconds).unwrap();
        }
        let all = results.iter().all(|r| r.passed);
        let mut out = Output::new(json!({ "passed": all, "checks": results }), text)?;
        if !all {
            out.exit_code = 3;
        }
        Ok(out)
    }
}
