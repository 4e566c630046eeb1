use voicefilter::checkpoint::{load_vf, save_vf, ModelKind, SaveInfo};
use voicefilter::config::PipelineConfig;
use voicefilter::corpus::{build_parallel_corpus, load_corpus, write_corpus, CorpusOptions, ToySynthesizer};
use voicefilter::dsp::{load_wav, mel_spectrogram, read_melf, write_melf, write_wav, AnalysisConfig, Waveform};
use voicefilter::model::{ModelConfig, VoiceFilter};
use voicefilter::toy::{ToyWorld, ToyWorldConfig};

#[test]
fn wav_and_melf_survive_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = AnalysisConfig::default();
    let samples: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.07).sin() * 0.3).collect();
    let w = Waveform::new(samples, cfg.sample_rate).unwrap();
    write_wav(dir.path().join("a.wav"), &w).unwrap();
    let back = load_wav(dir.path().join("a.wav")).unwrap();
    assert_eq!(back.len(), w.len());
    assert!(back.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() < 1e-4));

    let mel = mel_spectrogram(&w, &cfg).unwrap();
    assert_eq!(mel.frames, cfg.num_frames(w.len()));
    write_melf(dir.path().join("a.melf"), &mel, &cfg).unwrap();
    let (m2, c2) = read_melf(dir.path().join("a.melf")).unwrap();
    assert_eq!(m2.data, mel.data);
    assert_eq!(c2, cfg);
}

#[test]
fn written_corpus_loads_back_unchanged() {
    let analysis = AnalysisConfig::default();
    let world = ToyWorld::generate(&ToyWorldConfig { utterances_per_speaker: 3, target_utterances: 2, ..Default::default() }, &analysis).unwrap();
    let build = build_parallel_corpus(
        &ToyWorld::alignments(&world.background),
        &ToySynthesizer::new(1, &analysis),
        &ToyWorld::audio_map(&world.background),
        &analysis,
        &CorpusOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &build, &analysis).unwrap();
    let (read, pairs) = load_corpus(dir.path()).unwrap();
    assert_eq!(read.manifest_hash, manifest.manifest_hash);
    assert_eq!(pairs.len(), build.pairs.len());
    for (a, b) in pairs.iter().zip(&build.pairs) {
        assert_eq!(a.utterance_id, b.utterance_id);
        assert_eq!(a.source_mel.data, b.source_mel.data);
        assert_eq!(a.target_mel.data, b.target_mel.data);
        assert_eq!(a.target_f0.voiced, b.target_f0.voiced);
    }
}

#[test]
fn checkpoint_file_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let model = VoiceFilter::<f32>::new(&ModelConfig { channels: 4, speaker_dim: 2, lstm_hidden: 3, dense: 4, ..Default::default() }, 5).unwrap();
    let path = dir.path().join("m.vfck");
    save_vf(&path, &model, ModelKind::Background, SaveInfo::default()).unwrap();
    assert!(load_vf(&path).is_ok());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(load_vf(&path).is_err());
}

#[test]
fn shipped_desk_config_matches_the_builtin_preset() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    assert_eq!(PipelineConfig::load(path).unwrap(), PipelineConfig::desk());
}
