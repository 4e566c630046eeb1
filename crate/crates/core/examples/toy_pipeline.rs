//! Full toy pipeline at desk scale: world, corpus, embedder, background
//! training, fine-tuning and conversion of held-out target utterances.
//!
//! `cargo run --release -p voicefilter --example toy_pipeline`

use std::time::Instant;

use voicefilter::config::PipelineConfig;
use voicefilter::corpus::{build_parallel_corpus, ToySynthesizer};
use voicefilter::embed::{group_by_speaker, train_embedder};
use voicefilter::eval::csed;
use voicefilter::infer::{build_profile, convert};
use voicefilter::toy::{ToyWorld, ToyWorldConfig};
use voicefilter::train::{finetune, train_background};

fn main() -> voicefilter::Result<()> {
    let t0 = Instant::now();
    let cfg = PipelineConfig::desk();
    let analysis = &cfg.analysis;
    let world = ToyWorld::generate(&ToyWorldConfig { target_utterances: 30, ..cfg.toy.clone() }, analysis)?;
    let synth = ToySynthesizer::new(cfg.seed, analysis);
    let build = |u| build_parallel_corpus(&ToyWorld::alignments(u), &synth, &ToyWorld::audio_map(u), analysis, &cfg.corpus);
    let bg = build(&world.background)?;
    let tg = build(&world.target)?;
    let (minute, held) = tg.pairs.split_at(20);
    println!("corpus: {} bg pairs, {} target; {:.1}s", bg.pairs.len(), tg.pairs.len(), t0.elapsed().as_secs_f64());

    let groups = group_by_speaker(bg.pairs.iter().map(|p| (p.speaker_id.as_str(), &p.target_mel)));
    let (emb, _) = train_embedder(&groups, &cfg.embedder)?;
    println!("embedder trained; {:.1}s", t0.elapsed().as_secs_f64());

    let (model, _, report) = train_background(&bg.pairs, &emb, &cfg.model, &cfg.train)?;
    if let Some((a, b)) = report.window_means(100) {
        println!("background loss {a:.3} -> {b:.3}; {:.1}s", t0.elapsed().as_secs_f64());
    }

    let (ft, frep) = finetune(&model, minute, &emb, &cfg.train)?;
    println!(
        "finetune L1 {:.3} -> {:.3} ({:.3}); {:.1}s",
        frep.loss_before,
        frep.loss_after,
        frep.loss_after / frep.loss_before,
        t0.elapsed().as_secs_f64()
    );

    let source_stats = bg.source_f0_stats.ok_or_else(|| voicefilter::Error::Invalid("no voiced source frames".into()))?;
    let profile = build_profile("tgt1", &emb, minute, source_stats, analysis, &cfg.corpus.comb, cfg.infer.griffin_lim_iters)?;
    let reference = minute.iter().map(|p| emb.embed(&p.target_mel)).collect::<Result<Vec<_>, _>>()?;
    let mut src = Vec::new();
    let mut conv = Vec::new();
    for p in held {
        let (out, _) = convert(&p.source_mel, &ft, &profile)?;
        src.push(emb.embed(&p.source_mel)?);
        conv.push(emb.embed(&out)?);
    }
    println!(
        "CSED source {:.4} converted {:.4}; total {:.1}s",
        csed(&src, &reference)?,
        csed(&conv, &reference)?,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
