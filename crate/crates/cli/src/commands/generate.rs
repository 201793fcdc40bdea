use anyhow::{Context, Result};
use serde::Serialize;

use handcast::synthworld::{write_corpus, CameraModel, Corpus, CorpusConfig, SimArm};

use crate::args::GenerateArgs;
use crate::workspace::{parse_scenario, usage, write_snapshot, Workspace};

#[derive(Serialize)]
struct Snapshot {
    command: &'static str,
    out: String,
}

#[derive(Serialize)]
struct Sections<'a> {
    corpus: &'a CorpusConfig,
}

pub fn run(ws: &Workspace, args: &GenerateArgs) -> Result<()> {
    if args.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let defaults = CorpusConfig::default();
    let train = args.train_episodes.unwrap_or_else(|| {
        let scaled = (args.episodes * defaults.train_episodes + defaults.episodes / 2) / defaults.episodes;
        scaled.clamp(1, args.episodes)
    });
    let detector_train = args.detector_frames * defaults.detector_train / defaults.detector_frames.max(1);
    let config = CorpusConfig {
        seed: args.seed,
        scenario: parse_scenario(&args.scenario)?,
        episodes: args.episodes,
        train_episodes: train,
        detector_frames: args.detector_frames,
        detector_train,
        ..defaults
    };
    let out = ws.or(&args.out, ws.corpus());
    let corpus = Corpus::generate(&config, &SimArm::default(), &CameraModel::default())?;
    let manifest = write_corpus(&out, &corpus).with_context(|| format!("writing corpus to {}", out.display()))?;
    write_snapshot(
        &out,
        &Snapshot {
            command: "generate",
            out: ws.display(&out),
        },
        Some(&Sections { corpus: &config }),
    )?;
    println!(
        "wrote {}: {} episodes ({} train / {} test), {} labeled frames, {} robot logs",
        ws.display(&out),
        manifest.episodes.len(),
        config.train_episodes,
        config.episodes - config.train_episodes,
        manifest.detector_frames,
        manifest.log_files.len()
    );
    Ok(())
}
