use std::fs::File;
use std::io::BufWriter;

use anyhow::{Context, Result};
use serde::Serialize;

use handcast::detector::{DetectionSet, FrameImage, Thresholds};
use handcast::evaluation::{triptych, write_ppm};
use handcast::regressor::predict_future_boxes;

use crate::args::PredictArgs;
use crate::workspace::{load_corpus, load_hand_net, load_regressor, usage, write_snapshot, Workspace};

#[derive(Serialize)]
struct Snapshot {
    command: &'static str,
    episode: String,
    t: Vec<usize>,
    k: usize,
    scale: usize,
    data: String,
    checkpoints: String,
    out: String,
}

#[derive(Serialize)]
struct Overlay {
    t: usize,
    file: String,
    predicted: DetectionSet,
    truth: DetectionSet,
}

pub fn run(ws: &Workspace, args: &PredictArgs) -> Result<()> {
    if args.k == 0 || args.scale == 0 {
        return Err(usage("--K and --scale must be at least 1"));
    }
    let config = ws.config(&args.config)?;
    let delta = config.regressor.delta;
    let data = ws.data_dir(&args.data, &config);
    let ckpt = ws.or(&args.checkpoints, ws.checkpoints());
    let corpus = load_corpus(&data)?;
    let episode = corpus
        .episodes
        .iter()
        .find(|e| e.id == args.episode)
        .ok_or_else(|| usage(format!("no episode `{}` in {}", args.episode, ws.display(&data))))?;
    let n = episode.len();
    let first = args.k - 1;
    let times: Vec<usize> = match args.t {
        Some(t) => {
            if t + delta >= n {
                return Err(usage(format!("t + Δ = {} is beyond the episode end ({n} frames)", t + delta)));
            }
            if t < first {
                return Err(usage(format!("t = {t} leaves fewer than K = {} frames of history", args.k)));
            }
            vec![t]
        }
        None => (first..n.saturating_sub(delta)).step_by(episode.fps.max(1)).collect(),
    };
    if times.is_empty() {
        return Err(usage(format!("episode {} is too short for K = {} and Δ = {delta}", episode.id, args.k)));
    }

    let net = load_hand_net(&ckpt, &config)?;
    let reg = load_regressor(&ckpt, &config, &net, args.k)?;
    let out = ws.or(&args.out, ws.overlays()).join(&episode.id);
    write_snapshot(
        &out,
        &Snapshot {
            command: "predict",
            episode: episode.id.clone(),
            t: times.clone(),
            k: args.k,
            scale: args.scale,
            data: ws.display(&data),
            checkpoints: ws.display(&ckpt),
            out: ws.display(&out),
        },
        Some(&config),
    )?;
    let mut overlays = Vec::new();
    for &t in &times {
        let window: Vec<&FrameImage> = episode.frames[t + 1 - args.k..=t].iter().collect();
        let predicted = predict_future_boxes(&net, &reg, &window, Thresholds::default())?;
        let img = triptych(&episode.frames[t], &predicted, &episode.frames[t + delta], args.scale)?;
        let file = format!("k{}_t{t:05}.ppm", args.k);
        let path = out.join(&file);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_ppm(&mut w, &img)?;
        overlays.push(Overlay {
            t,
            file,
            predicted,
            truth: episode.truth[t + delta].clone(),
        });
    }
    std::fs::write(out.join("predictions.json"), serde_json::to_string_pretty(&overlays)? + "\n")?;
    println!("wrote {} overlays to {}", overlays.len(), ws.display(&out));
    Ok(())
}
