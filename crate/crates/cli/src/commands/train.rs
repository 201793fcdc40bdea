use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use handcast::detector::Thresholds;
use handcast::evaluation::detector_scores;
use handcast::synthworld::{Corpus, Episode, SimArm};
use handcast::training::{
    cached_detections, corpus_feature_cache, train_baseline_future_detector, train_baseline_hands_only, train_hand_net,
    train_manipulation, train_regressor_k, FeatureCache, PipelineConfig, Stage, TrainReport,
};
use handcast::HandNet;

use crate::args::TrainArgs;
use crate::workspace::{load_corpus, load_hand_net, usage, write_snapshot, Workspace};

#[derive(Serialize)]
struct Snapshot {
    command: &'static str,
    stage: String,
    data: String,
    out: String,
    k: Vec<usize>,
}

struct Run<'a> {
    config: PipelineConfig,
    corpus: Corpus,
    out: PathBuf,
    ks: Vec<usize>,
    net: Option<HandNet>,
    cache: Option<FeatureCache>,
    _ws: &'a Workspace,
}

pub fn run(ws: &Workspace, args: &TrainArgs) -> Result<()> {
    let stages = if args.stage == "all" {
        Stage::ALL.to_vec()
    } else {
        vec![Stage::parse(&args.stage).ok_or_else(|| usage(format!("unknown stage `{}`", args.stage)))?]
    };
    let mut config = ws.config(&args.config)?;
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    let ks = if args.ks.is_empty() { vec![config.regressor.k] } else { args.ks.clone() };
    if ks.contains(&0) {
        return Err(usage("--k values must be at least 1"));
    }
    let data = ws.data_dir(&args.data, &config);
    let out = ws.or(&args.out, ws.checkpoints());
    let corpus = load_corpus(&data)?;
    write_snapshot(
        &out,
        &Snapshot {
            command: "train",
            stage: args.stage.clone(),
            data: ws.display(&data),
            out: ws.display(&out),
            k: ks.clone(),
        },
        Some(&config),
    )?;
    let mut run = Run {
        config,
        corpus,
        out,
        ks,
        net: None,
        cache: None,
        _ws: ws,
    };
    for stage in stages {
        for report in run.stage(stage)? {
            print_report(&report);
        }
    }
    Ok(())
}

fn print_report(r: &TrainReport) {
    println!(
        "{}: {} steps, best epoch {}, final loss {}, checkpoint {}",
        r.config.run_name(),
        r.steps,
        r.best_epoch,
        r.final_loss().map_or("n/a".into(), |l| format!("{l:.5}")),
        r.checkpoint.as_deref().unwrap_or("-")
    );
    if let Some(w) = &r.warning {
        println!("  warning: {w}");
    }
}

impl Run<'_> {
    fn out(&self) -> Option<&Path> {
        Some(&self.out)
    }

    fn net(&mut self) -> Result<&HandNet> {
        if self.net.is_none() {
            self.net = Some(load_hand_net(&self.out, &self.config)?);
        }
        Ok(self.net.as_ref().expect("loaded"))
    }

    fn cache(&mut self) -> Result<&FeatureCache> {
        if self.cache.is_none() {
            let k_max = self.ks.iter().copied().max().unwrap_or(1);
            let delta = self.config.regressor.delta;
            self.net()?;
            let net = self.net.as_ref().expect("loaded");
            self.cache = Some(corpus_feature_cache(net, self.corpus.train_episodes(), k_max, delta)?);
        }
        Ok(self.cache.as_ref().expect("built"))
    }

    fn stage(&mut self, stage: Stage) -> Result<Vec<TrainReport>> {
        log::info!("training stage {stage}");
        match stage {
            Stage::HandNet => {
                let (net, report) =
                    train_hand_net(&self.config.handnet_model, &self.config.handnet, self.corpus.detector_train(), self.out())?;
                let scores = detector_scores(&net, self.corpus.detector_test(), Thresholds::default())?;
                println!("hand net held-out F-measure {:.4}", scores.f_measure.mean);
                self.net = Some(net);
                self.cache = None;
                Ok(vec![report])
            }
            Stage::Regressor => {
                self.cache()?;
                let cache = self.cache.as_ref().expect("built");
                self.ks
                    .iter()
                    .map(|&k| Ok(train_regressor_k(&self.config, cache, k, Some(&self.out))?.1))
                    .collect()
            }
            Stage::Manip => {
                let arm = SimArm::default();
                let (_, report) =
                    train_manipulation(&self.config.manip_model, &arm, &self.config.manip, self.corpus.train_logs(), self.out())?;
                Ok(vec![report])
            }
            Stage::BaselineHandsOnly => {
                self.cache()?;
                let net = self.net.as_ref().expect("loaded");
                let dets = cached_detections(net, self.cache.as_ref().expect("built"), Thresholds::default())?;
                let (_, report) = train_baseline_hands_only(&self.config.baseline_hands_only, &dets, Some(&self.out))?;
                Ok(vec![report])
            }
            Stage::BaselineFutureDetector => {
                let init = if self.config.baseline_future_detector.fine_tune {
                    Some(self.net()?.clone())
                } else {
                    None
                };
                let episodes: Vec<&Episode> = self.corpus.train_episodes().iter().collect();
                let (_, report) = train_baseline_future_detector(
                    &self.config.handnet_model,
                    init.as_ref(),
                    &self.config.baseline_future_detector,
                    &episodes,
                    Some(&self.out),
                )?;
                Ok(vec![report])
            }
        }
    }
}
