use anyhow::{Context, Result};
use serde::Serialize;

use handcast::detector::Thresholds;
use handcast::evaluation::{EvalSet, Method, MethodModels, PredictionReport};
use handcast::synthworld::Episode;
use handcast::training::{HandsOnlyNet, Stage};
use handcast::HandNet;

use crate::args::EvalArgs;
use crate::workspace::{load_corpus, load_hand_net, load_regressor, require_checkpoint, usage, write_snapshot, Workspace};

#[derive(Serialize)]
struct Snapshot {
    command: &'static str,
    methods: Vec<String>,
    split: String,
    data: String,
    checkpoints: String,
    report: String,
}

pub fn run(ws: &Workspace, args: &EvalArgs) -> Result<()> {
    let methods = args
        .methods
        .iter()
        .map(|m| Method::parse(m).ok_or_else(|| usage(format!("unknown method `{m}`"))))
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(usage("no methods requested"));
    }
    let config = ws.config(&args.config)?;
    let data = ws.data_dir(&args.data, &config);
    let ckpt = ws.or(&args.checkpoints, ws.checkpoints());
    let report_dir = ws.or(&args.report, ws.reports());
    let corpus = load_corpus(&data)?;
    let episodes: Vec<&Episode> = match args.split.as_str() {
        "test" => corpus.test_episodes().iter().collect(),
        "train" => corpus.train_episodes().iter().collect(),
        s => return Err(usage(format!("unknown split `{s}` (expected test or train)"))),
    };

    let net = load_hand_net(&ckpt, &config)?;
    let mut models = MethodModels::default();
    for m in &methods {
        match *m {
            Method::Full { k } => {
                models.regressors.insert(k, load_regressor(&ckpt, &config, &net, k)?);
            }
            Method::HandsOnly => {
                let params = require_checkpoint(&ckpt, &config.baseline_hands_only.checkpoint_name(), Stage::BaselineHandsOnly)?;
                models.hands_only = Some(HandsOnlyNet::from_params(&params)?);
            }
            Method::FutureDetector => {
                let name = config.baseline_future_detector.checkpoint_name();
                let params = require_checkpoint(&ckpt, &name, Stage::BaselineFutureDetector)?;
                models.future_detector = Some(HandNet::from_params(&config.handnet_model, &params)?);
            }
        }
    }
    let k_max = methods
        .iter()
        .filter_map(|m| match m {
            Method::Full { k } => Some(*k),
            _ => None,
        })
        .max()
        .unwrap_or(1);
    let set = EvalSet::new(&net, episodes, config.regressor.delta, k_max, Thresholds::default())?;
    let report = PredictionReport::build(&args.split, &net, &models, &set, &methods)?;

    write_snapshot(
        &report_dir,
        &Snapshot {
            command: "eval",
            methods: methods.iter().map(Method::name).collect(),
            split: args.split.clone(),
            data: ws.display(&data),
            checkpoints: ws.display(&ckpt),
            report: ws.display(&report_dir),
        },
        Some(&config),
    )?;
    let stem = format!("prediction_{}", args.split);
    let json = report_dir.join(format!("{stem}.json"));
    let text = report.to_text();
    std::fs::write(&json, report.to_json()?).with_context(|| format!("writing {}", json.display()))?;
    std::fs::write(report_dir.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    Ok(())
}

