use anyhow::{Context, Result};
use serde::Serialize;

use handcast::evaluation::{closed_loop_scripts, run_closed_loop, ClosedLoopConfig, Controller};
use handcast::regressor::Regressor;
use handcast::synthworld::{CameraModel, CorpusConfig, SimArm};
use handcast::training::PipelineConfig;
use handcast::{HandNet, ManipNet};

use crate::args::DemoArgs;
use crate::workspace::{load_hand_net, load_manip, load_regressor, parse_scenario, usage, write_snapshot, Workspace};

#[derive(Serialize)]
struct Snapshot {
    command: &'static str,
    mode: String,
    scenario: String,
    episodes: usize,
    seed: u64,
    checkpoints: String,
    out: String,
}

#[derive(Serialize)]
struct Sections<'a> {
    closed_loop: &'a ClosedLoopConfig,
    #[serde(flatten)]
    pipeline: &'a PipelineConfig,
}

pub fn run(ws: &Workspace, args: &DemoArgs) -> Result<()> {
    if args.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let scenario = parse_scenario(&args.scenario)?;
    let config = ws.config(&args.config)?;
    let ckpt = ws.or(&args.checkpoints, ws.checkpoints());
    let out = ws.or(&args.out, ws.demos());
    let arm = SimArm::default();
    let cam = CameraModel::default();
    let loop_config = ClosedLoopConfig {
        frame_size: config.handnet_model.input_size,
        delta: config.regressor.delta,
        warmup: config.regressor.k.max(1),
        ..ClosedLoopConfig::default()
    };
    let mode = if args.oracle {
        "oracle"
    } else if args.untrained {
        "untrained"
    } else {
        "trained"
    };
    let scripts = closed_loop_scripts(args.episodes, args.seed, CorpusConfig::default().duration, scenario);

    let models: Option<(HandNet, Regressor, ManipNet)> = match mode {
        "oracle" => None,
        "untrained" => {
            let net = HandNet::build(&config.handnet_model, args.seed)?;
            let reg = Regressor::build(&config.regressor_model, net.feature_shape(), args.seed)?;
            let manip = ManipNet::build(&config.manip_model, &arm, args.seed)?;
            Some((net, reg, manip))
        }
        _ => {
            let net = load_hand_net(&ckpt, &config)?;
            let reg = load_regressor(&ckpt, &config, &net, config.regressor.k)?;
            let manip = load_manip(&ckpt, &config, &arm)?;
            Some((net, reg, manip))
        }
    };
    let controller = match &models {
        None => Controller::Oracle,
        Some((net, regressor, manip)) => Controller::Learned { net, regressor, manip },
    };
    let report = run_closed_loop(mode, &controller, &scripts, &arm, &cam, &loop_config)?;

    write_snapshot(
        &out,
        &Snapshot {
            command: "demo",
            mode: mode.into(),
            scenario: args.scenario.clone(),
            episodes: args.episodes,
            seed: args.seed,
            checkpoints: ws.display(&ckpt),
            out: ws.display(&out),
        },
        Some(&Sections {
            closed_loop: &loop_config,
            pipeline: &config,
        }),
    )?;
    let path = out.join(format!("closed_loop_{mode}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.summary());
    Ok(())
}
