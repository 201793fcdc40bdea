use std::path::Path;

use super::{finish, mean_loss, run_loop, split_indices, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::manip::{manip_loss, tuples_from_log, ManipConfig, ManipNet, ManipTuple, RobotLogRecord};
use crate::synthworld::SimArm;
use crate::tensor::{Bound, Tape};

/// (t, t+Δ) tuples of every log; logs of Δ records or fewer contribute none.
pub fn manip_tuples(logs: &[Vec<RobotLogRecord>], delta: usize) -> Vec<ManipTuple> {
    logs.iter()
        .filter(|l| {
            let ok = l.len() > delta;
            if !ok {
                log::warn!("skipping a log of {} records (delta = {delta})", l.len());
            }
            ok
        })
        .flat_map(|l| tuples_from_log(l, delta))
        .collect()
}

pub fn train_manipulation(
    manip_config: &ManipConfig,
    arm: &SimArm,
    config: &TrainConfig,
    logs: &[Vec<RobotLogRecord>],
    out_dir: Option<&Path>,
) -> Result<(ManipNet, TrainReport)> {
    config.validate()?;
    if logs.is_empty() {
        return Err(Error::EmptyDataset("no robot logs".into()));
    }
    let tuples = manip_tuples(logs, config.delta);
    if tuples.is_empty() {
        return Err(Error::EmptyDataset(format!("no log is longer than delta = {}", config.delta)));
    }
    let mut net = ManipNet::<f32>::build(manip_config, arm, config.seed)?;
    let (train, val) = split_indices(tuples.len(), config.validation_fraction, config.seed);
    let mut params = std::mem::take(&mut net.params);
    let batch_loss = |tape: &mut Tape<f32>, bound: &Bound, idx: &[usize]| {
        let batch: Vec<ManipTuple> = idx.iter().map(|&i| tuples[i]).collect();
        manip_loss(&net, tape, bound, &batch)
    };
    let outcome = run_loop(&mut params, config, &train, out_dir, batch_loss, |p| {
        mean_loss(p, &val, 1024, batch_loss)
    })?;
    let model = serde_json::to_value(manip_config)?;
    let report = finish(outcome, config, model, &params, out_dir, None)?;
    net.params = params;
    Ok((net, report))
}
