use anyhow::Result;
use dalab::assets::{split_corpus, training_stream};
use dalab::model::{train_toy, ToyTransformer};
use serde::Serialize;

use super::{model_hash, train_text};
use crate::config::RunConfig;
use crate::output::{csv, Cell, Output};

#[derive(Serialize)]
struct TrainReport {
    ffn_kind: String,
    steps: usize,
    final_loss: Option<f64>,
    held_out_loss: f64,
    parameters: usize,
    checkpoint: String,
    checkpoint_sha256: String,
}

pub fn run(config: &RunConfig, out: &Output, command: &str) -> Result<bool> {
    let text = train_text(config)?;
    let init = ToyTransformer::init(&config.model)?;
    let (model, log) = train_toy(&init, &training_stream(&text), &config.train)?;
    let held_out = split_corpus(&text).1;
    out.write("checkpoint.json", &model.to_checkpoint().to_json())?;
    let rows: Vec<Vec<Cell>> = log.iter().map(|s| vec![s.step.into(), s.loss.into()]).collect();
    out.write("train_log.csv", &csv(&["step", "loss"], &rows))?;
    let report = TrainReport {
        ffn_kind: model.config.ffn_kind.name().into(),
        steps: config.train.steps,
        final_loss: log.last().map(|s| s.loss),
        held_out_loss: model.mean_loss(&held_out)?,
        parameters: model.parameter_count(),
        checkpoint: "checkpoint.json".into(),
        checkpoint_sha256: model_hash(&model),
    };
    out.report("train_report.json", command, &report)?;
    Ok(true)
}
