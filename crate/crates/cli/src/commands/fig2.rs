use anyhow::Result;
use dalab::inertia::{fig2_experiment, heatmap_csv, Fig2Config, Fig2Report};
use serde::Serialize;

use super::{load_model, model_hash, random_word_tokens, sentence_tokens};
use crate::config::RunConfig;
use crate::output::Output;

#[derive(Serialize)]
struct HeatmapMeta {
    file: String,
    tokens: usize,
    neurons: usize,
}

#[derive(Serialize)]
struct Fig2Output {
    model_sha256: String,
    seed: Option<u64>,
    heatmaps: Vec<HeatmapMeta>,
    fig2: Fig2Report,
    pass: bool,
}

/// Passes when sequential overlap beats parallel overlap on both corpora
/// and random words concentrate more than the sentence.
pub fn run(config: &RunConfig, out: &Output, command: &str) -> Result<bool> {
    let model = load_model(config)?;
    let result = fig2_experiment(
        &model,
        &sentence_tokens(config)?,
        &random_word_tokens(config)?,
        &Fig2Config {
            q: config.inertia.q,
            layer: config.inertia.layer,
            normalization: config.inertia.normalization,
            informational: false,
        },
    )?;
    let mut heatmaps = Vec::new();
    for (cell, map) in result.report.cells.iter().zip(&result.heatmaps) {
        let file = format!("heatmap_{}.csv", cell.label());
        out.write(&file, &heatmap_csv(map))?;
        heatmaps.push(HeatmapMeta {
            file,
            tokens: map.rows(),
            neurons: map.cols(),
        });
    }
    let o = &result.report.orderings;
    let pass = o.sentence_sequential_jaccard_higher && o.random_sequential_jaccard_higher && o.random_sequential_more_concentrated;
    let report = Fig2Output {
        model_sha256: model_hash(&model),
        seed: config.seed,
        heatmaps,
        fig2: result.report,
        pass,
    };
    out.report("fig2_report.json", command, &report)?;
    Ok(pass)
}
