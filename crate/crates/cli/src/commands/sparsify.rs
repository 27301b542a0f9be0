use anyhow::Result;
use dalab::assets::split_corpus;
use dalab::dasparse::{
    calibrate_router_threshold, calibrate_tda_threshold, evaluate_strategy, flop_account, perplexity, random_mask_baseline,
    train_roda_router, RouterReport, SparsityReport, StrategySpec,
};
use dalab::model::ToyTransformer;
use serde::Serialize;

use super::{load_model, model_hash, train_text};
use crate::config::{RunConfig, StrategyConfig};
use crate::output::{csv, Cell, Output};

#[derive(Serialize)]
struct Row {
    report: SparsityReport,
    /// Threshold used by TDA or the router, after calibration.
    threshold: Option<f64>,
    /// Per-mask perplexities of the random baseline.
    random_perplexities: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SparsifyOutput {
    model_sha256: String,
    held_out_sequences: usize,
    router: Option<RouterReport>,
    rows: Vec<Row>,
}

fn random_row(model: &ToyTransformer, held_out: &[Vec<usize>], k: usize, n_masks: usize, seed: u64, config: &RunConfig) -> Result<Row> {
    let cfg = &model.config;
    let eval = &config.sparsify.eval;
    let ppls = random_mask_baseline(model, held_out, k, n_masks, seed, eval)?;
    let density = k as f64 / cfg.d_ff as f64;
    let layer_density = vec![density; cfg.n_layers];
    let flops = flop_account(&layer_density, cfg, eval.prompt_len + 1)?;
    Ok(Row {
        report: SparsityReport {
            strategy: format!("random(k={k},masks={n_masks})"),
            layer_density,
            overall_density: density,
            flop_saved_fraction: flops.ffn_saved_fraction,
            ffn_macs_dense_per_token: flops.ffn_macs_dense,
            attention_macs_per_token: flops.attention_macs,
            perplexity_dense: perplexity(model, held_out, None, eval)?,
            perplexity_sparse: ppls.iter().sum::<f64>() / ppls.len().max(1) as f64,
        },
        threshold: None,
        random_perplexities: Some(ppls),
    })
}

pub fn run(config: &RunConfig, out: &Output, command: &str) -> Result<bool> {
    let model = load_model(config)?;
    let (train, held_out) = split_corpus(&train_text(config)?);
    let eval = &config.sparsify.eval;
    let mut router_report = None;
    let mut rows = Vec::new();
    for s in &config.sparsify.strategies {
        let (spec, threshold) = match s {
            StrategyConfig::Dense => (StrategySpec::Dense, None),
            StrategyConfig::Tda { threshold, density } => {
                let t = match (threshold, density) {
                    (Some(t), _) => *t,
                    (None, Some(d)) => calibrate_tda_threshold(&model, &train, *d)?,
                    (None, None) => unreachable!("validated config"),
                };
                (StrategySpec::Tda { threshold: t }, Some(t))
            }
            StrategyConfig::Roda { decision_threshold, density } => {
                let (router, report) = train_roda_router(&model, &train, &config.sparsify.router)?;
                router_report = Some(report);
                let t = match (decision_threshold, density) {
                    (Some(t), _) => *t,
                    (None, Some(d)) => calibrate_router_threshold(&model, &router, &train, *d)?,
                    (None, None) => unreachable!("validated config"),
                };
                (StrategySpec::Roda { router: router.with_threshold(t) }, Some(t))
            }
            StrategyConfig::RidaToken { k } => (StrategySpec::RidaTokenTopK { k: *k }, None),
            StrategyConfig::RidaSequence { k, aggregator, source } => (
                StrategySpec::RidaSequence {
                    k: *k,
                    aggregator: *aggregator,
                    source: *source,
                },
                None,
            ),
            StrategyConfig::Random { k, n_masks, seed } => {
                rows.push(random_row(&model, &held_out, *k, *n_masks, *seed, config)?);
                continue;
            }
        };
        rows.push(Row {
            report: evaluate_strategy(&model, &held_out, &spec, eval)?,
            threshold,
            random_perplexities: None,
        });
    }
    let table: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            let rep = &r.report;
            vec![
                rep.strategy.clone().into(),
                rep.overall_density.into(),
                rep.flop_saved_fraction.into(),
                rep.perplexity_dense.into(),
                rep.perplexity_sparse.into(),
                (rep.perplexity_sparse / rep.perplexity_dense).into(),
            ]
        })
        .collect();
    out.write(
        "sparsify.csv",
        &csv(&["strategy", "density", "flop_saved", "perplexity_dense", "perplexity_sparse", "inflation"], &table),
    )?;
    let report = SparsifyOutput {
        model_sha256: model_hash(&model),
        held_out_sequences: held_out.len(),
        router: router_report,
        rows,
    };
    out.report("sparsify_report.json", command, &report)?;
    Ok(true)
}
