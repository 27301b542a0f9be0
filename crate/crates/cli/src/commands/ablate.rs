use anyhow::Result;
use dalab::inertia::{ablate_first_heavy_hitter, AblationConfig};
use dalab::model::tokenize;
use serde::Serialize;

use super::{load_model, model_hash, read_text, sentence_tokens};
use crate::config::RunConfig;
use crate::output::Output;

#[derive(Serialize)]
struct AblateOutput {
    model_sha256: String,
    sequence_tokens: usize,
    ablation: dalab::inertia::AblationReport,
}

pub fn run(config: &RunConfig, out: &Output, command: &str) -> Result<bool> {
    let model = load_model(config)?;
    let sequence = match &config.corpus.ablation {
        Some(p) => tokenize(read_text(Some(p), "")?.trim_end()),
        None => sentence_tokens(config)?,
    };
    let ablation = ablate_first_heavy_hitter(
        &model,
        &sequence,
        &AblationConfig {
            support_threshold: config.inertia.support_threshold,
            q: config.inertia.q,
            layer: config.inertia.layer,
        },
    )?;
    let report = AblateOutput {
        model_sha256: model_hash(&model),
        sequence_tokens: sequence.len(),
        ablation,
    };
    out.report("ablate_report.json", command, &report)?;
    Ok(true)
}
