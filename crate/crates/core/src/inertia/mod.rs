//! Heavy-hitter support checks, activation heatmaps, activation-inertia
//! metrics, the four-condition sentence/random × parallel/sequential
//! experiment, and first-heavy-hitter ablation.

mod ablation;
mod fig2;
mod good_mapping;
mod heatmap;
mod metrics;
mod support;

pub use ablation::{ablate_first_heavy_hitter, first_heavy_hitter, AblationConfig, AblationReport};
pub use fig2::{fig2_experiment, CorpusKind, Fig2Cell, Fig2Config, Fig2Orderings, Fig2Output, Fig2Report};
pub use good_mapping::{verify_good_mapping, GoodMappingGenerator, GoodMappingParams, GoodMappingReport, SampleCheck};
pub use heatmap::{activation_heatmap, heatmap_csv, Normalization};
pub use metrics::{gini, inertia_metrics, jaccard, metrics_from_activations, top_count, top_sets, InertiaMetrics};
pub use support::{estimate_h2, supp_tau, SupportSet};
