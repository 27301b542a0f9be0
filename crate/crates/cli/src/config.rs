//! Run configuration: one JSON document with a version field. Every section
//! has defaults, so `{"version": 1}` is a complete config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dalab::dasparse::{ActivationSource, Aggregator, EvalConfig, RouterConfig};
use dalab::inertia::Normalization;
use dalab::model::{ModelConfig, TrainConfig};
use dalab::moyu::McConfig;
use dalab::numerics::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed. When set, every component seed below is derived from it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub corpus: CorpusPaths,
    /// Model checkpoint for sparsify, fig2 and ablate; the bundled trained
    /// model of `model.ffn_kind` when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub sparsify: SparsifyConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub inertia: InertiaConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Text files; the bundled assets are used for any path left unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: Option<PathBuf>,
    pub sentence: Option<PathBuf>,
    pub random_words: Option<PathBuf>,
    /// Sequence used by `ablate`; defaults to the sentence corpus.
    pub ablation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    Dense,
    /// Fixed threshold, or one calibrated to keep `density` of activations.
    Tda {
        threshold: Option<f64>,
        density: Option<f64>,
    },
    /// Router trained on the training corpus; decision threshold fixed or
    /// calibrated to `density`.
    Roda {
        decision_threshold: Option<f64>,
        density: Option<f64>,
    },
    RidaToken {
        k: usize,
    },
    RidaSequence {
        k: usize,
        aggregator: Aggregator,
        #[serde(default)]
        source: ActivationSource,
    },
    /// Mean over `n_masks` random static masks of `k` neurons per layer.
    Random {
        k: usize,
        n_masks: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsifyConfig {
    pub strategies: Vec<StrategyConfig>,
    pub eval: EvalConfig,
    pub router: RouterConfig,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        let k = ModelConfig::default().d_ff / 2;
        Self {
            strategies: vec![
                StrategyConfig::Dense,
                StrategyConfig::Tda {
                    threshold: None,
                    density: Some(0.5),
                },
                StrategyConfig::Roda {
                    decision_threshold: None,
                    density: Some(0.5),
                },
                StrategyConfig::RidaToken { k },
                StrategyConfig::RidaSequence {
                    k,
                    aggregator: Aggregator::SumOfMagnitudes,
                    source: ActivationSource::Post,
                },
                StrategyConfig::Random {
                    k,
                    n_masks: 20,
                    seed: 0xA11CE,
                },
            ],
            eval: EvalConfig::default(),
            router: RouterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub monte_carlo: McConfig,
    /// Random points per finite-difference check.
    pub fd_points: usize,
    pub fd_step: f64,
    pub fd_rel_tol: f64,
    /// Scale of the Gaussian `dx`, `dθ` perturbations in the linearised loss.
    pub perturbation_scale: f64,
    pub recursion_steps: usize,
    pub zero_increment_tokens: usize,
    pub divergence_tokens: usize,
    pub good_mapping: GoodMappingConfig,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            monte_carlo: McConfig::default(),
            fd_points: 100,
            fd_step: 1e-5,
            fd_rel_tol: 1e-5,
            perturbation_scale: 1e-2,
            recursion_steps: 1000,
            zero_increment_tokens: 10_000,
            divergence_tokens: 2_000,
            good_mapping: GoodMappingConfig::default(),
            seed: 0x7E0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodMappingConfig {
    pub alpha: f64,
    pub support_threshold: f64,
    pub k: usize,
    pub width: usize,
    pub margin: f64,
    pub samples: usize,
}

impl Default for GoodMappingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            support_threshold: 0.05,
            k: 4,
            width: 64,
            margin: 0.3,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InertiaConfig {
    pub q: f64,
    pub support_threshold: f64,
    /// Defaults to the first layer.
    pub layer: Option<usize>,
    pub normalization: Normalization,
}

impl Default for InertiaConfig {
    fn default() -> Self {
        Self {
            q: 0.05,
            support_threshold: 0.1,
            layer: None,
            normalization: Normalization::PerTokenMax,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusPaths::default(),
            checkpoint: None,
            sparsify: SparsifyConfig::default(),
            theory: TheoryConfig::default(),
            inertia: InertiaConfig::default(),
            out: default_out(),
        }
    }
}

/// Command-line values that replace the matching config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub layer: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str::<RunConfig>(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(layer) = overrides.layer {
            config.inertia.layer = Some(layer);
        }
        config.apply_master_seed();
        config.validate()?;
        Ok(config)
    }

    fn apply_master_seed(&mut self) {
        let Some(seed) = self.seed else { return };
        let root = Rng::new(seed);
        let derive = |label: u64| root.split(label).next_u64();
        self.model.seed = derive(1);
        self.train.seed = derive(2);
        self.sparsify.router.seed = derive(3);
        self.theory.monte_carlo.seed = derive(4);
        self.theory.seed = derive(5);
        for (i, s) in self.sparsify.strategies.iter_mut().enumerate() {
            if let StrategyConfig::Random { seed, .. } = s {
                *seed = derive(100 + i as u64);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
        }
        self.model.validate()?;
        if self.theory.monte_carlo.n_samples < 100 {
            bail!("theory.monte_carlo.n_samples = {} is below the minimum of 100", self.theory.monte_carlo.n_samples);
        }
        if self.theory.fd_points == 0 || self.theory.recursion_steps == 0 {
            bail!("theory.fd_points and theory.recursion_steps must be positive");
        }
        if !(self.inertia.q > 0.0 && self.inertia.q <= 1.0) {
            bail!("inertia.q = {} outside (0, 1]", self.inertia.q);
        }
        if !(self.inertia.support_threshold > 0.0 && self.inertia.support_threshold < 1.0) {
            bail!("inertia.support_threshold = {} outside (0, 1)", self.inertia.support_threshold);
        }
        if let Some(layer) = self.inertia.layer {
            if layer >= self.model.n_layers {
                bail!("layer {layer} out of range for {} layers", self.model.n_layers);
            }
        }
        for path in [&self.corpus.train, &self.corpus.sentence, &self.corpus.random_words, &self.corpus.ablation, &self.checkpoint]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                bail!("path does not exist: {}", path.display());
            }
        }
        for s in &self.sparsify.strategies {
            match s {
                StrategyConfig::Tda { threshold, density } | StrategyConfig::Roda { decision_threshold: threshold, density } => {
                    if threshold.is_some() == density.is_some() {
                        bail!("strategy {s:?} needs exactly one of a threshold or a density");
                    }
                }
                StrategyConfig::RidaToken { k } | StrategyConfig::RidaSequence { k, .. } | StrategyConfig::Random { k, .. } => {
                    if *k > self.model.d_ff {
                        bail!("strategy k = {k} exceeds d_ff = {}", self.model.d_ff);
                    }
                }
                StrategyConfig::Dense => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the effective config's canonical JSON, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
