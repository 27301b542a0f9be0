//! Offline neuron-activity router: a two-layer linear network per FFN layer,
//! fitted by per-neuron logistic regression on recorded hidden states.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{LabError, Result};
use crate::model::{InputMode, NeuronSelector, ToyTransformer};
use crate::numerics::{sigmoid, vecmat_into, Rng, Tensor2D};

/// What counts as an "active" neuron when labelling router training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityLabel {
    /// `post > activity_threshold`.
    Positive,
    /// `|post| > activity_threshold`.
    Magnitude,
}

impl ActivityLabel {
    pub fn is_active(self, post: f64, threshold: f64) -> bool {
        match self {
            ActivityLabel::Positive => post > threshold,
            ActivityLabel::Magnitude => post.abs() > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub activity_threshold: f64,
    pub label: ActivityLabel,
    /// Fraction of corpus sequences (taken from the end) held out for evaluation.
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 10,
            lr: 0.01,
            batch_size: 32,
            activity_threshold: 0.0,
            label: ActivityLabel::Positive,
            held_out_fraction: 0.2,
            seed: 0xD5A7,
        }
    }
}

/// `score = (x · first) · second + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRouter {
    pub first: Tensor2D,
    pub second: Tensor2D,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterModel {
    pub layers: Vec<LayerRouter>,
    /// Neurons with score strictly above this value are predicted active.
    pub decision_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationStats {
    pub recall: f64,
    pub precision: f64,
    pub positive_rate: f64,
    pub predicted_rate: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterReport {
    pub train_samples: usize,
    pub held_out_samples: usize,
    pub held_out: Vec<ClassificationStats>,
}

impl RouterReport {
    /// Held-out recall pooled over layers (mean of per-layer recalls).
    pub fn mean_recall(&self) -> f64 {
        self.held_out.iter().map(|s| s.recall).sum::<f64>() / self.held_out.len() as f64
    }
}

pub const ROUTER_CHECKPOINT_KIND: &str = "roda_router";

impl LayerRouter {
    pub fn hidden_width(&self) -> usize {
        self.first.cols()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.first.cols()];
        vecmat_into(x, self.first.data(), self.first.cols(), &mut h);
        let mut z = vec![0.0; self.second.cols()];
        vecmat_into(&h, self.second.data(), self.second.cols(), &mut z);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        z
    }

    pub fn predict(&self, x: &[f64], decision_threshold: f64) -> Result<Vec<bool>> {
        if x.len() != self.first.rows() {
            return Err(LabError::dims(
                "roda_predict",
                format!("hidden state of {} for router input {}", x.len(), self.first.rows()),
            ));
        }
        Ok(self.scores(x).into_iter().map(|s| s > decision_threshold).collect())
    }
}

impl RouterModel {
    pub fn zeros(n_layers: usize, d_model: usize, hidden: usize, d_ff: usize) -> Self {
        Self {
            layers: (0..n_layers)
                .map(|_| LayerRouter {
                    first: Tensor2D::zeros(d_model, hidden),
                    second: Tensor2D::zeros(hidden, d_ff),
                    bias: vec![0.0; d_ff],
                })
                .collect(),
            decision_threshold: 0.0,
        }
    }

    /// Predicted keep-mask for one layer and one token.
    pub fn roda_predict(&self, layer: usize, hidden_state: &[f64]) -> Result<Vec<bool>> {
        let r = self.layers.get(layer).ok_or_else(|| {
            LabError::contract("roda_predict", format!("layer {layer} of {}", self.layers.len()))
        })?;
        r.predict(hidden_state, self.decision_threshold)
    }

    pub fn with_threshold(&self, decision_threshold: f64) -> Self {
        Self {
            decision_threshold,
            ..self.clone()
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push(NamedTensor::from_tensor(format!("layers.{i}.first"), &l.first));
            tensors.push(NamedTensor::from_tensor(format!("layers.{i}.second"), &l.second));
            tensors.push(NamedTensor {
                name: format!("layers.{i}.bias"),
                rows: 1,
                cols: l.bias.len(),
                data: l.bias.clone(),
            });
        }
        Checkpoint::new(
            ROUTER_CHECKPOINT_KIND,
            serde_json::json!({
                "n_layers": self.layers.len(),
                "decision_threshold": self.decision_threshold,
            }),
            tensors,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ROUTER_CHECKPOINT_KIND)?;
        let n_layers = ckpt.config["n_layers"]
            .as_u64()
            .ok_or_else(|| LabError::Checkpoint("router config lacks n_layers".into()))? as usize;
        let decision_threshold = ckpt.config["decision_threshold"]
            .as_f64()
            .ok_or_else(|| LabError::Checkpoint("router config lacks decision_threshold".into()))?;
        let layers = (0..n_layers)
            .map(|i| {
                Ok(LayerRouter {
                    first: ckpt.tensor(&format!("layers.{i}.first"))?,
                    second: ckpt.tensor(&format!("layers.{i}.second"))?,
                    bias: ckpt.tensor(&format!("layers.{i}.bias"))?.into_data(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            decision_threshold,
        })
    }
}

impl NeuronSelector for RouterModel {
    fn select(&self, layer: usize, _token: usize, ffn_input: &[f64], _pre: &[f64], _post: &[f64]) -> Vec<bool> {
        self.roda_predict(layer, ffn_input).expect("router shaped for this model")
    }
}

/// Recorded (FFN input, activity label) pairs for one layer.
#[derive(Debug, Clone, Default)]
pub struct RouterSamples {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
}

/// Runs the model densely over `corpus` and records per-layer training pairs.
pub fn collect_router_samples(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    label: ActivityLabel,
    activity_threshold: f64,
) -> Result<Vec<RouterSamples>> {
    let mut out = vec![RouterSamples::default(); model.config.n_layers];
    for seq in corpus {
        let (_, trace) = model.forward(seq, InputMode::Sequential, None)?;
        for (l, lt) in trace.layers.iter().enumerate() {
            for t in 0..trace.len() {
                out[l].inputs.push(lt.ffn_input.row(t).to_vec());
                out[l]
                    .labels
                    .push(lt.post_activation.row(t).iter().map(|&a| label.is_active(a, activity_threshold)).collect());
            }
        }
    }
    Ok(out)
}

/// Fits one layer router by minibatch SGD on the summed per-neuron logistic loss.
pub fn fit_layer_router(samples: &RouterSamples, hidden: usize, config: &RouterConfig, rng: &mut Rng) -> Result<LayerRouter> {
    if hidden == 0 {
        return Err(LabError::InvalidConfig("router hidden width must be at least 1".into()));
    }
    if config.epochs == 0 {
        return Err(LabError::contract("train_roda_router", "epochs must be at least 1"));
    }
    let n = samples.inputs.len();
    if n == 0 {
        return Err(LabError::Empty("router training samples"));
    }
    let d = samples.inputs[0].len();
    let ff = samples.labels[0].len();
    let mut first = Tensor2D::random_normal(d, hidden, (1.0 / d as f64).sqrt(), rng);
    let mut second = Tensor2D::random_normal(hidden, ff, (1.0 / hidden as f64).sqrt(), rng);
    let mut bias = vec![0.0; ff];
    let mut order: Vec<usize> = (0..n).collect();
    let bs = config.batch_size.max(1);
    let mut h = vec![0.0; hidden];
    let mut z = vec![0.0; ff];
    let mut dh = vec![0.0; hidden];
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(bs) {
            let scale = config.lr / batch.len() as f64;
            let mut g_first = vec![0.0; d * hidden];
            let mut g_second = vec![0.0; hidden * ff];
            let mut g_bias = vec![0.0; ff];
            for &i in batch {
                let x = &samples.inputs[i];
                vecmat_into(x, first.data(), hidden, &mut h);
                vecmat_into(&h, second.data(), ff, &mut z);
                for ((zj, b), &y) in z.iter_mut().zip(&bias).zip(&samples.labels[i]) {
                    *zj = sigmoid(*zj + b) - if y { 1.0 } else { 0.0 };
                }
                for (gb, dz) in g_bias.iter_mut().zip(&z) {
                    *gb += dz;
                }
                for (r, &hr) in h.iter().enumerate() {
                    let row = &mut g_second[r * ff..(r + 1) * ff];
                    for (g, dz) in row.iter_mut().zip(&z) {
                        *g += hr * dz;
                    }
                    dh[r] = second.row(r).iter().zip(&z).map(|(w, dz)| w * dz).sum();
                }
                for (k, &xk) in x.iter().enumerate() {
                    for (g, d) in g_first[k * hidden..(k + 1) * hidden].iter_mut().zip(&dh) {
                        *g += xk * d;
                    }
                }
            }
            for (w, g) in first.data_mut().iter_mut().zip(&g_first) {
                *w -= scale * g;
            }
            for (w, g) in second.data_mut().iter_mut().zip(&g_second) {
                *w -= scale * g;
            }
            for (w, g) in bias.iter_mut().zip(&g_bias) {
                *w -= scale * g;
            }
        }
    }
    if !(first.is_finite() && second.is_finite() && bias.iter().all(|b| b.is_finite())) {
        return Err(LabError::contract("train_roda_router", format!("training diverged at lr {}", config.lr)));
    }
    Ok(LayerRouter { first, second, bias })
}

pub fn classification_stats(router: &LayerRouter, samples: &RouterSamples, decision_threshold: f64) -> ClassificationStats {
    let (mut tp, mut fp, mut pos, mut pred, mut total) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (x, labels) in samples.inputs.iter().zip(&samples.labels) {
        for (s, &y) in router.scores(x).into_iter().zip(labels) {
            let p = s > decision_threshold;
            total += 1;
            pos += y as usize;
            pred += p as usize;
            tp += (p && y) as usize;
            fp += (p && !y) as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    ClassificationStats {
        recall: ratio(tp, pos),
        precision: ratio(tp, tp + fp),
        positive_rate: ratio(pos, total),
        predicted_rate: ratio(pred, total),
        samples: samples.inputs.len(),
    }
}

/// Trains one router per layer on the model's own dense activations over
/// `corpus`; the trailing `held_out_fraction` of sequences is used only
/// for the reported recall and precision.
pub fn train_roda_router(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    config: &RouterConfig,
) -> Result<(RouterModel, RouterReport)> {
    if config.epochs == 0 {
        return Err(LabError::contract("train_roda_router", "epochs must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(LabError::Empty("router corpus"));
    }
    let held = ((corpus.len() as f64) * config.held_out_fraction).round() as usize;
    let held = held.min(corpus.len() - 1);
    let (train, test) = corpus.split_at(corpus.len() - held);
    let train_samples = collect_router_samples(model, train, config.label, config.activity_threshold)?;
    let test_samples = collect_router_samples(model, test, config.label, config.activity_threshold)?;
    let root = Rng::new(config.seed);
    let mut layers = Vec::with_capacity(model.config.n_layers);
    let mut held_out = Vec::with_capacity(model.config.n_layers);
    for (l, (tr, te)) in train_samples.iter().zip(&test_samples).enumerate() {
        let router = fit_layer_router(tr, config.hidden, config, &mut root.split(l as u64))?;
        held_out.push(classification_stats(&router, if te.inputs.is_empty() { tr } else { te }, 0.0));
        layers.push(router);
    }
    Ok((
        RouterModel {
            layers,
            decision_threshold: 0.0,
        },
        RouterReport {
            train_samples: train_samples[0].inputs.len(),
            held_out_samples: test_samples[0].inputs.len(),
            held_out,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_router_predicts_nothing() {
        let r = RouterModel::zeros(1, 4, 2, 6);
        assert_eq!(r.roda_predict(0, &[1.0, -2.0, 0.5, 3.0]).unwrap(), vec![false; 6]);
        assert!(r.roda_predict(0, &[1.0]).is_err());
        assert!(r.roda_predict(1, &[0.0; 4]).is_err());
    }

    #[test]
    fn overfits_single_neuron_labels() {
        let mut rng = Rng::new(17);
        let mut samples = RouterSamples::default();
        let w = [0.7, -1.2, 0.4];
        for _ in 0..64 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            samples.labels.push(vec![s > 0.0]);
            samples.inputs.push(x);
        }
        let cfg = RouterConfig {
            epochs: 400,
            lr: 0.5,
            batch_size: 8,
            ..RouterConfig::default()
        };
        let router = fit_layer_router(&samples, 2, &cfg, &mut rng).unwrap();
        for (x, y) in samples.inputs.iter().zip(&samples.labels) {
            assert_eq!(router.predict(x, 0.0).unwrap(), *y);
        }
    }

    #[test]
    fn density_monotone_in_threshold() {
        let mut rng = Rng::new(2);
        let router = LayerRouter {
            first: Tensor2D::random_normal(5, 3, 1.0, &mut rng),
            second: Tensor2D::random_normal(3, 20, 1.0, &mut rng),
            bias: (0..20).map(|_| rng.normal()).collect(),
        };
        let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let mut last = usize::MAX;
        for i in -40..=40 {
            let kept = router.predict(&x, i as f64 * 0.25).unwrap().iter().filter(|&&k| k).count();
            assert!(kept <= last);
            last = kept;
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let samples = RouterSamples {
            inputs: vec![vec![1.0]],
            labels: vec![vec![true]],
        };
        let cfg = RouterConfig {
            epochs: 0,
            ..RouterConfig::default()
        };
        assert!(fit_layer_router(&samples, 1, &cfg, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut r = RouterModel::zeros(2, 3, 2, 4);
        r.layers[1].bias[2] = 0.125;
        r.decision_threshold = -0.5;
        let back = RouterModel::from_checkpoint(&Checkpoint::from_json(&r.to_checkpoint().to_json()).unwrap()).unwrap();
        assert_eq!(r, back);
    }
}
