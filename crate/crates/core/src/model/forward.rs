use serde::{Deserialize, Serialize};

use super::config::FfnKind;
use super::weights::ToyTransformer;
use crate::dasparse::NeuronMask;
use crate::error::{LabError, Result};
use crate::numerics::{matmul_into, softmax_in_place, swish1_scalar, vecmat_into, Tensor2D, Vector};

pub(crate) const RMS_EPS: f64 = 1e-5;

/// How a token sequence is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Every token is its own length-1 sequence at position 0.
    Parallel,
    /// One causal sequence.
    Sequential,
}

impl InputMode {
    pub fn name(self) -> &'static str {
        match self {
            InputMode::Parallel => "parallel",
            InputMode::Sequential => "sequential",
        }
    }
}

/// Online neuron selection: decides the keep-mask of one layer at one token
/// from the FFN input and the unmasked activations of that token.
pub trait NeuronSelector {
    fn select(&self, layer: usize, token: usize, ffn_input: &[f64], pre: &[f64], post: &[f64]) -> Vec<bool>;
}

/// Which FFN neurons contribute to the down projection.
#[derive(Clone, Copy)]
pub enum Masking<'a> {
    Dense,
    /// FFN blocks are skipped entirely.
    AttentionOnly,
    /// One per-layer mask for every token.
    Static(&'a NeuronMask),
    /// Per-layer mask for tokens with index `>= start`; earlier tokens run dense.
    StaticFrom { mask: &'a NeuronMask, start: usize },
    /// One per-layer mask per token.
    PerToken(&'a [NeuronMask]),
    Dynamic(&'a dyn NeuronSelector),
}

/// Per-layer record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Normalized hidden state entering the FFN (`tokens x d_model`).
    pub ffn_input: Tensor2D,
    /// Gate projection of the FFN input (`tokens x d_ff`).
    pub pre_activation: Tensor2D,
    /// Unmasked activation values (`tokens x d_ff`).
    pub post_activation: Tensor2D,
    /// Head-averaged attention row of each token over positions `0..=t`
    /// of its own sequence.
    pub attention: Vec<Vector>,
    /// Number of neurons that reached the down projection, per token.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub mode: InputMode,
    pub tokens: Vec<usize>,
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, layer: usize) -> Result<&LayerTrace> {
        self.layers.get(layer).ok_or_else(|| {
            LabError::contract("ActivationTrace::layer", format!("layer {layer} of {}", self.layers.len()))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `tokens x vocab_size`.
    pub logits: Tensor2D,
    pub trace: ActivationTrace,
    /// Residual stream after the last block, before the final norm.
    pub final_hidden: Tensor2D,
}

pub(crate) struct LayerCache {
    pub h1: Vec<f64>,
    pub rms1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Per head, a `t x t` row-major matrix of attention probabilities.
    pub probs: Vec<Vec<f64>>,
    pub ctx: Vec<f64>,
    pub h2: Vec<f64>,
    pub rms2: Vec<f64>,
    pub gate: Vec<f64>,
    pub up: Option<Vec<f64>>,
    pub post_true: Vec<f64>,
    pub post_used: Vec<f64>,
    pub kept: Vec<usize>,
}

/// Everything computed for one contiguous causal sequence.
pub(crate) struct SequencePass {
    pub len: usize,
    pub layers: Vec<LayerCache>,
    pub x_final: Vec<f64>,
    pub hf: Vec<f64>,
    pub rmsf: Vec<f64>,
    pub logits: Vec<f64>,
}

pub(crate) fn rms_norm_rows(x: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut rms = Vec::with_capacity(x.len() / width);
    for (row, out) in x.chunks(width).zip(y.chunks_mut(width)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let r = (ms + RMS_EPS).sqrt();
        for (o, v) in out.iter_mut().zip(row) {
            *o = v / r;
        }
        rms.push(r);
    }
    (y, rms)
}

impl ToyTransformer {
    /// Output scale on the unembedding so untrained logits stay near uniform.
    pub(crate) fn readout_scale(&self) -> f64 {
        1.0 / (self.config.d_model as f64).sqrt()
    }

    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LabError::Empty("token sequence"));
        }
        if tokens.len() > self.config.max_seq {
            return Err(LabError::contract(
                "forward",
                format!("sequence of {} exceeds max_seq {}", tokens.len(), self.config.max_seq),
            ));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(LabError::UnknownToken {
                token: t,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_masking(&self, masking: &Masking, n_tokens: usize) -> Result<()> {
        let check = |m: &NeuronMask| m.check_shape(self.config.n_layers, self.config.d_ff);
        match masking {
            Masking::Static(m) | Masking::StaticFrom { mask: m, .. } => check(m),
            Masking::PerToken(ms) => {
                if ms.len() != n_tokens {
                    return Err(LabError::MaskShape {
                        expected_layers: self.config.n_layers,
                        expected_width: self.config.d_ff,
                        detail: format!("{} per-token masks for {} tokens", ms.len(), n_tokens),
                    });
                }
                ms.iter().try_for_each(check)
            }
            _ => Ok(()),
        }
    }

    /// Dense or statically masked forward pass.
    pub fn forward(
        &self,
        tokens: &[usize],
        mode: InputMode,
        mask: Option<&NeuronMask>,
    ) -> Result<(Tensor2D, ActivationTrace)> {
        let masking = match mask {
            Some(m) => Masking::Static(m),
            None => Masking::Dense,
        };
        let out = self.forward_with(tokens, mode, masking)?;
        Ok((out.logits, out.trace))
    }

    pub fn forward_with(&self, tokens: &[usize], mode: InputMode, masking: Masking) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        self.check_masking(&masking, tokens.len())?;
        let passes: Vec<SequencePass> = match mode {
            InputMode::Sequential => vec![self.run_sequence(tokens, 0, masking)],
            InputMode::Parallel => tokens
                .iter()
                .enumerate()
                .map(|(i, t)| self.run_sequence(std::slice::from_ref(t), i, masking))
                .collect(),
        };
        Ok(self.assemble(tokens, mode, &passes))
    }

    fn assemble(&self, tokens: &[usize], mode: InputMode, passes: &[SequencePass]) -> ForwardOutput {
        let cfg = &self.config;
        let n = tokens.len();
        let cat = |f: &dyn Fn(&SequencePass) -> &[f64]| passes.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<_>>();
        let logits = Tensor2D::new(n, cfg.vocab_size, cat(&|p| &p.logits)).expect("logits shape");
        let final_hidden = Tensor2D::new(n, cfg.d_model, cat(&|p| &p.x_final)).expect("hidden shape");
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let cat_l = |f: &dyn Fn(&LayerCache) -> &[f64]| {
                    passes.iter().flat_map(|p| f(&p.layers[l]).iter().copied()).collect::<Vec<_>>()
                };
                let mut attention = Vec::with_capacity(n);
                for p in passes {
                    let lc = &p.layers[l];
                    for t in 0..p.len {
                        let mut row = vec![0.0; t + 1];
                        for head in &lc.probs {
                            for (r, &w) in row.iter_mut().zip(&head[t * p.len..t * p.len + t + 1]) {
                                *r += w;
                            }
                        }
                        row.iter_mut().for_each(|r| *r /= cfg.n_heads as f64);
                        attention.push(Vector(row));
                    }
                }
                LayerTrace {
                    ffn_input: Tensor2D::new(n, cfg.d_model, cat_l(&|c| &c.h2)).expect("ffn input shape"),
                    pre_activation: Tensor2D::new(n, cfg.d_ff, cat_l(&|c| &c.gate)).expect("pre shape"),
                    post_activation: Tensor2D::new(n, cfg.d_ff, cat_l(&|c| &c.post_true)).expect("post shape"),
                    attention,
                    kept: passes.iter().flat_map(|p| p.layers[l].kept.iter().copied()).collect(),
                }
            })
            .collect();
        ForwardOutput {
            logits,
            trace: ActivationTrace {
                mode,
                tokens: tokens.to_vec(),
                layers,
            },
            final_hidden,
        }
    }

    /// Causal pass over one contiguous sequence; `token_offset` is the index of
    /// its first token in the caller's token stream (used for mask lookup).
    pub(crate) fn run_sequence(&self, tokens: &[usize], token_offset: usize, masking: Masking) -> SequencePass {
        let cfg = &self.config;
        let (d, ff, t_len) = (cfg.d_model, cfg.d_ff, tokens.len());
        let mut x = vec![0.0; t_len * d];
        for (p, &tok) in tokens.iter().enumerate() {
            let row = &mut x[p * d..(p + 1) * d];
            for ((o, a), b) in row.iter_mut().zip(self.tok_emb.row(tok)).zip(self.pos_emb.row(p)) {
                *o = a + b;
            }
        }
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, w) in self.layers.iter().enumerate() {
            let (h1, rms1) = rms_norm_rows(&x, d);
            let mut q = vec![0.0; t_len * d];
            let mut k = vec![0.0; t_len * d];
            let mut v = vec![0.0; t_len * d];
            matmul_into(&h1, t_len, d, w.wq.data(), d, &mut q);
            matmul_into(&h1, t_len, d, w.wk.data(), d, &mut k);
            matmul_into(&h1, t_len, d, w.wv.data(), d, &mut v);
            let (ctx, probs) = self.attend(&q, &k, &v, t_len);
            let mut attn_out = vec![0.0; t_len * d];
            matmul_into(&ctx, t_len, d, w.wo.data(), d, &mut attn_out);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }
            let (h2, rms2) = rms_norm_rows(&x, d);
            let mut gate = vec![0.0; t_len * ff];
            matmul_into(&h2, t_len, d, w.w_gate.data(), ff, &mut gate);
            let up = w.w_up.as_ref().map(|wu| {
                let mut up = vec![0.0; t_len * ff];
                matmul_into(&h2, t_len, d, wu.data(), ff, &mut up);
                up
            });
            let post_true: Vec<f64> = match (cfg.ffn_kind, &up) {
                (FfnKind::Relu, _) => gate.iter().map(|&g| if g > 0.0 { g } else { 0.0 }).collect(),
                (FfnKind::Swiglu, Some(up)) => gate.iter().zip(up).map(|(&g, &u)| swish1_scalar(g) * u).collect(),
                (FfnKind::Swiglu, None) => unreachable!("swiglu layer without up projection"),
            };
            let mut post_used = post_true.clone();
            let mut kept = vec![ff; t_len];
            for p in 0..t_len {
                let token = token_offset + p;
                let range = p * ff..(p + 1) * ff;
                let keep: Option<Vec<bool>> = match masking {
                    Masking::Dense => None,
                    Masking::AttentionOnly => Some(vec![false; ff]),
                    Masking::Static(m) => Some(m.layers[l].clone()),
                    Masking::StaticFrom { mask, start } => (token >= start).then(|| mask.layers[l].clone()),
                    Masking::PerToken(ms) => Some(ms[token].layers[l].clone()),
                    Masking::Dynamic(sel) => Some(sel.select(
                        l,
                        token,
                        &h2[p * d..(p + 1) * d],
                        &gate[range.clone()],
                        &post_true[range.clone()],
                    )),
                };
                if let Some(keep) = keep {
                    assert_eq!(keep.len(), ff, "selector returned a mask of the wrong width");
                    let row = &mut post_used[range];
                    for (a, &k) in row.iter_mut().zip(&keep) {
                        if !k {
                            *a = 0.0;
                        }
                    }
                    kept[p] = keep.iter().filter(|&&k| k).count();
                }
            }
            if !matches!(masking, Masking::AttentionOnly) {
                let mut ffn_out = vec![0.0; t_len * d];
                matmul_into(&post_used, t_len, ff, w.w_down.data(), d, &mut ffn_out);
                for (xi, f) in x.iter_mut().zip(&ffn_out) {
                    *xi += f;
                }
            }
            layers.push(LayerCache {
                h1,
                rms1,
                q,
                k,
                v,
                probs,
                ctx,
                h2,
                rms2,
                gate,
                up,
                post_true,
                post_used,
                kept,
            });
        }
        let (hf, rmsf) = rms_norm_rows(&x, d);
        let mut logits = vec![0.0; t_len * cfg.vocab_size];
        matmul_into(&hf, t_len, d, self.unembed.data(), cfg.vocab_size, &mut logits);
        let scale = self.readout_scale();
        logits.iter_mut().for_each(|z| *z *= scale);
        SequencePass {
            len: t_len,
            layers,
            x_final: x,
            hf,
            rmsf,
            logits,
        }
    }

    /// Causal multi-head attention. Returns the concatenated head outputs and
    /// each head's `t x t` probability matrix (zero above the diagonal).
    fn attend(&self, q: &[f64], k: &[f64], v: &[f64], t_len: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = vec![0.0; t_len * d];
        let mut probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let off = h * hd;
            let mut p = vec![0.0; t_len * t_len];
            for t in 0..t_len {
                let qt = &q[t * d + off..t * d + off + hd];
                let row = &mut p[t * t_len..t * t_len + t + 1];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + hd];
                    *r = qt.iter().zip(kj).fold(0.0, |acc, (a, b)| acc + a * b) * scale;
                }
                softmax_in_place(row);
                let out = &mut ctx[t * d + off..t * d + off + hd];
                for (j, &w) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += w * vv;
                    }
                }
            }
            probs.push(p);
        }
        (ctx, probs)
    }
}

/// Down projection of a single activation row, with the same summation order
/// the forward pass uses.
pub fn down_project(post: &[f64], w_down: &Tensor2D) -> Vec<f64> {
    let mut out = vec![0.0; w_down.cols()];
    vecmat_into(post, w_down.data(), w_down.cols(), &mut out);
    out
}
