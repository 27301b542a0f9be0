//! Backpropagation through the toy transformer and a plain SGD loop.

use serde::{Deserialize, Serialize};

use super::config::FfnKind;
use super::forward::{Masking, SequencePass};
use super::weights::ToyTransformer;
use crate::error::{LabError, Result};
use crate::numerics::{cross_entropy_index, matmul_into, softmax_in_place, swish1_derivative, swish1_scalar, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Window length sampled from the corpus for each batch element.
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 1.0,
            batch_size: 4,
            seq_len: 128,
            seed: 0x7EA1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
}

/// `out (m x n) += a^T b` for row-major `a (t x m)` and `b (t x n)`.
fn add_at_b(a: &[f64], m: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for (ar, br) in a.chunks(m).zip(b.chunks(n)) {
        for (i, &ai) in ar.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (o, &bj) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += ai * bj;
            }
        }
    }
}

/// `out (t x m) += g (t x n) * w^T` for row-major `w (m x n)`.
fn add_g_wt(g: &[f64], t: usize, n: usize, w_t: &[f64], m: usize, out: &mut [f64]) {
    let mut tmp = vec![0.0; t * m];
    matmul_into(g, t, n, w_t, m, &mut tmp);
    for (o, v) in out.iter_mut().zip(&tmp) {
        *o += v;
    }
}

fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = w[r * cols + c];
        }
    }
    out
}

/// Backward through an RMS norm without gain, row by row.
fn rms_backward(dy: &[f64], y: &[f64], rms: &[f64], width: usize, dx: &mut [f64]) {
    for (((dyr, yr), r), dxr) in dy.chunks(width).zip(y.chunks(width)).zip(rms).zip(dx.chunks_mut(width)) {
        let mean = dyr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / width as f64;
        for ((o, &g), &yy) in dxr.iter_mut().zip(dyr).zip(yr) {
            *o += (g - yy * mean) / r;
        }
    }
}

impl ToyTransformer {
    /// Sum of next-token cross-entropies over one sequence, and the number
    /// of predictions it contains.
    pub fn sequence_loss(&self, tokens: &[usize]) -> Result<(f64, usize)> {
        self.check_tokens(tokens)?;
        let pass = self.run_sequence(tokens, 0, Masking::Dense);
        let v = self.config.vocab_size;
        let total = (0..tokens.len() - 1)
            .map(|t| cross_entropy_index(&pass.logits[t * v..(t + 1) * v], tokens[t + 1]))
            .sum();
        Ok((total, tokens.len() - 1))
    }

    /// Mean next-token cross-entropy over a set of sequences.
    pub fn mean_loss(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for seq in corpus {
            let (s, n) = self.sequence_loss(seq)?;
            total += s;
            count += n;
        }
        if count == 0 {
            return Err(LabError::Empty("corpus has no next-token predictions"));
        }
        Ok(total / count as f64)
    }

    /// Mean next-token loss over `batch` and its gradient for every weight.
    pub fn loss_and_grad(&self, batch: &[Vec<usize>]) -> Result<(f64, ToyTransformer)> {
        let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
        if count == 0 {
            return Err(LabError::Empty("batch has no next-token predictions"));
        }
        let mut grads = self.zeros_like();
        let mut total = 0.0;
        for seq in batch {
            self.check_tokens(seq)?;
            let pass = self.run_sequence(seq, 0, Masking::Dense);
            total += self.backward(&pass, seq, 1.0 / count as f64, &mut grads);
        }
        Ok((total / count as f64, grads))
    }

    /// Accumulates `scale * d(sum of CE)/d(weights)` into `grads`; returns the summed CE.
    pub(crate) fn backward(&self, pass: &SequencePass, tokens: &[usize], scale: f64, grads: &mut ToyTransformer) -> f64 {
        let cfg = &self.config;
        let (d, ff, vocab, t_len) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, pass.len);
        let hd = cfg.head_dim();
        let att_scale = 1.0 / (hd as f64).sqrt();
        let out_scale = self.readout_scale();

        let mut loss = 0.0;
        let mut dlogits = vec![0.0; t_len * vocab];
        for t in 0..t_len.saturating_sub(1) {
            let row = &pass.logits[t * vocab..(t + 1) * vocab];
            loss += cross_entropy_index(row, tokens[t + 1]);
            let drow = &mut dlogits[t * vocab..(t + 1) * vocab];
            drow.copy_from_slice(row);
            softmax_in_place(drow);
            drow[tokens[t + 1]] -= 1.0;
            drow.iter_mut().for_each(|g| *g *= scale * out_scale);
        }
        // dlogits now holds d(loss)/d(hf . U) including the readout scale.
        add_at_b(&pass.hf, d, &dlogits, vocab, grads.unembed.data_mut());
        let mut dhf = vec![0.0; t_len * d];
        add_g_wt(&dlogits, t_len, vocab, &transpose(self.unembed.data(), d, vocab), d, &mut dhf);
        let mut dx = vec![0.0; t_len * d];
        rms_backward(&dhf, &pass.hf, &pass.rmsf, d, &mut dx);

        for (l, (w, c)) in self.layers.iter().zip(&pass.layers).enumerate().rev() {
            let g = &mut grads.layers[l];
            // FFN.
            add_at_b(&c.post_used, ff, &dx, d, g.w_down.data_mut());
            let mut dpost = vec![0.0; t_len * ff];
            add_g_wt(&dx, t_len, d, &transpose(w.w_down.data(), ff, d), ff, &mut dpost);
            let mut dgate = vec![0.0; t_len * ff];
            let mut dh2 = vec![0.0; t_len * d];
            match cfg.ffn_kind {
                FfnKind::Relu => {
                    for ((dg, &dp), &gv) in dgate.iter_mut().zip(&dpost).zip(&c.gate) {
                        *dg = if gv > 0.0 { dp } else { 0.0 };
                    }
                }
                FfnKind::Swiglu => {
                    let up = c.up.as_ref().expect("swiglu cache has up projection");
                    let mut dup = vec![0.0; t_len * ff];
                    for i in 0..dgate.len() {
                        dup[i] = dpost[i] * swish1_scalar(c.gate[i]);
                        dgate[i] = dpost[i] * up[i] * swish1_derivative(c.gate[i]);
                    }
                    let wu = w.w_up.as_ref().expect("swiglu layer has up projection");
                    add_at_b(&c.h2, d, &dup, ff, g.w_up.as_mut().expect("grad up").data_mut());
                    add_g_wt(&dup, t_len, ff, &transpose(wu.data(), d, ff), d, &mut dh2);
                }
            }
            add_at_b(&c.h2, d, &dgate, ff, g.w_gate.data_mut());
            add_g_wt(&dgate, t_len, ff, &transpose(w.w_gate.data(), d, ff), d, &mut dh2);
            rms_backward(&dh2, &c.h2, &c.rms2, d, &mut dx);

            // Attention.
            add_at_b(&c.ctx, d, &dx, d, g.wo.data_mut());
            let mut dctx = vec![0.0; t_len * d];
            add_g_wt(&dx, t_len, d, &transpose(w.wo.data(), d, d), d, &mut dctx);
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            for (h, probs) in c.probs.iter().enumerate() {
                let off = h * hd;
                for t in 0..t_len {
                    let prow = &probs[t * t_len..t * t_len + t + 1];
                    let dct = &dctx[t * d + off..t * d + off + hd];
                    let mut da = vec![0.0; t + 1];
                    for j in 0..=t {
                        let vj = &c.v[j * d + off..j * d + off + hd];
                        da[j] = dct.iter().zip(vj).map(|(a, b)| a * b).sum();
                        for (o, &gv) in dv[j * d + off..j * d + off + hd].iter_mut().zip(dct) {
                            *o += prow[j] * gv;
                        }
                    }
                    let inner: f64 = prow.iter().zip(&da).map(|(p, a)| p * a).sum();
                    let qt: Vec<f64> = c.q[t * d + off..t * d + off + hd].to_vec();
                    for j in 0..=t {
                        let ds = prow[j] * (da[j] - inner) * att_scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for i in 0..hd {
                            dq[t * d + off + i] += ds * c.k[j * d + off + i];
                            dk[j * d + off + i] += ds * qt[i];
                        }
                    }
                }
            }
            add_at_b(&c.h1, d, &dq, d, g.wq.data_mut());
            add_at_b(&c.h1, d, &dk, d, g.wk.data_mut());
            add_at_b(&c.h1, d, &dv, d, g.wv.data_mut());
            let mut dh1 = vec![0.0; t_len * d];
            add_g_wt(&dq, t_len, d, &transpose(w.wq.data(), d, d), d, &mut dh1);
            add_g_wt(&dk, t_len, d, &transpose(w.wk.data(), d, d), d, &mut dh1);
            add_g_wt(&dv, t_len, d, &transpose(w.wv.data(), d, d), d, &mut dh1);
            rms_backward(&dh1, &c.h1, &c.rms1, d, &mut dx);
        }

        for (p, &tok) in tokens.iter().enumerate() {
            let g = &dx[p * d..(p + 1) * d];
            for (o, v) in grads.tok_emb.row_mut(tok).iter_mut().zip(g) {
                *o += v;
            }
            for (o, v) in grads.pos_emb.row_mut(p).iter_mut().zip(g) {
                *o += v;
            }
        }
        loss
    }

    fn sgd_step(&mut self, grads: &ToyTransformer, lr: f64) {
        for (w, g) in self.tensors_mut().into_iter().zip(grads.named_tensors()) {
            w.add_scaled(g.1, -lr).expect("gradient shapes match weights");
        }
    }
}

/// Draws `batch_size` windows of up to `seq_len` tokens from the corpus.
/// One token's contribution to the last layer's down-projection gradient:
/// `d CE_t / d W_down = post ⊗ delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DownProjectionGrad {
    pub post: Vec<f64>,
    pub delta: Vec<f64>,
}

impl DownProjectionGrad {
    /// The `d_ff × d_model` gradient as a flat row-major vector.
    pub fn outer(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.post.len() * self.delta.len());
        for &p in &self.post {
            out.extend(self.delta.iter().map(|&d| p * d));
        }
        out
    }
}

impl ToyTransformer {
    /// Per-position gradients of each next-token loss with respect to the
    /// last layer's down-projection. Nothing downstream of that layer mixes
    /// positions, so each gradient only involves its own position.
    pub fn down_projection_token_grads(&self, tokens: &[usize]) -> Result<Vec<DownProjectionGrad>> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let (d, vocab) = (cfg.d_model, cfg.vocab_size);
        let pass = self.run_sequence(tokens, 0, Masking::Dense);
        let last = pass.layers.last().expect("at least one layer");
        let unembed_t = transpose(self.unembed.data(), d, vocab);
        let out_scale = self.readout_scale();
        let ff = cfg.d_ff;
        Ok((0..tokens.len() - 1)
            .map(|t| {
                let mut dlogits = pass.logits[t * vocab..(t + 1) * vocab].to_vec();
                softmax_in_place(&mut dlogits);
                dlogits[tokens[t + 1]] -= 1.0;
                dlogits.iter_mut().for_each(|g| *g *= out_scale);
                let mut dhf = vec![0.0; d];
                add_g_wt(&dlogits, 1, vocab, &unembed_t, d, &mut dhf);
                let mut delta = vec![0.0; d];
                rms_backward(&dhf, &pass.hf[t * d..(t + 1) * d], &pass.rmsf[t..t + 1], d, &mut delta);
                DownProjectionGrad {
                    post: last.post_used[t * ff..(t + 1) * ff].to_vec(),
                    delta,
                }
            })
            .collect())
    }
}

pub fn sample_batch(corpus: &[Vec<usize>], batch_size: usize, seq_len: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let usable: Vec<&Vec<usize>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    (0..batch_size)
        .map(|_| {
            let seq = usable[rng.index(usable.len())];
            let len = seq_len.min(seq.len());
            let start = rng.index(seq.len() - len + 1);
            seq[start..start + len].to_vec()
        })
        .collect()
}

/// Plain SGD on mean next-token cross-entropy. `steps == 0` returns the model
/// unchanged.
pub fn train_toy(
    model: &ToyTransformer,
    corpus: &[Vec<usize>],
    train: &TrainConfig,
) -> Result<(ToyTransformer, Vec<TrainStep>)> {
    let mut model = model.clone();
    let mut log = Vec::with_capacity(train.steps);
    if train.steps == 0 {
        return Ok((model, log));
    }
    if !corpus.iter().any(|s| s.len() >= 2) {
        return Err(LabError::Empty("training corpus"));
    }
    if !(train.lr > 0.0) || train.batch_size == 0 || train.seq_len < 2 {
        return Err(LabError::InvalidConfig(format!(
            "lr {} batch_size {} seq_len {}",
            train.lr, train.batch_size, train.seq_len
        )));
    }
    let seq_len = train.seq_len.min(model.config.max_seq);
    let mut rng = Rng::new(train.seed);
    for step in 0..train.steps {
        let batch = sample_batch(corpus, train.batch_size, seq_len, &mut rng);
        let (loss, grads) = model.loss_and_grad(&batch)?;
        model.sgd_step(&grads, train.lr);
        log.push(TrainStep { step, loss });
    }
    Ok((model, log))
}
