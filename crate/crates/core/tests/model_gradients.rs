//! Backpropagation through the toy transformer against central differences.

use dalab::model::{FfnKind, ModelConfig, ToyTransformer};
use dalab::numerics::finite_diff_grad;

fn tiny(kind: FfnKind) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 12,
        n_heads: 2,
        n_layers: 2,
        vocab_size: 13,
        ffn_kind: kind,
        max_seq: 8,
        seed: 42,
    }
}

fn check_kind(kind: FfnKind) {
    let model = ToyTransformer::init(&tiny(kind)).unwrap();
    let batch = vec![vec![1, 5, 2, 7, 7, 3], vec![4, 0, 12]];
    let (_, grads) = model.loss_and_grad(&batch).unwrap();
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let analytic = grads.named_tensors()[ti].1.data().to_vec();
        let base = model.named_tensors()[ti].1.data().to_vec();
        // Probe a spread of coordinates per tensor.
        let probes: Vec<usize> = (0..base.len()).step_by((base.len() / 7).max(1)).collect();
        let numeric = finite_diff_grad(
            |x| {
                let mut m = model.clone();
                let slot = m.named_tensors()[ti].1.clone();
                let mut data = slot.data().to_vec();
                for (k, &i) in probes.iter().enumerate() {
                    data[i] = x[k];
                }
                set_tensor(&mut m, ti, data);
                m.loss_and_grad(&batch).unwrap().0
            },
            &probes.iter().map(|&i| base[i]).collect::<Vec<_>>(),
            1e-5,
        )
        .unwrap();
        for (k, &i) in probes.iter().enumerate() {
            let (a, n) = (analytic[i], numeric[k]);
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < 1e-5 || (a - n).abs() < 1e-9, "{name}[{i}]: analytic {a} numeric {n}");
        }
    }
}

fn set_tensor(m: &mut ToyTransformer, index: usize, data: Vec<f64>) {
    let mut i = 0;
    let mut visit = |t: &mut dalab::numerics::Tensor2D| {
        if i == index {
            t.data_mut().copy_from_slice(&data);
        }
        i += 1;
    };
    visit(&mut m.tok_emb);
    visit(&mut m.pos_emb);
    for l in &mut m.layers {
        visit(&mut l.wq);
        visit(&mut l.wk);
        visit(&mut l.wv);
        visit(&mut l.wo);
        visit(&mut l.w_gate);
        if let Some(up) = &mut l.w_up {
            visit(up);
        }
        visit(&mut l.w_down);
    }
    visit(&mut m.unembed);
}

#[test]
fn relu_backprop_matches_finite_differences() {
    check_kind(FfnKind::Relu);
}

#[test]
fn swiglu_backprop_matches_finite_differences() {
    check_kind(FfnKind::Swiglu);
}

#[test]
fn per_token_down_projection_grads_sum_to_full_gradient() {
    for kind in [FfnKind::Relu, FfnKind::Swiglu] {
        let model = ToyTransformer::init(&tiny(kind)).unwrap();
        let seq = vec![3, 9, 9, 1, 6];
        let per_token = model.down_projection_token_grads(&seq).unwrap();
        assert_eq!(per_token.len(), seq.len() - 1);
        let (_, grads) = model.loss_and_grad(&[seq.clone()]).unwrap();
        let full = grads.layers.last().unwrap().w_down.data().to_vec();
        let mut summed = vec![0.0; full.len()];
        for g in &per_token {
            for (s, v) in summed.iter_mut().zip(g.outer()) {
                *s += v / per_token.len() as f64;
            }
        }
        for (a, b) in summed.iter().zip(&full) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{kind:?}: {a} vs {b}");
        }
    }
}
