use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ActivationTrace;
use crate::numerics::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    PerTokenMax,
    PerNeuronMax,
    Global,
}

/// `|post_activation|` of one layer, scaled into [0, 1]. Rows or columns
/// whose maximum is zero stay zero.
pub fn activation_heatmap(trace: &ActivationTrace, layer: usize, normalization: Normalization) -> Result<Tensor2D> {
    let post = &trace.layer(layer)?.post_activation;
    let (t, n) = post.shape();
    let mut out = Tensor2D::zeros(t, n);
    for (o, a) in out.data_mut().iter_mut().zip(post.data()) {
        *o = a.abs();
    }
    let scale = |v: &mut f64, m: f64| *v = if m > 0.0 { (*v / m).min(1.0) } else { 0.0 };
    match normalization {
        Normalization::PerTokenMax => {
            for r in 0..t {
                let row = out.row_mut(r);
                let m = row.iter().copied().fold(0.0, f64::max);
                row.iter_mut().for_each(|v| scale(v, m));
            }
        }
        Normalization::PerNeuronMax => {
            let maxima: Vec<f64> = (0..n).map(|c| (0..t).map(|r| out.get(r, c)).fold(0.0, f64::max)).collect();
            for r in 0..t {
                for (v, &m) in out.row_mut(r).iter_mut().zip(&maxima) {
                    scale(v, m);
                }
            }
        }
        Normalization::Global => {
            let m = out.data().iter().copied().fold(0.0, f64::max);
            out.data_mut().iter_mut().for_each(|v| scale(v, m));
        }
    }
    Ok(out)
}

/// CSV with a `position,n0,n1,...` header and one six-decimal row per token.
pub fn heatmap_csv(heatmap: &Tensor2D) -> String {
    let mut s = String::with_capacity((heatmap.rows() + 1) * heatmap.cols() * 9);
    s.push_str("position");
    for c in 0..heatmap.cols() {
        write!(s, ",n{c}").expect("writing to a String");
    }
    s.push('\n');
    for r in 0..heatmap.rows() {
        write!(s, "{r}").expect("writing to a String");
        for v in heatmap.row(r) {
            write!(s, ",{v:.6}").expect("writing to a String");
        }
        s.push('\n');
    }
    s
}
