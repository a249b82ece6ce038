//! Classifier head, loss, and the three baseline fusion functions.
//!
//! Vectors are `1×n` row matrices on the graph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::Linear;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{xavier_uniform, Graph, Result, Rng, Tensor, TensorError, Var};

/// `x_img ⊕ x_txt`.
pub fn fuse_concat(g: &mut Graph, x_img: Var, x_txt: Var) -> Result<Var> {
    g.concat(x_img, x_txt, 1)
}

/// `out_k = x_imgᵀ A_k x_txt + b_k`, with `A` stored as `(B·d_i) × d_t`
/// (slice `A_k` is rows `k·d_i .. (k+1)·d_i`).
pub fn fuse_bilinear(g: &mut Graph, x_img: Var, x_txt: Var, a: Var, b: Var) -> Result<Var> {
    let (_, d_i) = g.value(x_img).dims2()?;
    let (rows, d_t) = g.value(a).dims2()?;
    let out_width = g.value(b).len();
    if rows != out_width * d_i || g.value(x_txt).dims2()?.1 != d_t {
        return Err(TensorError::Shape {
            op: "fuse_bilinear",
            left: vec![out_width, d_i, g.value(x_txt).len()],
            right: g.shape(a).to_vec(),
        });
    }
    let xt = g.transpose(x_txt)?;
    let ax = g.matmul(a, xt)?;
    let ax = g.reshape(ax, &[out_width, d_i])?;
    let xi = g.transpose(x_img)?;
    let col = g.matmul(ax, xi)?;
    let row = g.transpose(col)?;
    g.add_row(row, b)
}

/// `x_img ⊙ (P x_txt + b)` with `P: d_i × d_t`.
pub fn fuse_dot(g: &mut Graph, x_img: Var, x_txt: Var, p: Var, b: Var) -> Result<Var> {
    let pt = g.transpose(p)?;
    let proj = g.affine(x_txt, pt, b)?;
    g.mul(x_img, proj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Concat,
    Bilinear,
    Dot,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Bilinear => "bilinear",
            FusionMode::Dot => "dot",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "bilinear" => Ok(FusionMode::Bilinear),
            "dot" => Ok(FusionMode::Dot),
            other => Err(format!("unknown fusion mode {other:?}")),
        }
    }
}

/// Mode-specific fusion parameters; only the selected mode's exist.
#[derive(Debug, Clone)]
pub enum BaselineFusion {
    Concat,
    Bilinear { a: ParamId, b: ParamId, width: usize },
    Dot { p: ParamId, b: ParamId },
}

impl BaselineFusion {
    /// `bilinear_width` defaults to `min(d_i, d_t)`.
    pub fn new(
        store: &mut ParamStore,
        mode: FusionMode,
        d_i: usize,
        d_t: usize,
        bilinear_width: Option<usize>,
        rng: &mut Rng,
    ) -> Self {
        match mode {
            FusionMode::Concat => BaselineFusion::Concat,
            FusionMode::Bilinear => {
                let width = bilinear_width.unwrap_or(d_i.min(d_t));
                let a = xavier_uniform(&[width, d_i, d_t], rng)
                    .reshape(vec![width * d_i, d_t])
                    .expect("same element count");
                BaselineFusion::Bilinear {
                    a: store.add("fuse.a", ParamGroup::Base, a),
                    b: store.add("fuse.b", ParamGroup::Base, Tensor::zeros(&[width])),
                    width,
                }
            }
            FusionMode::Dot => BaselineFusion::Dot {
                p: store.add("fuse.p", ParamGroup::Base, xavier_uniform(&[d_i, d_t], rng)),
                b: store.add("fuse.b", ParamGroup::Base, Tensor::zeros(&[d_i])),
            },
        }
    }

    pub fn mode(&self) -> FusionMode {
        match self {
            BaselineFusion::Concat => FusionMode::Concat,
            BaselineFusion::Bilinear { .. } => FusionMode::Bilinear,
            BaselineFusion::Dot { .. } => FusionMode::Dot,
        }
    }

    pub fn output_width(&self, d_i: usize, d_t: usize) -> usize {
        match self {
            BaselineFusion::Concat => d_i + d_t,
            BaselineFusion::Bilinear { width, .. } => *width,
            BaselineFusion::Dot { .. } => d_i,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x_img: Var, x_txt: Var) -> Result<Var> {
        match self {
            BaselineFusion::Concat => fuse_concat(g, x_img, x_txt),
            BaselineFusion::Bilinear { a, b, .. } => fuse_bilinear(g, x_img, x_txt, p[*a], p[*b]),
            BaselineFusion::Dot { p: proj, b } => fuse_dot(g, x_img, x_txt, p[*proj], p[*b]),
        }
    }
}

/// Two affine layers with a tanh between them; `softmax` is applied by
/// [`ClassifierHead::classify`] or folded into the loss.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, feature: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        ClassifierHead {
            hidden: Linear::new(store, "head.hidden", ParamGroup::Base, feature, hidden, rng),
            out: Linear::new(store, "head.out", ParamGroup::Base, hidden, classes, rng),
        }
    }

    /// Pre-softmax scores, `1×K`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<Var> {
        let h = self.hidden.forward(g, p, feature)?;
        let h = g.tanh(h);
        self.out.forward(g, p, h)
    }

    pub fn classify(&self, g: &mut Graph, p: &Bound, feature: Var) -> Result<Var> {
        let z = self.logits(g, p, feature)?;
        g.softmax(z, 1)
    }
}

/// `−ln probs[label]`, floored at the smallest positive double so an
/// underflowed probability gives a large finite loss.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or(TensorError::Index {
        op: "cross_entropy",
        index: label,
        extent: probs.len(),
    })?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// `−log_softmax(logits)[label]` on the graph, the training loss.
pub fn cross_entropy_logits(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let width = g.value(logits).len();
    if label >= width {
        return Err(TensorError::Index {
            op: "cross_entropy",
            index: label,
            extent: width,
        });
    }
    let lp = g.log_softmax(logits, g.shape(logits).len() - 1)?;
    let picked = g.select(lp, label)?;
    Ok(g.scale(picked, -1.0))
}
