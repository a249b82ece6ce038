//! Model assembly: the co-attention classifier and the three baseline
//! fusion classifiers, over one [`ParamStore`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coattention::{AttentionMode, CoAttention, CoAttentionTrace};
use crate::data::{Example, ManifestHeader};
use crate::encoders::{ImageAdapter, TextEncoder};
use crate::fusion::{cross_entropy_logits, BaselineFusion, ClassifierHead, FusionMode};
use crate::params::{Bound, ParamStore};
use crate::tensor::{seeded_rng, Graph, Result, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Coattention,
    BaselineConcat,
    BaselineBilinear,
    BaselineDot,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::Coattention,
        ModelVariant::BaselineConcat,
        ModelVariant::BaselineBilinear,
        ModelVariant::BaselineDot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Coattention => "coattention",
            ModelVariant::BaselineConcat => "baseline_concat",
            ModelVariant::BaselineBilinear => "baseline_bilinear",
            ModelVariant::BaselineDot => "baseline_dot",
        }
    }

    fn fusion_mode(self) -> Option<FusionMode> {
        match self {
            ModelVariant::Coattention => None,
            ModelVariant::BaselineConcat => Some(FusionMode::Concat),
            ModelVariant::BaselineBilinear => Some(FusionMode::Bilinear),
            ModelVariant::BaselineDot => Some(FusionMode::Dot),
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown model variant {s:?}"))
    }
}

fn default_true() -> bool {
    true
}
fn default_width() -> usize {
    32
}

/// Architecture switches and widths. Data dimensions come from the
/// manifest header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub variant: ModelVariant,
    #[serde(default = "default_true")]
    pub use_weighted_layers: bool,
    #[serde(default = "default_true")]
    pub use_bilstm: bool,
    #[serde(default)]
    pub attention_mode: AttentionMode,
    /// LSTM hidden size per direction.
    #[serde(default = "default_width")]
    pub hidden: usize,
    /// Common co-attention width.
    #[serde(default = "default_width")]
    pub d: usize,
    /// Attention hidden width; defaults to `d`.
    #[serde(default)]
    pub att_k: Option<usize>,
    /// Classifier hidden width; defaults to the feature width.
    #[serde(default)]
    pub head_hidden: Option<usize>,
    /// Bilinear output width; defaults to `min(d_img, d_t)`.
    #[serde(default)]
    pub bilinear_width: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            variant: ModelVariant::Coattention,
            use_weighted_layers: true,
            use_bilstm: true,
            attention_mode: AttentionMode::Both,
            hidden: 32,
            d: 32,
            att_k: None,
            head_hidden: None,
            bilinear_width: None,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.hidden == 0 || self.d == 0 {
            return Err("hidden and d must be >= 1".into());
        }
        if [self.att_k, self.head_hidden, self.bilinear_width].contains(&Some(0)) {
            return Err("att_k, head_hidden and bilinear_width must be >= 1 when set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Arch {
    CoAttention {
        text: TextEncoder,
        image: ImageAdapter,
        coatt: CoAttention,
        head: ClassifierHead,
    },
    Baseline {
        fusion: BaselineFusion,
        head: ClassifierHead,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub header: ManifestHeader,
    pub store: ParamStore,
    arch: Arch,
}

/// Frozen baseline inputs: the first token of the top layer and the mean
/// over image regions, both `1×width`.
pub fn baseline_features(ex: &Example) -> Result<(Tensor, Tensor)> {
    let top = ex.text.slab(ex.text.shape()[0] - 1)?;
    let (n, d_t) = top.dims2()?;
    if n == 0 {
        return Err(TensorError::Index {
            op: "baseline_features",
            index: 0,
            extent: 0,
        });
    }
    let text = Tensor::row(top.data()[..d_t].to_vec());
    let (regions, d_img) = ex.image.dims2()?;
    let mut mean = vec![0.0; d_img];
    for r in 0..regions {
        for (m, v) in mean.iter_mut().zip(&ex.image.data()[r * d_img..(r + 1) * d_img]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= regions as f64);
    Ok((Tensor::row(mean), text))
}

impl Model {
    /// Fresh model with Xavier weights drawn from `seed`.
    pub fn new(spec: ModelSpec, header: ManifestHeader, seed: u64) -> std::result::Result<Self, String> {
        spec.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let arch = match spec.variant.fusion_mode() {
            None => {
                let text = TextEncoder::new(
                    &mut store,
                    header.l,
                    header.d_t,
                    spec.hidden,
                    spec.d,
                    spec.use_weighted_layers,
                    spec.use_bilstm,
                    &mut rng,
                );
                let image = ImageAdapter::new(&mut store, header.d_img, spec.d, &mut rng);
                let coatt = CoAttention::new(&mut store, spec.d, spec.att_k.unwrap_or(spec.d), &mut rng);
                let width = spec.attention_mode.feature_width(spec.d);
                let head = ClassifierHead::new(&mut store, width, spec.head_hidden.unwrap_or(width), header.k, &mut rng);
                Arch::CoAttention {
                    text,
                    image,
                    coatt,
                    head,
                }
            }
            Some(mode) => {
                let fusion = BaselineFusion::new(&mut store, mode, header.d_img, header.d_t, spec.bilinear_width, &mut rng);
                let width = fusion.output_width(header.d_img, header.d_t);
                let head = ClassifierHead::new(&mut store, width, spec.head_hidden.unwrap_or(width), header.k, &mut rng);
                Arch::Baseline { fusion, head }
            }
        };
        Ok(Model {
            spec,
            header,
            store,
            arch,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.header.k
    }

    fn check_dims(&self, ex: &Example) -> Result<()> {
        let h = &self.header;
        let ts = ex.text.shape();
        let ok_text = ts.len() == 3 && ts[0] == h.l && ts[1] >= 1 && ts[2] == h.d_t;
        let ok_image = ex.image.shape().len() == 2 && ex.image.shape()[1] == h.d_img && ex.image.shape()[0] >= 1;
        if ok_text && ok_image {
            Ok(())
        } else {
            Err(TensorError::Shape {
                op: "model input",
                left: [ts, ex.image.shape()].concat(),
                right: vec![h.l, h.d_t, h.d_img],
            })
        }
    }

    /// Pre-softmax scores `1×K` for one example, plus the co-attention
    /// output when the variant has one.
    fn forward(&self, g: &mut Graph, p: &Bound, ex: &Example) -> Result<(Var, Option<crate::coattention::CoAttentionOutput>)> {
        self.check_dims(ex)?;
        match &self.arch {
            Arch::CoAttention {
                text,
                image,
                coatt,
                head,
            } => {
                let stack = g.constant(&ex.text);
                let regions = g.constant(&ex.image);
                let t = text.forward(g, p, stack)?;
                let i = image.forward(g, p, regions)?;
                let out = coatt.forward(g, p, t, i, self.spec.attention_mode)?;
                Ok((head.logits(g, p, out.feature)?, Some(out)))
            }
            Arch::Baseline { fusion, head } => {
                let (img, txt) = baseline_features(ex)?;
                let img = g.constant(&img);
                let txt = g.constant(&txt);
                let f = fusion.forward(g, p, img, txt)?;
                Ok((head.logits(g, p, f)?, None))
            }
        }
    }

    /// Builds the loss on `g` with trainable parameter leaves.
    pub fn loss(&self, g: &mut Graph, ex: &Example) -> Result<(Var, Bound)> {
        let p = self.store.bind(g, true);
        let (z, _) = self.forward(g, &p, ex)?;
        Ok((cross_entropy_logits(g, z, ex.label())?, p))
    }

    /// Loss value and per-parameter gradients (store order).
    pub fn loss_and_grads(&self, ex: &Example) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let (loss, p) = self.loss(&mut g, ex)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        Ok((value, self.store.collect_grads(&g, &p)))
    }

    /// Class probabilities.
    pub fn predict(&self, ex: &Example) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let (z, _) = self.forward(&mut g, &p, ex)?;
        let probs = g.softmax(z, 1)?;
        Ok(g.value(probs).data().to_vec())
    }

    /// Attention intermediates for inspection; `None` for baselines.
    pub fn attention_trace(&self, ex: &Example) -> Result<Option<CoAttentionTrace>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let (_, out) = self.forward(&mut g, &p, ex)?;
        Ok(out.map(|o| o.trace(&g)))
    }
}
