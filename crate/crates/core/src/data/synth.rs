//! Deterministic stand-in for pretrained text and image features.
//!
//! Each class gets a unit-norm prototype in `R^{d_sig}`. The first
//! `round(rho · d_sig)` prototype coordinates are written only into text
//! stacks (dims `0..n_text` of the upper half of the layers, at a quarter of
//! the tokens); the rest only into image features (dims `0..d_sig − n_text`
//! of a quarter of the regions). Everything else is Gaussian noise.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{BlobRef, DataError, Example, ItemRecord, ManifestHeader, MANIFEST_VERSION};
use crate::tensor::{normal, seeded_rng, Rng, Tensor};

fn default_p_nodesc() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub k: usize,
    pub l: usize,
    pub d_t: usize,
    pub d_img: usize,
    pub n_regions: usize,
    /// Inclusive token-count range before the no-description halving.
    pub n_range: [usize; 2],
    pub d_sig: usize,
    pub rho: f64,
    pub sigma: f64,
    #[serde(default = "default_p_nodesc")]
    pub p_nodesc: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            k: 8,
            l: 4,
            d_t: 32,
            d_img: 48,
            n_regions: 16,
            n_range: [6, 24],
            d_sig: 4,
            rho: 0.5,
            sigma: 0.1,
            p_nodesc: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.p_nodesc) {
            return bad(format!("p_nodesc must be in [0, 1], got {}", self.p_nodesc));
        }
        if self.d_sig == 0 || self.d_sig > self.d_t.min(self.d_img) {
            return bad(format!(
                "d_sig = {} must be in 1..=min(d_t, d_img) = {}",
                self.d_sig,
                self.d_t.min(self.d_img)
            ));
        }
        if self.l == 0 || self.n_regions == 0 {
            return bad("l and n_regions must be >= 1".into());
        }
        let [lo, hi] = self.n_range;
        if lo == 0 || lo > hi {
            return bad(format!("n_range {:?} must satisfy 1 <= min <= max", self.n_range));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        Ok(())
    }

    /// Signal coordinates carried by text.
    pub fn n_text_dims(&self) -> usize {
        (self.rho * self.d_sig as f64).round() as usize
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            format_version: MANIFEST_VERSION,
            k: self.k,
            l: self.l,
            d_t: self.d_t,
            d_img: self.d_img,
            n_regions: self.n_regions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub header: ManifestHeader,
    /// `k × d_sig` unit-norm class prototypes.
    pub prototypes: Tensor,
    pub examples: Vec<Example>,
}

fn round_f32(mut t: Tensor) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    t
}

fn prototypes(cfg: &SyntheticConfig, rng: &mut Rng) -> Tensor {
    let mut p = normal(&[cfg.k, cfg.d_sig], 0.0, 1.0, rng);
    for row in p.data_mut().chunks_mut(cfg.d_sig) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    p
}

/// Generates `count` items with labels assigned round-robin over classes.
///
/// Values are rounded to `f32` precision so in-memory data equals what a
/// default (`f32`) blob round trip yields.
pub fn synth_generate(cfg: &SyntheticConfig, count: usize) -> Result<SyntheticData, DataError> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let protos = prototypes(cfg, &mut rng);
    let n_text = cfg.n_text_dims();
    let n_image = cfg.d_sig - n_text;
    let top_layers = cfg.l.div_ceil(2)..cfg.l;
    let [lo, hi] = cfg.n_range;

    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % cfg.k;
        let u = &protos.data()[label * cfg.d_sig..(label + 1) * cfg.d_sig];

        let n = rng.random_range(lo..=hi);
        let mut text = normal(&[cfg.l, n, cfg.d_t], 0.0, cfg.sigma, &mut rng);
        let positions = index::sample(&mut rng, n, n.div_ceil(4));
        {
            let data = text.data_mut();
            for layer in top_layers.clone() {
                for pos in positions.iter() {
                    let base = (layer * n + pos) * cfg.d_t;
                    for (j, uj) in u[..n_text].iter().enumerate() {
                        data[base + j] += uj;
                    }
                }
            }
        }

        let mut image = normal(&[cfg.n_regions, cfg.d_img], 0.0, cfg.sigma, &mut rng);
        let regions = index::sample(&mut rng, cfg.n_regions, cfg.n_regions.div_ceil(4));
        {
            let data = image.data_mut();
            for r in regions.iter() {
                for (j, uj) in u[n_text..].iter().enumerate().take(n_image) {
                    data[r * cfg.d_img + j] += uj;
                }
            }
        }

        // No-description items keep only the leading half of their tokens,
        // so signal placed in the dropped half is lost.
        let has_description = rng.random::<f64>() >= cfg.p_nodesc;
        let (text, n) = if has_description {
            (text, n)
        } else {
            let m = (n / 2).max(1);
            let mut kept = Vec::with_capacity(cfg.l * m * cfg.d_t);
            for layer in text.data().chunks(n * cfg.d_t) {
                kept.extend_from_slice(&layer[..m * cfg.d_t]);
            }
            (Tensor::new(vec![cfg.l, m, cfg.d_t], kept).expect("shape matches"), m)
        };

        let record = ItemRecord {
            id: format!("syn-{i:06}"),
            label,
            title: format!("synthetic product {i}"),
            description: has_description.then(|| format!("synthetic description for product {i}")),
            has_description,
            text_ref: BlobRef {
                path: String::new(),
                offset: 0,
            },
            image_ref: BlobRef {
                path: String::new(),
                offset: 0,
            },
            text_len: n,
        };
        examples.push(Example {
            record,
            text: round_f32(text),
            image: round_f32(image),
        });
    }
    Ok(SyntheticData {
        header: cfg.header(),
        prototypes: protos,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_configs() {
        let base = SyntheticConfig::default();
        for cfg in [
            SyntheticConfig { d_sig: 40, ..base.clone() },
            SyntheticConfig { rho: 1.5, ..base.clone() },
            SyntheticConfig { k: 1, ..base.clone() },
            SyntheticConfig { n_range: [5, 2], ..base.clone() },
        ] {
            assert!(synth_generate(&cfg, 4).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SyntheticConfig::default();
        let a = synth_generate(&cfg, 20).unwrap();
        assert_eq!(a, synth_generate(&cfg, 20).unwrap());
        let b = synth_generate(&SyntheticConfig { seed: 1, ..cfg }, 20).unwrap();
        assert_ne!(a.examples[0].text, b.examples[0].text);
    }

    #[test]
    fn shapes_lengths_and_flags() {
        let cfg = SyntheticConfig {
            n_range: [5, 50],
            ..Default::default()
        };
        let d = synth_generate(&cfg, 400).unwrap();
        let mut nodesc = 0;
        for ex in &d.examples {
            let n = ex.record.text_len;
            assert_eq!(ex.text.shape(), &[cfg.l, n, cfg.d_t]);
            assert_eq!(ex.image.shape(), &[cfg.n_regions, cfg.d_img]);
            assert_eq!(ex.record.has_description, ex.record.description.is_some());
            if ex.record.has_description {
                assert!((5..=50).contains(&n));
            } else {
                nodesc += 1;
                assert!((2..=25).contains(&n));
            }
        }
        // p_nodesc = 0.3 over 400 draws
        assert!((80..=160).contains(&nodesc), "{nodesc}");
    }

    #[test]
    fn noiseless_signal_lands_in_disjoint_slices() {
        let cfg = SyntheticConfig {
            sigma: 0.0,
            d_sig: 6,
            rho: 0.5,
            ..Default::default()
        };
        let d = synth_generate(&cfg, 16).unwrap();
        for ex in &d.examples {
            let u = &d.prototypes.data()[ex.label() * 6..ex.label() * 6 + 6];
            // lower layers carry nothing
            assert!(ex.text.slab(0).unwrap().data().iter().all(|v| *v == 0.0));
            let top = ex.text.slab(cfg.l - 1).unwrap();
            let n = ex.record.text_len;
            let hit_tokens = (0..n).filter(|t| top.at2(*t, 0) != 0.0).count();
            if ex.record.has_description {
                assert_eq!(hit_tokens, n.div_ceil(4));
            } else {
                // truncated from 2n or 2n + 1 tokens
                assert!(hit_tokens <= (2 * n + 1).div_ceil(4));
            }
            for t in 0..n {
                for j in 3..cfg.d_t {
                    assert_eq!(top.at2(t, j), 0.0);
                }
            }
            let hit_regions: Vec<usize> = (0..cfg.n_regions).filter(|r| ex.image.at2(*r, 0) != 0.0).collect();
            assert_eq!(hit_regions.len(), 4);
            for r in hit_regions {
                for j in 0..3 {
                    assert_eq!(ex.image.at2(r, j), u[3 + j] as f32 as f64);
                }
            }
        }
    }
}
