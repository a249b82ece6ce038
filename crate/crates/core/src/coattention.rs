//! Parallel co-attention between token features `T: s×d` and region
//! features `I: d×N`.
//!
//! ```text
//! C   = tanh(T W_b I)                       s×N
//! H_i = tanh(W_V I + (W_S Tᵀ) C)            k×N
//! H_t = tanh(W_S Tᵀ + (W_V I) Cᵀ)           k×s
//! a_i = softmax(w_hi H_i),  a_t = softmax(w_ht H_t)
//! i′  = a_i Iᵀ,             t′  = a_t T
//! ```
//!
//! Attention rows (`a_i`, `a_t`) and attended vectors are kept as `1×n`
//! row matrices so they feed the classifier head without reshaping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{xavier_uniform, Graph, Result, Rng, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Both,
    ImageOnly,
    TextOnly,
}

impl AttentionMode {
    /// Classifier feature width for common width `d`.
    pub fn feature_width(self, d: usize) -> usize {
        match self {
            AttentionMode::Both => 2 * d,
            _ => d,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Both => "both",
            AttentionMode::ImageOnly => "image_only",
            AttentionMode::TextOnly => "text_only",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(AttentionMode::Both),
            "image_only" => Ok(AttentionMode::ImageOnly),
            "text_only" => Ok(AttentionMode::TextOnly),
            other => Err(format!("unknown attention mode {other:?} (expected both, image_only or text_only)")),
        }
    }
}

/// `C = tanh(T · W_b · I)`.
pub fn affinity(g: &mut Graph, t: Var, i: Var, w_b: Var) -> Result<Var> {
    let tw = g.matmul(t, w_b)?;
    let c = g.matmul(tw, i)?;
    Ok(g.tanh(c))
}

/// Attention maps `(H_i, H_t)`. Either side can be skipped.
pub fn attention_maps(
    g: &mut Graph,
    t: Var,
    i: Var,
    c: Var,
    w_v: Var,
    w_s: Var,
    mode: AttentionMode,
) -> Result<(Option<Var>, Option<Var>)> {
    let vi = g.matmul(w_v, i)?;
    let tt = g.transpose(t)?;
    let st = g.matmul(w_s, tt)?;
    let h_i = if mode != AttentionMode::TextOnly {
        let cross = g.matmul(st, c)?;
        let z = g.add(vi, cross)?;
        Some(g.tanh(z))
    } else {
        None
    };
    let h_t = if mode != AttentionMode::ImageOnly {
        let ct = g.transpose(c)?;
        let cross = g.matmul(vi, ct)?;
        let z = g.add(st, cross)?;
        Some(g.tanh(z))
    } else {
        None
    };
    Ok((h_i, h_t))
}

/// `softmax(w · H)` over the columns of `H`; `w` is `1×k`.
pub fn attention_probs(g: &mut Graph, h: Var, w: Var) -> Result<Var> {
    let scores = g.matmul(w, h)?;
    g.softmax(scores, 1)
}

/// `i′ = a_i · Iᵀ` (`1×d`).
pub fn attend_image(g: &mut Graph, i: Var, a_i: Var) -> Result<Var> {
    let it = g.transpose(i)?;
    g.matmul(a_i, it)
}

/// `t′ = a_t · T` (`1×d`).
pub fn attend_text(g: &mut Graph, t: Var, a_t: Var) -> Result<Var> {
    g.matmul(a_t, t)
}

/// Graph handles for the co-attention weights.
#[derive(Debug, Clone, Copy)]
pub struct CoAttentionVars {
    pub w_b: Var,
    pub w_v: Var,
    pub w_s: Var,
    pub w_hi: Var,
    pub w_ht: Var,
}

/// Every intermediate of one co-attention pass, as graph handles.
#[derive(Debug, Clone, Copy)]
pub struct CoAttentionOutput {
    pub mode: AttentionMode,
    pub c: Var,
    pub h_i: Option<Var>,
    pub h_t: Option<Var>,
    pub a_i: Option<Var>,
    pub a_t: Option<Var>,
    pub i_vec: Option<Var>,
    pub t_vec: Option<Var>,
    /// `1 × feature_width`, the classifier input.
    pub feature: Var,
}

/// Concrete values of a [`CoAttentionOutput`], detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAttentionTrace {
    pub mode: AttentionMode,
    pub c: Tensor,
    pub h_i: Option<Tensor>,
    pub h_t: Option<Tensor>,
    pub a_i: Option<Vec<f64>>,
    pub a_t: Option<Vec<f64>>,
    pub i_vec: Option<Vec<f64>>,
    pub t_vec: Option<Vec<f64>>,
    pub feature: Vec<f64>,
}

impl CoAttentionOutput {
    pub fn trace(&self, g: &Graph) -> CoAttentionTrace {
        let vec = |v: Option<Var>| v.map(|v| g.value(v).data().to_vec());
        CoAttentionTrace {
            mode: self.mode,
            c: g.value(self.c).clone(),
            h_i: self.h_i.map(|v| g.value(v).clone()),
            h_t: self.h_t.map(|v| g.value(v).clone()),
            a_i: vec(self.a_i),
            a_t: vec(self.a_t),
            i_vec: vec(self.i_vec),
            t_vec: vec(self.t_vec),
            feature: g.value(self.feature).data().to_vec(),
        }
    }
}

/// Full co-attention pass. The affinity is computed in every mode; only
/// the attention branch feeding the classifier is restricted.
pub fn coattend(g: &mut Graph, t: Var, i: Var, p: &CoAttentionVars, mode: AttentionMode) -> Result<CoAttentionOutput> {
    let (s, d) = g.value(t).dims2()?;
    let (d_i, _) = g.value(i).dims2()?;
    if d != d_i || s == 0 {
        return Err(TensorError::Shape {
            op: "coattend",
            left: g.shape(t).to_vec(),
            right: g.shape(i).to_vec(),
        });
    }
    let c = affinity(g, t, i, p.w_b)?;
    let (h_i, h_t) = attention_maps(g, t, i, c, p.w_v, p.w_s, mode)?;
    let a_i = h_i.map(|h| attention_probs(g, h, p.w_hi)).transpose()?;
    let a_t = h_t.map(|h| attention_probs(g, h, p.w_ht)).transpose()?;
    let i_vec = a_i.map(|a| attend_image(g, i, a)).transpose()?;
    let t_vec = a_t.map(|a| attend_text(g, t, a)).transpose()?;
    let feature = match (i_vec, t_vec) {
        (Some(iv), Some(tv)) => g.concat(iv, tv, 1)?,
        (Some(iv), None) => iv,
        (None, Some(tv)) => tv,
        (None, None) => unreachable!("every mode attends to at least one side"),
    };
    Ok(CoAttentionOutput {
        mode,
        c,
        h_i,
        h_t,
        a_i,
        a_t,
        i_vec,
        t_vec,
        feature,
    })
}

/// Co-attention weights in a [`ParamStore`]. Shapes: `W_b d×d`,
/// `W_V, W_S k×d`, `w_hi, w_ht 1×k`.
#[derive(Debug, Clone)]
pub struct CoAttention {
    pub w_b: ParamId,
    pub w_v: ParamId,
    pub w_s: ParamId,
    pub w_hi: ParamId,
    pub w_ht: ParamId,
}

impl CoAttention {
    pub fn new(store: &mut ParamStore, d: usize, k: usize, rng: &mut Rng) -> Self {
        let mut add = |name: &str, shape: &[usize]| store.add(name, ParamGroup::Base, xavier_uniform(shape, rng));
        CoAttention {
            w_b: add("coatt.w_b", &[d, d]),
            w_v: add("coatt.w_v", &[k, d]),
            w_s: add("coatt.w_s", &[k, d]),
            w_hi: add("coatt.w_hi", &[1, k]),
            w_ht: add("coatt.w_ht", &[1, k]),
        }
    }

    pub fn vars(&self, p: &Bound) -> CoAttentionVars {
        CoAttentionVars {
            w_b: p[self.w_b],
            w_v: p[self.w_v],
            w_s: p[self.w_s],
            w_hi: p[self.w_hi],
            w_ht: p[self.w_ht],
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, t: Var, i: Var, mode: AttentionMode) -> Result<CoAttentionOutput> {
        coattend(g, t, i, &self.vars(p), mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, normal, seeded_rng};

    struct Case {
        t: Tensor,
        i: Tensor,
        w_b: Tensor,
        w_v: Tensor,
        w_s: Tensor,
        w_hi: Tensor,
        w_ht: Tensor,
    }

    fn case(s: usize, n: usize, d: usize, k: usize, seed: u64) -> Case {
        let mut rng = seeded_rng(seed);
        Case {
            t: normal(&[s, d], 0.0, 1.0, &mut rng),
            i: normal(&[d, n], 0.0, 1.0, &mut rng),
            w_b: normal(&[d, d], 0.0, 0.7, &mut rng),
            w_v: normal(&[k, d], 0.0, 0.7, &mut rng),
            w_s: normal(&[k, d], 0.0, 0.7, &mut rng),
            w_hi: normal(&[1, k], 0.0, 1.0, &mut rng),
            w_ht: normal(&[1, k], 0.0, 1.0, &mut rng),
        }
    }

    fn run(c: &Case, mode: AttentionMode) -> CoAttentionTrace {
        let mut g = Graph::new();
        let t = g.constant(&c.t);
        let i = g.constant(&c.i);
        let p = CoAttentionVars {
            w_b: g.constant(&c.w_b),
            w_v: g.constant(&c.w_v),
            w_s: g.constant(&c.w_s),
            w_hi: g.constant(&c.w_hi),
            w_ht: g.constant(&c.w_ht),
        };
        coattend(&mut g, t, i, &p, mode).unwrap().trace(&g)
    }

    #[test]
    fn scalar_affinity() {
        let c = Case {
            t: Tensor::from_rows(&[vec![2.0]]).unwrap(),
            i: Tensor::from_rows(&[vec![3.0]]).unwrap(),
            w_b: Tensor::eye(1),
            w_v: Tensor::zeros(&[1, 1]),
            w_s: Tensor::zeros(&[1, 1]),
            w_hi: Tensor::zeros(&[1, 1]),
            w_ht: Tensor::zeros(&[1, 1]),
        };
        let tr = run(&c, AttentionMode::Both);
        assert!((tr.c.data()[0] - 0.9999877116507956).abs() < 1e-12);
        assert_eq!(tr.a_i, Some(vec![1.0]));
        assert_eq!(tr.a_t, Some(vec![1.0]));
        assert_eq!(tr.feature, vec![3.0, 2.0]);
    }

    #[test]
    fn zero_weights_decouple() {
        let mut c = case(3, 4, 2, 2, 0);
        c.w_b = Tensor::zeros(&[2, 2]);
        let tr = run(&c, AttentionMode::Both);
        assert!(tr.c.data().iter().all(|v| *v == 0.0));
        // with C = 0 the cross terms vanish
        let hi = c.w_v.matmul(&c.i).unwrap();
        let ht = c.w_s.matmul(&c.t.transpose().unwrap()).unwrap();
        for (a, b) in tr.h_i.unwrap().data().iter().zip(hi.data()) {
            assert_eq!(*a, b.tanh());
        }
        for (a, b) in tr.h_t.unwrap().data().iter().zip(ht.data()) {
            assert_eq!(*a, b.tanh());
        }

        c.w_hi = Tensor::zeros(&[1, 2]);
        let tr = run(&c, AttentionMode::Both);
        assert!(tr.a_i.unwrap().iter().all(|a| (a - 0.25).abs() < 1e-15));
        let mean: Vec<f64> = (0..2).map(|r| (0..4).map(|n| c.i.at2(r, n)).sum::<f64>() / 4.0).collect();
        for (a, b) in tr.i_vec.unwrap().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_two_scores() {
        // one-region-per-score setup: H_i row = [1, 2] through w_hi = [1]
        let mut g = Graph::new();
        let h = g.constant(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.constant(&Tensor::eye(1));
        let a = attention_probs(&mut g, h, w).unwrap();
        let a = g.value(a).data();
        assert!((a[0] - 0.2689414).abs() < 1e-7);
        assert!((a[1] - 0.7310586).abs() < 1e-7);
    }

    /// Scalar-loop expansion of every equation.
    fn brute_force(c: &Case) -> CoAttentionTrace {
        let (s, d) = c.t.dims2().unwrap();
        let n = c.i.dims2().unwrap().1;
        let k = c.w_v.dims2().unwrap().0;
        let mut cm = vec![vec![0.0; n]; s];
        for a in 0..s {
            for b in 0..n {
                let mut acc = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        acc += c.t.at2(a, p) * c.w_b.at2(p, q) * c.i.at2(q, b);
                    }
                }
                cm[a][b] = acc.tanh();
            }
        }
        let vi = |r: usize, col: usize| (0..d).map(|p| c.w_v.at2(r, p) * c.i.at2(p, col)).sum::<f64>();
        let st = |r: usize, col: usize| (0..d).map(|p| c.w_s.at2(r, p) * c.t.at2(col, p)).sum::<f64>();
        let mut hi = vec![vec![0.0; n]; k];
        let mut ht = vec![vec![0.0; s]; k];
        for r in 0..k {
            for b in 0..n {
                let cross: f64 = (0..s).map(|a| st(r, a) * cm[a][b]).sum();
                hi[r][b] = (vi(r, b) + cross).tanh();
            }
            for a in 0..s {
                let cross: f64 = (0..n).map(|b| vi(r, b) * cm[a][b]).sum();
                ht[r][a] = (st(r, a) + cross).tanh();
            }
        }
        let softmax = |x: Vec<f64>| {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect::<Vec<f64>>()
        };
        let ai = softmax((0..n).map(|b| (0..k).map(|r| c.w_hi.data()[r] * hi[r][b]).sum()).collect());
        let at = softmax((0..s).map(|a| (0..k).map(|r| c.w_ht.data()[r] * ht[r][a]).sum()).collect());
        let iv: Vec<f64> = (0..d).map(|p| (0..n).map(|b| ai[b] * c.i.at2(p, b)).sum()).collect();
        let tv: Vec<f64> = (0..d).map(|p| (0..s).map(|a| at[a] * c.t.at2(a, p)).sum()).collect();
        CoAttentionTrace {
            mode: AttentionMode::Both,
            c: Tensor::from_rows(&cm).unwrap(),
            h_i: Some(Tensor::from_rows(&hi).unwrap()),
            h_t: Some(Tensor::from_rows(&ht).unwrap()),
            feature: iv.iter().chain(&tv).copied().collect(),
            a_i: Some(ai),
            a_t: Some(at),
            i_vec: Some(iv),
            t_vec: Some(tv),
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        for (s, n, d, k, seed) in [(2, 3, 2, 2, 1), (4, 5, 3, 2, 2), (1, 2, 3, 4, 3)] {
            let c = case(s, n, d, k, seed);
            let got = run(&c, AttentionMode::Both);
            let want = brute_force(&c);
            assert!(close(got.c.data(), want.c.data()));
            assert!(close(got.h_i.as_ref().unwrap().data(), want.h_i.as_ref().unwrap().data()));
            assert!(close(got.h_t.as_ref().unwrap().data(), want.h_t.as_ref().unwrap().data()));
            assert!(close(&got.feature, &want.feature));
            assert!((got.a_i.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((got.a_t.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_select_feature() {
        let c = case(3, 4, 2, 2, 4);
        let both = run(&c, AttentionMode::Both);
        let img = run(&c, AttentionMode::ImageOnly);
        let txt = run(&c, AttentionMode::TextOnly);
        assert_eq!(both.feature.len(), 4);
        assert_eq!(img.feature, both.i_vec.clone().unwrap());
        assert_eq!(txt.feature, both.t_vec.clone().unwrap());
        assert!(img.a_t.is_none() && txt.a_i.is_none());
        assert_eq!(img.c, both.c);

        let mut c2 = case(3, 4, 2, 2, 4);
        c2.w_ht = Tensor::row(vec![9.0, -9.0]);
        assert_eq!(run(&c2, AttentionMode::ImageOnly).feature, img.feature);
    }

    #[test]
    fn shape_errors() {
        let mut c = case(3, 4, 2, 2, 5);
        c.i = Tensor::zeros(&[3, 4]);
        let mut g = Graph::new();
        let t = g.constant(&c.t);
        let i = g.constant(&c.i);
        let z = g.constant(&Tensor::zeros(&[2, 2]));
        let w = g.constant(&Tensor::zeros(&[1, 2]));
        let p = CoAttentionVars {
            w_b: z,
            w_v: z,
            w_s: z,
            w_hi: w,
            w_ht: w,
        };
        assert!(coattend(&mut g, t, i, &p, AttentionMode::Both).is_err());
    }

    fn values(c: &Case) -> Vec<Tensor> {
        vec![
            c.t.clone(),
            c.i.clone(),
            c.w_b.clone(),
            c.w_v.clone(),
            c.w_s.clone(),
            c.w_hi.clone(),
            c.w_ht.clone(),
        ]
    }

    fn loss(g: &mut Graph, v: &[Var], mode: AttentionMode, probe: &Tensor) -> Result<Var> {
        let p = CoAttentionVars {
            w_b: v[2],
            w_v: v[3],
            w_s: v[4],
            w_hi: v[5],
            w_ht: v[6],
        };
        let out = coattend(g, v[0], v[1], &p, mode)?;
        let w = g.constant(probe);
        let prod = g.mul(out.feature, w)?;
        Ok(g.sum(prod))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = case(3, 4, 3, 2, 6);
        for mode in [AttentionMode::Both, AttentionMode::ImageOnly, AttentionMode::TextOnly] {
            let probe = normal(&[1, mode.feature_width(3)], 0.0, 1.0, &mut seeded_rng(7));
            let check = finite_diff_check(|g, v| loss(g, v, mode, &probe), &values(&c), 1e-5).unwrap();
            assert!(check.passes(1e-4), "{mode}: {check:?}");
        }
    }

    #[test]
    fn image_only_leaves_w_ht_untouched() {
        let c = case(3, 4, 3, 2, 8);
        let probe = Tensor::ones(&[1, 3]);
        let mut g = Graph::new();
        let vars: Vec<Var> = values(&c).iter().map(|t| g.param(t)).collect();
        let l = loss(&mut g, &vars, AttentionMode::ImageOnly, &probe).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(vars[6]).unwrap().iter().all(|v| *v == 0.0));
        assert!(g.grad(vars[5]).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn mode_parses() {
        for m in [AttentionMode::Both, AttentionMode::ImageOnly, AttentionMode::TextOnly] {
            assert_eq!(m.as_str().parse::<AttentionMode>().unwrap(), m);
        }
        assert!("image".parse::<AttentionMode>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn region_permutation_equivariance(seed in 0u64..1000, s in 1usize..5, n in 1usize..6, rot in 0usize..6) {
                let c = case(s, n, 3, 2, seed);
                let perm: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
                let mut ip = Tensor::zeros(&[3, n]);
                for r in 0..3 {
                    for (j, &src) in perm.iter().enumerate() {
                        ip.data_mut()[r * n + j] = c.i.at2(r, src);
                    }
                }
                let base = run(&c, AttentionMode::Both);
                let permuted = run(&Case { i: ip, ..c }, AttentionMode::Both);
                let a = base.a_i.unwrap();
                let ap = permuted.a_i.unwrap();
                for (j, &src) in perm.iter().enumerate() {
                    prop_assert!((ap[j] - a[src]).abs() < 1e-12);
                }
                for (x, y) in base.feature.iter().zip(&permuted.feature) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn token_permutation_equivariance(seed in 0u64..1000, s in 1usize..6, rot in 0usize..6) {
                let c = case(s, 4, 3, 2, seed);
                let perm: Vec<usize> = (0..s).map(|j| (j + rot) % s).collect();
                let rows: Vec<Vec<f64>> = perm.iter().map(|&src| c.t.data()[src * 3..src * 3 + 3].to_vec()).collect();
                let base = run(&c, AttentionMode::Both);
                let permuted = run(&Case { t: Tensor::from_rows(&rows).unwrap(), ..c }, AttentionMode::Both);
                let a = base.a_t.unwrap();
                let ap = permuted.a_t.unwrap();
                for (j, &src) in perm.iter().enumerate() {
                    prop_assert!((ap[j] - a[src]).abs() < 1e-12);
                }
                for (x, y) in base.feature.iter().zip(&permuted.feature) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn outputs_are_bounded_and_convex(seed in 0u64..1000, s in 1usize..5, n in 1usize..6, scale in 0.1f64..20.0) {
                let mut c = case(s, n, 3, 3, seed);
                c.w_b.data_mut().iter_mut().for_each(|v| *v *= scale);
                let tr = run(&c, AttentionMode::Both);
                for m in [&tr.c, tr.h_i.as_ref().unwrap(), tr.h_t.as_ref().unwrap()] {
                    prop_assert!(m.data().iter().all(|v| v.abs() <= 1.0));
                }
                let ai = tr.a_i.unwrap();
                let at = tr.a_t.unwrap();
                prop_assert!(ai.iter().all(|v| *v >= 0.0) && (ai.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(at.iter().all(|v| *v >= 0.0) && (at.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                // each coordinate lies between the extremes of the attended set
                let iv = tr.i_vec.unwrap();
                for r in 0..3 {
                    let col: Vec<f64> = (0..n).map(|j| c.i.at2(r, j)).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(iv[r] >= lo - 1e-12 && iv[r] <= hi + 1e-12);
                }
                let tv = tr.t_vec.unwrap();
                for p in 0..3 {
                    let col: Vec<f64> = (0..s).map(|a| c.t.at2(a, p)).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(tv[p] >= lo - 1e-12 && tv[p] <= hi + 1e-12);
                }
            }
        }
    }
}
