//! Text and image encoders producing the co-attention inputs `T: s×d` and
//! `I: d×N` from stored embeddings.
//!
//! Text path: scalar layer mix over the `L` stored layers, a bidirectional
//! LSTM over tokens and an affine projection from `2h` to `d`. The image
//! path is a per-region affine map followed by a transpose.

use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::{xavier_uniform, Graph, Result, Rng, Tensor, TensorError, Var};

/// Variance floor inside the per-token layer normalization.
pub const LN_EPS: f64 = 1e-6;

/// `γ · Σ_j softmax(logits)_j · LayerNorm(stack_j)` over an `L × n × d`
/// stack; `logits` has `L` entries and `gamma` one.
pub fn scalar_mix(g: &mut Graph, stack: Var, logits: Var, gamma: Var) -> Result<Var> {
    let layers = g.shape(stack)[0];
    if g.value(logits).len() != layers || g.shape(stack).len() != 3 {
        return Err(TensorError::Shape {
            op: "scalar_mix",
            left: g.shape(stack).to_vec(),
            right: g.shape(logits).to_vec(),
        });
    }
    let weights = g.softmax(logits, g.shape(logits).len() - 1)?;
    let mut acc: Option<Var> = None;
    for j in 0..layers {
        let layer = g.slab(stack, j)?;
        let normed = g.layer_norm(layer, LN_EPS)?;
        let w = g.select(weights, j)?;
        let term = g.mul_scalar(normed, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    g.mul_scalar(acc.expect("at least one layer"), gamma)
}

/// The raw top layer `stack_{L-1}`, used when layer weighting is ablated.
pub fn top_layer(g: &mut Graph, stack: Var) -> Result<Var> {
    let layers = g.shape(stack).first().copied().unwrap_or(0);
    if layers == 0 {
        return Err(TensorError::Rank {
            op: "top_layer",
            expected: 3,
            shape: g.shape(stack).to_vec(),
        });
    }
    g.slab(stack, layers - 1)
}

/// Trainable layer weights (softmaxed logits) and scale `γ`.
#[derive(Debug, Clone)]
pub struct ScalarMix {
    pub logits: ParamId,
    pub gamma: ParamId,
}

impl ScalarMix {
    /// Uniform mixture (`logits = 0`) and `γ = 1`.
    pub fn new(store: &mut ParamStore, layers: usize) -> Self {
        ScalarMix {
            logits: store.add("mix.logits", ParamGroup::Adapter, Tensor::zeros(&[layers])),
            gamma: store.add("mix.gamma", ParamGroup::Adapter, Tensor::scalar(1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, stack: Var) -> Result<Var> {
        scalar_mix(g, stack, p[self.logits], p[self.gamma])
    }
}

/// `x · w + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), group, xavier_uniform(&[d_in, d_out], rng)),
            b: store.add(format!("{name}.b"), group, Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.affine(x, p[self.w], p[self.b])
    }
}

/// Graph handles for one LSTM direction. Gate blocks are packed along the
/// columns in the order input, forget, cell, output: `w_in: d×4h`,
/// `w_rec: h×4h`, `bias: [4h]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_in: Var,
    pub w_rec: Var,
    pub bias: Var,
}

/// Runs one LSTM direction over the rows of `seq: n×d` from `h₀ = c₀ = 0`.
/// Returns hidden states `1×h` indexed by time step (not by visit order).
pub fn lstm_direction(g: &mut Graph, seq: Var, v: &LstmVars, reverse: bool) -> Result<Vec<Var>> {
    let (n, _) = g.value(seq).dims2()?;
    let four_h = g.value(v.w_rec).dims2()?.1;
    let h = four_h / 4;
    let xw = g.affine(seq, v.w_in, v.bias)?;

    let mut states: Vec<Option<Var>> = vec![None; n];
    let mut prev: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let x_t = g.row(xw, t)?;
        let z = match prev {
            Some((h_prev, _)) => {
                let rec = g.matmul(h_prev, v.w_rec)?;
                g.add(x_t, rec)?
            }
            None => x_t,
        };
        let sig = g.sigmoid(z);
        let i_gate = g.slice_cols(sig, 0, h)?;
        let f_gate = g.slice_cols(sig, h, h)?;
        let o_gate = g.slice_cols(sig, 3 * h, h)?;
        let z_cell = g.slice_cols(z, 2 * h, h)?;
        let cand = g.tanh(z_cell);
        let write = g.mul(i_gate, cand)?;
        let c = match prev {
            Some((_, c_prev)) => {
                let keep = g.mul(f_gate, c_prev)?;
                g.add(keep, write)?
            }
            None => write,
        };
        let c_act = g.tanh(c);
        let h_t = g.mul(o_gate, c_act)?;
        states[t] = Some(h_t);
        prev = Some((h_t, c));
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}

/// Bidirectional LSTM: row `t` of the `n×2h` output is the forward state
/// at `t` followed by the backward state at `t`.
pub fn bilstm_forward(g: &mut Graph, seq: Var, fwd: &LstmVars, bwd: &LstmVars) -> Result<Var> {
    let f = lstm_direction(g, seq, fwd, false)?;
    let b = lstm_direction(g, seq, bwd, true)?;
    let f = g.stack_rows(&f)?;
    let b = g.stack_rows(&b)?;
    g.concat(f, b, 1)
}

#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_in: ParamId,
    pub w_rec: ParamId,
    pub bias: ParamId,
}

impl LstmParams {
    /// Each gate block gets its own Xavier draw; forget-gate bias starts at 1.
    fn new(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        let packed = |rows: usize, rng: &mut Rng| {
            let blocks: Vec<Tensor> = (0..4).map(|_| xavier_uniform(&[rows, hidden], rng)).collect();
            let mut data = Vec::with_capacity(rows * 4 * hidden);
            for r in 0..rows {
                for b in &blocks {
                    data.extend_from_slice(&b.data()[r * hidden..(r + 1) * hidden]);
                }
            }
            Tensor::new(vec![rows, 4 * hidden], data).expect("packed gate shape")
        };
        let w_in = packed(d_in, rng);
        let w_rec = packed(hidden, rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmParams {
            w_in: store.add(format!("{prefix}.w_in"), ParamGroup::Base, w_in),
            w_rec: store.add(format!("{prefix}.w_rec"), ParamGroup::Base, w_rec),
            bias: store.add(format!("{prefix}.bias"), ParamGroup::Base, bias),
        }
    }

    pub fn vars(&self, p: &Bound) -> LstmVars {
        LstmVars {
            w_in: p[self.w_in],
            w_rec: p[self.w_rec],
            bias: p[self.bias],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, d_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            fwd: LstmParams::new(store, "lstm.fwd", d_in, hidden, rng),
            bwd: LstmParams::new(store, "lstm.bwd", d_in, hidden, rng),
            hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, seq: Var) -> Result<Var> {
        bilstm_forward(g, seq, &self.fwd.vars(p), &self.bwd.vars(p))
    }
}

/// What turns the mixed token embeddings into `T`.
#[derive(Debug, Clone)]
pub enum SequenceModel {
    /// BiLSTM followed by the `2h → d` projection.
    BiLstm { lstm: BiLstm, proj: Linear },
    /// A single affine layer `d_t → d` in place of the recurrence.
    FeedForward(Linear),
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    /// `None` feeds the raw top layer.
    pub mix: Option<ScalarMix>,
    pub seq: SequenceModel,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        layers: usize,
        d_t: usize,
        hidden: usize,
        d: usize,
        use_weighted_layers: bool,
        use_bilstm: bool,
        rng: &mut Rng,
    ) -> Self {
        let mix = use_weighted_layers.then(|| ScalarMix::new(store, layers));
        let seq = if use_bilstm {
            let lstm = BiLstm::new(store, d_t, hidden, rng);
            let proj = Linear::new(store, "proj", ParamGroup::Base, 2 * hidden, d, rng);
            SequenceModel::BiLstm { lstm, proj }
        } else {
            SequenceModel::FeedForward(Linear::new(store, "ff", ParamGroup::Base, d_t, d, rng))
        };
        TextEncoder { mix, seq }
    }

    /// `L × n × d_t` stack to `T: n × d`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, stack: Var) -> Result<Var> {
        let tokens = match &self.mix {
            Some(mix) => mix.forward(g, p, stack)?,
            None => top_layer(g, stack)?,
        };
        match &self.seq {
            SequenceModel::BiLstm { lstm, proj } => {
                let h = lstm.forward(g, p, tokens)?;
                proj.forward(g, p, h)
            }
            SequenceModel::FeedForward(ff) => ff.forward(g, p, tokens),
        }
    }
}

/// `regions: N × d_img` to `I: d × N` via `(regions · w + b)ᵀ`.
pub fn encode_image(g: &mut Graph, regions: Var, w: Var, b: Var) -> Result<Var> {
    let projected = g.affine(regions, w, b)?;
    g.transpose(projected)
}

#[derive(Debug, Clone)]
pub struct ImageAdapter(pub Linear);

impl ImageAdapter {
    pub fn new(store: &mut ParamStore, d_img: usize, d: usize, rng: &mut Rng) -> Self {
        ImageAdapter(Linear::new(store, "img", ParamGroup::Adapter, d_img, d, rng))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, regions: Var) -> Result<Var> {
        encode_image(g, regions, p[self.0.w], p[self.0.b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal, seeded_rng};

    #[test]
    fn constant_layers_mix_to_zero() {
        let mut g = Graph::new();
        let stack = g.constant(&Tensor::ones(&[2, 3, 4]));
        let logits = g.constant(&Tensor::zeros(&[2]));
        let gamma = g.constant(&Tensor::scalar(1.0));
        let out = scalar_mix(&mut g, stack, logits, gamma).unwrap();
        assert_eq!(g.shape(out), &[3, 4]);
        assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_gamma_zeroes_output() {
        let mut g = Graph::new();
        let stack = g.constant(&normal(&[3, 2, 5], 0.0, 1.0, &mut seeded_rng(0)));
        let logits = g.constant(&Tensor::vector(vec![0.3, -1.0, 2.0]));
        let gamma = g.constant(&Tensor::scalar(0.0));
        let out = scalar_mix(&mut g, stack, logits, gamma).unwrap();
        assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mix_matches_direct_evaluation() {
        // logits (ln 3, 0) -> weights (0.75, 0.25)
        let stack_t = normal(&[2, 3, 4], 0.0, 1.0, &mut seeded_rng(1));
        let mut g = Graph::new();
        let stack = g.constant(&stack_t);
        let logits = g.constant(&Tensor::vector(vec![3f64.ln(), 0.0]));
        let gamma = g.constant(&Tensor::scalar(2.0));
        let out = scalar_mix(&mut g, stack, logits, gamma).unwrap();

        let ln = |row: &[f64]| -> Vec<f64> {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / row.len() as f64;
            row.iter().map(|x| (x - m) / (v + 1e-6).sqrt()).collect()
        };
        let data = stack_t.data();
        for t in 0..3 {
            let l0 = ln(&data[t * 4..t * 4 + 4]);
            let l1 = ln(&data[12 + t * 4..12 + t * 4 + 4]);
            for j in 0..4 {
                let expect = 2.0 * (0.75 * l0[j] + 0.25 * l1[j]);
                assert!((g.value(out).at2(t, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mix_rejects_layer_mismatch() {
        let mut g = Graph::new();
        let stack = g.constant(&Tensor::zeros(&[3, 2, 2]));
        let logits = g.constant(&Tensor::zeros(&[2]));
        let gamma = g.constant(&Tensor::scalar(1.0));
        assert!(scalar_mix(&mut g, stack, logits, gamma).is_err());
    }

    fn lstm_vars(g: &mut Graph, d: usize, h: usize, rng: &mut Rng, zero: bool) -> LstmVars {
        let mk = |shape: &[usize], rng: &mut Rng| {
            if zero {
                Tensor::zeros(shape)
            } else {
                normal(shape, 0.0, 0.5, rng)
            }
        };
        LstmVars {
            w_in: g.constant(&mk(&[d, 4 * h], rng)),
            w_rec: g.constant(&mk(&[h, 4 * h], rng)),
            bias: g.constant(&mk(&[4 * h], rng)),
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut rng = seeded_rng(2);
        let mut g = Graph::new();
        let seq = g.constant(&normal(&[5, 3], 0.0, 1.0, &mut rng));
        let f = lstm_vars(&mut g, 3, 4, &mut rng, true);
        let b = lstm_vars(&mut g, 3, 4, &mut rng, true);
        let out = bilstm_forward(&mut g, seq, &f, &b).unwrap();
        assert_eq!(g.shape(out), &[5, 8]);
        assert!(g.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_sees_same_input_both_ways() {
        let mut rng = seeded_rng(3);
        let mut g = Graph::new();
        let seq = g.constant(&normal(&[1, 3], 0.0, 1.0, &mut rng));
        let f = lstm_vars(&mut g, 3, 2, &mut rng, false);
        let out = bilstm_forward(&mut g, seq, &f, &f).unwrap();
        let v = g.value(out).data();
        assert_eq!(&v[..2], &v[2..]);
    }

    /// Brute-force scalar LSTM, independent of the graph implementation.
    fn reference_lstm(seq: &[Vec<f64>], w_in: &Tensor, w_rec: &Tensor, bias: &Tensor, h: usize) -> Vec<Vec<f64>> {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::new();
        for x in seq {
            let mut z = vec![0.0; 4 * h];
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = bias.data()[k]
                    + x.iter().enumerate().map(|(i, xi)| xi * w_in.at2(i, k)).sum::<f64>()
                    + hs.iter().enumerate().map(|(i, hi)| hi * w_rec.at2(i, k)).sum::<f64>();
            }
            for j in 0..h {
                let (i, f, gg, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
                cs[j] = f * cs[j] + i * gg;
                hs[j] = o * cs[j].tanh();
            }
            out.push(hs.clone());
        }
        out
    }

    #[test]
    fn matches_scalar_reference_and_direction_symmetry() {
        let mut rng = seeded_rng(4);
        let (n, d, h) = (4, 3, 2);
        let seq_t = normal(&[n, d], 0.0, 1.0, &mut rng);
        let w_in = normal(&[d, 4 * h], 0.0, 0.6, &mut rng);
        let w_rec = normal(&[h, 4 * h], 0.0, 0.6, &mut rng);
        let bias = normal(&[4 * h], 0.0, 0.3, &mut rng);

        let rows: Vec<Vec<f64>> = (0..n).map(|t| seq_t.data()[t * d..(t + 1) * d].to_vec()).collect();
        let fwd_ref = reference_lstm(&rows, &w_in, &w_rec, &bias, h);
        let rev_rows: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let bwd_ref = reference_lstm(&rev_rows, &w_in, &w_rec, &bias, h);

        let run = |seq: &Tensor| {
            let mut g = Graph::new();
            let s = g.constant(seq);
            let v = LstmVars {
                w_in: g.constant(&w_in),
                w_rec: g.constant(&w_rec),
                bias: g.constant(&bias),
            };
            let out = bilstm_forward(&mut g, s, &v, &v).unwrap();
            g.value(out).clone()
        };
        let out = run(&seq_t);
        for t in 0..n {
            for j in 0..h {
                assert!((out.at2(t, j) - fwd_ref[t][j]).abs() < 1e-12);
                assert!((out.at2(t, h + j) - bwd_ref[n - 1 - t][j]).abs() < 1e-12);
            }
        }

        // reversing the input swaps the two halves read in opposite order
        let rev = Tensor::from_rows(&rev_rows).unwrap();
        let out_rev = run(&rev);
        for t in 0..n {
            for j in 0..h {
                assert!((out_rev.at2(t, h + j) - out.at2(n - 1 - t, j)).abs() < 1e-12);
                assert!((out_rev.at2(t, j) - out.at2(n - 1 - t, h + j)).abs() < 1e-12);
            }
        }
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn image_adapter_cases() {
        let mut rng = seeded_rng(5);
        let regions = normal(&[3, 4], 0.0, 1.0, &mut rng);

        let mut g = Graph::new();
        let r = g.constant(&regions);
        let w = g.constant(&Tensor::zeros(&[4, 2]));
        let b = g.constant(&Tensor::vector(vec![0.5, -1.0]));
        let out = encode_image(&mut g, r, w, b).unwrap();
        assert_eq!(g.shape(out), &[2, 3]);
        for n in 0..3 {
            assert_eq!(g.value(out).at2(0, n), 0.5);
            assert_eq!(g.value(out).at2(1, n), -1.0);
        }

        let w = g.constant(&Tensor::eye(4));
        let b = g.constant(&Tensor::zeros(&[4]));
        let out = encode_image(&mut g, r, w, b).unwrap();
        assert_eq!(g.value(out), &regions.transpose().unwrap());

        let wt = normal(&[4, 2], 0.0, 1.0, &mut rng);
        let bt = Tensor::vector(vec![0.1, 0.2]);
        let w = g.constant(&wt);
        let b = g.constant(&bt);
        let out = encode_image(&mut g, r, w, b).unwrap();
        for dd in 0..2 {
            for n in 0..3 {
                let expect: f64 = (0..4).map(|i| regions.at2(n, i) * wt.at2(i, dd)).sum::<f64>() + bt.data()[dd];
                assert!((g.value(out).at2(dd, n) - expect).abs() < 1e-12);
            }
        }
        let bad = g.constant(&Tensor::zeros(&[5, 2]));
        assert!(encode_image(&mut g, r, bad, b).is_err());
    }

    #[test]
    fn lstm_init_has_unit_forget_bias() {
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, 3, 2, &mut seeded_rng(0));
        let b = store.get(lstm.fwd.bias).data();
        assert_eq!(b, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn text_encoder_gradients_match_finite_differences() {
        use crate::tensor::finite_diff_check;
        let mut rng = seeded_rng(6);
        let stack = normal(&[2, 3, 4], 0.0, 1.0, &mut rng);
        for (mix, lstm) in [(true, true), (false, false), (true, false)] {
            let mut store = ParamStore::new();
            let enc = TextEncoder::new(&mut store, 2, 4, 2, 3, mix, lstm, &mut rng);
            // perturb so logits and biases are not at symmetric points
            for p in store.iter_mut() {
                let noise = normal(p.value.shape(), 0.0, 0.2, &mut rng);
                p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
            }
            let values: Vec<Tensor> = store.iter().map(|p| p.value.clone()).collect();
            let probe = normal(&[3, 3], 0.0, 1.0, &mut rng);
            let check = finite_diff_check(
                |g, vars| {
                    let bound = crate::params::Bound::from_vars(vars.to_vec());
                    let x = g.constant(&stack);
                    let t = enc.forward(g, &bound, x)?;
                    let w = g.constant(&probe);
                    let prod = g.mul(t, w)?;
                    let th = g.tanh(prod);
                    Ok(g.sum(th))
                },
                &values,
                1e-5,
            )
            .unwrap();
            assert!(check.passes(1e-5), "mix={mix} lstm={lstm}: {check:?}");
        }
    }
}
