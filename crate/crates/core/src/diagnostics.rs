//! Finite-difference gradient checks over every differentiable op and
//! every trainable block, at toy shapes.

use crate::coattention::{coattend, AttentionMode, CoAttentionVars};
use crate::encoders::{bilstm_forward, encode_image, scalar_mix, LstmVars, TextEncoder};
use crate::fusion::{cross_entropy_logits, fuse_bilinear, fuse_concat, fuse_dot, ClassifierHead};
use crate::params::{Bound, ParamStore};
use crate::tensor::{finite_diff_check, normal, seeded_rng, GradCheck, Graph, Result, Rng, Tensor, Var};

/// Step used by every check.
pub const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheck,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(FD_TOLERANCE)
    }
}

type LossFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Case {
    name: String,
    params: Vec<Tensor>,
    f: LossFn,
}

/// Reduces an arbitrary output to a scalar through a fixed random weighting,
/// so no coordinate sits at a symmetric point.
fn probe(g: &mut Graph, out: Var, rng_seed: u64) -> Result<Var> {
    let w = normal(g.shape(out), 0.0, 1.0, &mut seeded_rng(rng_seed));
    let w = g.constant(&w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn case(name: &str, params: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name: name.to_string(),
        params,
        f: Box::new(f),
    }
}

fn op_cases(rng: &mut Rng) -> Vec<Case> {
    let m = |shape: &[usize], rng: &mut Rng| normal(shape, 0.0, 1.0, rng);
    let pos = |shape: &[usize], rng: &mut Rng| {
        let mut t = normal(shape, 0.0, 0.3, rng);
        t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
        t
    };
    let (a, b) = (m(&[2, 3], rng), m(&[2, 3], rng));
    let (c, bias) = (m(&[3, 4], rng), m(&[4], rng));
    vec![
        case("op.add", vec![a.clone(), b.clone()], |g, v| {
            let o = g.add(v[0], v[1])?;
            probe(g, o, 1)
        }),
        case("op.sub", vec![a.clone(), b.clone()], |g, v| {
            let o = g.sub(v[0], v[1])?;
            probe(g, o, 2)
        }),
        case("op.mul", vec![a.clone(), b.clone()], |g, v| {
            let o = g.mul(v[0], v[1])?;
            probe(g, o, 3)
        }),
        case("op.scale", vec![a.clone()], |g, v| {
            let o = g.scale(v[0], -1.7);
            probe(g, o, 4)
        }),
        case("op.mul_scalar", vec![a.clone(), Tensor::scalar(0.8)], |g, v| {
            let o = g.mul_scalar(v[0], v[1])?;
            probe(g, o, 5)
        }),
        case("op.add_row", vec![c.clone(), bias.clone()], |g, v| {
            let o = g.add_row(v[0], v[1])?;
            probe(g, o, 6)
        }),
        case("op.matmul", vec![a.clone(), c.clone()], |g, v| {
            let o = g.matmul(v[0], v[1])?;
            probe(g, o, 7)
        }),
        case("op.affine", vec![a.clone(), c.clone(), bias.clone()], |g, v| {
            let o = g.affine(v[0], v[1], v[2])?;
            probe(g, o, 8)
        }),
        case("op.transpose", vec![a.clone()], |g, v| {
            let o = g.transpose(v[0])?;
            probe(g, o, 9)
        }),
        case("op.tanh", vec![a.clone()], |g, v| {
            let o = g.tanh(v[0]);
            probe(g, o, 10)
        }),
        case("op.sigmoid", vec![a.clone()], |g, v| {
            let o = g.sigmoid(v[0]);
            probe(g, o, 11)
        }),
        case("op.log", vec![pos(&[2, 3], rng)], |g, v| {
            let o = g.log(v[0]);
            probe(g, o, 12)
        }),
        case("op.exp", vec![a.clone()], |g, v| {
            let o = g.exp(v[0]);
            probe(g, o, 13)
        }),
        case("op.softmax", vec![a.clone()], |g, v| {
            let o = g.softmax(v[0], 1)?;
            probe(g, o, 14)
        }),
        case("op.softmax_axis0", vec![a.clone()], |g, v| {
            let o = g.softmax(v[0], 0)?;
            probe(g, o, 15)
        }),
        case("op.log_softmax", vec![a.clone()], |g, v| {
            let o = g.log_softmax(v[0], 1)?;
            probe(g, o, 16)
        }),
        case("op.concat", vec![a.clone(), m(&[2, 2], rng)], |g, v| {
            let o = g.concat(v[0], v[1], 1)?;
            probe(g, o, 17)
        }),
        case("op.concat_axis0", vec![a.clone(), b.clone()], |g, v| {
            let o = g.concat(v[0], v[1], 0)?;
            probe(g, o, 18)
        }),
        case("op.sum", vec![a.clone()], |g, v| {
            let t = g.tanh(v[0]);
            Ok(g.sum(t))
        }),
        case("op.reduce_sum", vec![m(&[2, 3, 2], rng)], |g, v| {
            let o = g.reduce_sum(v[0], 1)?;
            probe(g, o, 19)
        }),
        case("op.layer_norm", vec![m(&[3, 5], rng)], |g, v| {
            let o = g.layer_norm(v[0], 1e-6)?;
            probe(g, o, 20)
        }),
        case("op.row", vec![a.clone()], |g, v| {
            let o = g.row(v[0], 1)?;
            probe(g, o, 21)
        }),
        case("op.slice_cols", vec![c.clone()], |g, v| {
            let o = g.slice_cols(v[0], 1, 2)?;
            probe(g, o, 22)
        }),
        case("op.stack_rows", vec![m(&[1, 3], rng), m(&[1, 3], rng)], |g, v| {
            let o = g.stack_rows(&[v[0], v[1], v[0]])?;
            probe(g, o, 23)
        }),
        case("op.select", vec![a.clone()], |g, v| {
            let o = g.select(v[0], 4)?;
            let o2 = g.mul(o, o)?;
            Ok(g.sum(o2))
        }),
        case("op.slab", vec![m(&[3, 2, 2], rng)], |g, v| {
            let o = g.slab(v[0], 2)?;
            probe(g, o, 24)
        }),
        case("op.reshape", vec![a.clone()], |g, v| {
            let o = g.reshape(v[0], &[3, 2])?;
            probe(g, o, 25)
        }),
    ]
}

fn lstm_vars(v: &[Var]) -> LstmVars {
    LstmVars {
        w_in: v[0],
        w_rec: v[1],
        bias: v[2],
    }
}

fn block_cases(rng: &mut Rng) -> Vec<Case> {
    let m = |shape: &[usize], std: f64, rng: &mut Rng| normal(shape, 0.0, std, rng);
    let mut cases = vec![
        case(
            "scalar_mix",
            vec![m(&[3, 4, 5], 1.0, rng), m(&[3], 0.5, rng), Tensor::scalar(1.3)],
            |g, v| {
                let o = scalar_mix(g, v[0], v[1], v[2])?;
                probe(g, o, 30)
            },
        ),
        case(
            "bilstm_forward",
            vec![
                m(&[4, 12], 0.5, rng),
                m(&[3, 12], 0.5, rng),
                m(&[12], 0.3, rng),
                m(&[4, 12], 0.5, rng),
                m(&[3, 12], 0.5, rng),
                m(&[12], 0.3, rng),
                m(&[3, 4], 1.0, rng),
            ],
            |g, v| {
                let o = bilstm_forward(g, v[6], &lstm_vars(&v[..3]), &lstm_vars(&v[3..6]))?;
                probe(g, o, 31)
            },
        ),
        case(
            "encode_image",
            vec![m(&[5, 4], 1.0, rng), m(&[4, 3], 0.5, rng), m(&[3], 0.5, rng)],
            |g, v| {
                let o = encode_image(g, v[0], v[1], v[2])?;
                probe(g, o, 32)
            },
        ),
    ];

    for (mix, lstm) in [(true, true), (false, true), (true, false)] {
        let mut store = ParamStore::new();
        let enc = TextEncoder::new(&mut store, 2, 4, 3, 3, mix, lstm, rng);
        let mut params: Vec<Tensor> = store
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                let noise = normal(t.shape(), 0.0, 0.2, rng);
                t.data_mut().iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
                t
            })
            .collect();
        params.push(m(&[2, 3, 4], 1.0, rng));
        let n = params.len();
        let name = format!("encode_text(mix={mix},bilstm={lstm})");
        cases.push(case(&name, params, move |g, v| {
            let bound = Bound::from_vars(v[..n - 1].to_vec());
            let o = enc.forward(g, &bound, v[n - 1])?;
            probe(g, o, 33)
        }));
    }

    for mode in [AttentionMode::Both, AttentionMode::ImageOnly, AttentionMode::TextOnly] {
        let (s, n, d, k) = (3, 4, 3, 2);
        let params = vec![
            m(&[s, d], 1.0, rng),
            m(&[d, n], 1.0, rng),
            m(&[d, d], 0.6, rng),
            m(&[k, d], 0.6, rng),
            m(&[k, d], 0.6, rng),
            m(&[1, k], 1.0, rng),
            m(&[1, k], 1.0, rng),
            m(&[mode.feature_width(d), 3], 0.7, rng),
            m(&[3], 0.3, rng),
        ];
        cases.push(case(&format!("coattention_loss({mode})"), params, move |g, v| {
            let p = CoAttentionVars {
                w_b: v[2],
                w_v: v[3],
                w_s: v[4],
                w_hi: v[5],
                w_ht: v[6],
            };
            let out = coattend(g, v[0], v[1], &p, mode)?;
            let z = g.affine(out.feature, v[7], v[8])?;
            cross_entropy_logits(g, z, 1)
        }));
    }

    let (xi, xt) = (m(&[1, 3], 1.0, rng), m(&[1, 2], 1.0, rng));
    let head = |width: usize, rng: &mut Rng| {
        let mut store = ParamStore::new();
        let h = ClassifierHead::new(&mut store, width, 4, 3, rng);
        let params: Vec<Tensor> = store
            .iter()
            .map(|p| {
                let mut t = p.value.clone();
                let noise = normal(t.shape(), 0.0, 0.2, rng);
                t.data_mut().iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
                t
            })
            .collect();
        (h, params)
    };

    let (h, mut params) = head(5, rng);
    let nh = params.len();
    params.extend([xi.clone(), xt.clone()]);
    cases.push(case("fusion.concat+head", params, move |g, v| {
        let f = fuse_concat(g, v[nh], v[nh + 1])?;
        let z = h.logits(g, &Bound::from_vars(v[..nh].to_vec()), f)?;
        cross_entropy_logits(g, z, 2)
    }));

    let (h, mut params) = head(2, rng);
    params.extend([xi.clone(), xt.clone(), m(&[6, 2], 0.6, rng), m(&[2], 0.3, rng)]);
    cases.push(case("fusion.bilinear+head", params, move |g, v| {
        let f = fuse_bilinear(g, v[nh], v[nh + 1], v[nh + 2], v[nh + 3])?;
        let z = h.logits(g, &Bound::from_vars(v[..nh].to_vec()), f)?;
        cross_entropy_logits(g, z, 0)
    }));

    let (h, mut params) = head(3, rng);
    params.extend([xi, xt, m(&[3, 2], 0.6, rng), m(&[3], 0.3, rng)]);
    cases.push(case("fusion.dot+head", params, move |g, v| {
        let f = fuse_dot(g, v[nh], v[nh + 1], v[nh + 2], v[nh + 3])?;
        let z = h.logits(g, &Bound::from_vars(v[..nh].to_vec()), f)?;
        cross_entropy_logits(g, z, 1)
    }));
    cases
}

/// Runs every op and block check. Errors only on a construction failure;
/// accuracy is reported per check.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = seeded_rng(seed);
    let mut cases = op_cases(&mut rng);
    cases.extend(block_cases(&mut rng));
    cases
        .into_iter()
        .map(|c| {
            Ok(CheckResult {
                report: finite_diff_check(&c.f, &c.params, FD_STEP)?,
                name: c.name,
            })
        })
        .collect()
}
