//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use peagnn::autodiff::{Activation, Scalar, Tape, Tensor, Var};
use peagnn::hin::{sample_feature_contrast, Hin};
use peagnn::layers::{apply_layer, LayerKind, LayerParams, PreparedStep, GAT_SLOPE};
use peagnn::metapath::{derive_step_adjacencies, enumerate_metapaths, Metapath};
use peagnn::model::{
    bpr_loss_tape, entity_loss_tape, forward_tape, fuse_attention, score_pairs_tape,
    total_loss_tape, EntitySample, FusedVars, ModelDims, ModelGraph, ModelParams, ParamVars,
};
use peagnn::sparse::{CsrMatrix, SparseOperator};
use peagnn::synthetic::{random_hin, RandomHinConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build<'a, T> =
    Box<dyn Fn(&mut Tape<T>, &[Tensor<T>]) -> peagnn::Result<(Var, Vec<Var>)> + 'a>;

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb < 1e-12 {
        0.0
    } else {
        diff / (na + nb)
    }
}

fn loss_at(f: &Build<f64>, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let (loss, _) = f(&mut tape, inputs).expect("case builds");
    tape.value(loss).item().expect("scalar loss")
}

/// Central differences of the f64 build, one entry at a time.
pub fn numeric_gradients(f: &Build<f64>, inputs: &[Tensor<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    (0..inputs.len())
        .map(|k| {
            (0..inputs[k].numel())
                .map(|j| {
                    let x0 = inputs[k].data()[j];
                    work[k].data_mut()[j] = x0 + h;
                    let up = loss_at(f, &work);
                    work[k].data_mut()[j] = x0 - h;
                    let down = loss_at(f, &work);
                    work[k].data_mut()[j] = x0;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

pub fn analytic_gradients<T: Scalar>(f: &Build<T>, inputs: &[Tensor<T>]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let (loss, vars) = f(&mut tape, inputs).expect("case builds");
    let grads = tape.backward(loss).expect("backward");
    vars.iter()
        .map(|&v| {
            grads
                .get(v)
                .data()
                .iter()
                .map(|x| x.to_f64().unwrap())
                .collect()
        })
        .collect()
}

/// Relative error of the concatenated gradient of all inputs, for f64 and
/// for f32 (analytic f32 gradients against f64 central differences at the
/// rounded inputs). Per-tensor ratios are meaningless for tensors whose
/// exact gradient is zero, such as the output bias under a pairwise loss.
pub fn gradcheck(
    f64_build: &Build<f64>,
    f32_build: &Build<f32>,
    inputs: &[Tensor<f64>],
) -> (f64, f64) {
    let numeric = numeric_gradients(f64_build, inputs, 1e-5);
    let a64 = analytic_gradients(f64_build, inputs);
    let narrow: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let widened: Vec<Tensor<f64>> = narrow.iter().map(|t| t.cast()).collect();
    let numeric_at_narrow = numeric_gradients(f64_build, &widened, 1e-5);
    let a32 = analytic_gradients(f32_build, &narrow);
    let flat = |v: &[Vec<f64>]| v.concat();
    (
        rel_error(&flat(&a64), &flat(&numeric)),
        rel_error(&flat(&a32), &flat(&numeric_at_narrow)),
    )
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Weighted sum with fixed irregular weights, so every output entry gets a
/// distinct upstream gradient.
pub fn probe_sum<T: Scalar>(tape: &mut Tape<T>, v: Var) -> peagnn::Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(
        shape,
        (0..n)
            .map(|i| T::of(((i * 7 + 3) % 11) as f64 / 5.0 - 1.0))
            .collect(),
    )?;
    let c = tape.constant(w);
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

fn params<T: Scalar>(tape: &mut Tape<T>, ts: &[Tensor<T>]) -> Vec<Var> {
    ts.iter().map(|t| tape.param(t.clone())).collect()
}

/// Random square pattern with some empty rows.
pub fn random_csr(rng: &mut ChaCha8Rng, n: usize, p: f64) -> CsrMatrix {
    let mut edges = Vec::new();
    for r in 0..n {
        if r % 4 == 3 {
            continue;
        }
        for c in 0..n {
            if rng.random_bool(p) {
                edges.push((r, c, 1.0));
            }
        }
    }
    CsrMatrix::from_edges(n, n, edges).unwrap()
}

pub struct GradResult {
    pub name: String,
    pub rel_f64: f64,
    pub rel_f32: f64,
}

macro_rules! both {
    ($f:expr) => {
        (
            Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| $f(t, x)) as Build<f64>,
            Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| $f(t, x)) as Build<f32>,
        )
    };
}

fn layer_case<T: Scalar>(
    tape: &mut Tape<T>,
    ts: &[Tensor<T>],
    kind: LayerKind,
    step: &PreparedStep,
) -> peagnn::Result<(Var, Vec<Var>)> {
    let p = LayerParams {
        kind,
        w: ts[1].clone(),
        w_self: (kind == LayerKind::Sage).then(|| ts[2].clone()),
        attn: (kind == LayerKind::Gat).then(|| ts[2].clone()),
    };
    let x = tape.param(ts[0].clone());
    let lv = p.register(tape);
    let out = apply_layer(tape, x, step, &lv)?;
    let loss = probe_sum(tape, out)?;
    let mut vars = vec![x];
    vars.extend(lv.all());
    Ok((loss, vars))
}

/// Model template and batch for the end-to-end and MLP checks.
pub struct ModelFixture {
    pub hin: Hin,
    pub base: ModelParams<f64>,
    pub graph: ModelGraph,
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
    pub samples: Vec<EntitySample>,
}

pub fn model_fixture(kind: LayerKind, seed: u64) -> ModelFixture {
    let hin = random_hin(RandomHinConfig::small(), seed).unwrap();
    let mps: Vec<Metapath> = ["U-M-U", "M-U-M", "Y-M-U", "G-M-U", "T-M-U", "T-U-M"]
        .iter()
        .map(|n| Metapath::parse(n).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        embed: 4,
        repr: 3,
        hidden: 5,
    };
    let mut base =
        ModelParams::<f64>::init(hin.num_nodes(), kind, mps.clone(), dims, &mut rng).unwrap();
    // larger embeddings keep pre-activations away from the ReLU kink
    for v in base.embeddings.data_mut() {
        *v *= 10.0;
    }
    let graph = ModelGraph::build(&hin, &mps, kind).unwrap();
    let (nu, ni) = (hin.users().len(), hin.items().len());
    let users: Vec<usize> = (0..4).map(|k| k % nu).collect();
    let pos: Vec<usize> = (0..4).map(|k| k % ni).collect();
    let neg: Vec<usize> = (0..4).map(|k| (k + 1) % ni).collect();
    let mut samples = Vec::new();
    for (k, (&u, &i)) in users.iter().zip(&pos).enumerate() {
        let gu = hin.users().start + u;
        let gi = hin.items().start + i;
        let cu = sample_feature_contrast(&hin, gu, seed + k as u64).unwrap();
        let ci = sample_feature_contrast(&hin, gi, seed + 100 + k as u64).unwrap();
        samples.extend(EntitySample::new(gu, cu, gi, ci));
    }
    ModelFixture {
        hin,
        base,
        graph,
        users,
        pos,
        neg,
        samples,
    }
}

fn with_tensors<T: Scalar>(base: &ModelParams<T>, ts: &[Tensor<T>]) -> ModelParams<T> {
    let mut p = base.clone();
    for (dst, src) in p.tensors_mut().into_iter().zip(ts) {
        *dst = src.clone();
    }
    p
}

fn model_case<T: Scalar>(
    tape: &mut Tape<T>,
    ts: &[Tensor<T>],
    fx: &ModelFixture,
    base: &ModelParams<T>,
    lambda: f64,
) -> peagnn::Result<(Var, Vec<Var>)> {
    let p = with_tensors(base, ts);
    let pv = p.register(tape);
    let fused = forward_tape(tape, &p, &pv, &fx.graph)?;
    let mut users = fx.users.clone();
    users.extend_from_slice(&fx.users);
    let mut items = fx.pos.clone();
    items.extend_from_slice(&fx.neg);
    let scores = score_pairs_tape(tape, &pv, &fused, &users, &items)?;
    let b = fx.users.len();
    let pos = tape.slice_rows(scores, 0, b)?;
    let neg = tape.slice_rows(scores, b, 2 * b)?;
    let cf = bpr_loss_tape(tape, pos, neg)?;
    let ent = entity_loss_tape(tape, pv.embeddings, &fx.samples)?;
    let loss = total_loss_tape(tape, cf, ent, lambda)?;
    Ok((loss, pv.all()))
}

/// MLP scorer alone: fused representations are free inputs.
fn mlp_case<T: Scalar>(
    tape: &mut Tape<T>,
    ts: &[Tensor<T>],
    users: &[usize],
    items: &[usize],
) -> peagnn::Result<(Var, Vec<Var>)> {
    let v = params(tape, ts);
    let dummy = tape.constant(Tensor::zeros(vec![1, 1]));
    let pv = ParamVars {
        embeddings: dummy,
        layers: Vec::new(),
        fusion_user: dummy,
        fusion_item: dummy,
        w1: v[2],
        b1: v[3],
        w2: v[4],
        b2: v[5],
    };
    let fused = FusedVars {
        e_user: v[0],
        e_item: v[1],
        att_user: dummy,
        att_item: dummy,
    };
    let s = score_pairs_tape(tape, &pv, &fused, users, items)?;
    Ok((probe_sum(tape, s)?, v))
}

/// Finite-difference check of every differentiable op, the three layer
/// kinds, fusion, the MLP scorer, both losses and the whole model.
pub fn gradient_suite(seed: u64) -> Vec<GradResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, (f64b, f32b): (Build<f64>, Build<f32>), inputs: Vec<Tensor<f64>>| {
        let (rel_f64, rel_f32) = gradcheck(&f64b, &f32b, &inputs);
        out.push(GradResult {
            name: name.to_string(),
            rel_f64,
            rel_f32,
        });
    };
    let r = &mut rng;

    fn unary<T: Scalar>(
        t: &mut Tape<T>,
        x: &[Tensor<T>],
        op: fn(&mut Tape<T>, Var) -> peagnn::Result<Var>,
    ) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        let y = op(t, v[0])?;
        Ok((probe_sum(t, y)?, v))
    }
    fn binary<T: Scalar>(
        t: &mut Tape<T>,
        x: &[Tensor<T>],
        op: fn(&mut Tape<T>, Var, Var) -> peagnn::Result<Var>,
    ) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        let y = op(t, v[0], v[1])?;
        Ok((probe_sum(t, y)?, v))
    }

    run(
        "matmul",
        both!(|t, x| binary(t, x, |t, a, b| t.matmul(a, b))),
        vec![
            random_tensor(r, &[3, 4], -1.0, 1.0),
            random_tensor(r, &[4, 2], -1.0, 1.0),
        ],
    );
    let pair = |r: &mut ChaCha8Rng| {
        vec![
            random_tensor(r, &[3, 3], -1.0, 1.0),
            random_tensor(r, &[3, 3], -1.0, 1.0),
        ]
    };
    run(
        "add",
        both!(|t, x| binary(t, x, |t, a, b| t.add(a, b))),
        pair(r),
    );
    run(
        "sub",
        both!(|t, x| binary(t, x, |t, a, b| t.sub(a, b))),
        pair(r),
    );
    run(
        "mul",
        both!(|t, x| binary(t, x, |t, a, b| t.mul(a, b))),
        pair(r),
    );
    run(
        "add_row_bias",
        both!(|t, x| binary(t, x, |t, a, b| t.add_row_bias(a, b))),
        vec![
            random_tensor(r, &[3, 4], -1.0, 1.0),
            random_tensor(r, &[4], -1.0, 1.0),
        ],
    );
    run(
        "scale_rows",
        both!(|t, x| binary(t, x, |t, a, b| t.scale_rows(a, b))),
        vec![
            random_tensor(r, &[3, 4], -1.0, 1.0),
            random_tensor(r, &[3, 1], -1.0, 1.0),
        ],
    );
    let one = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[3, 4], -2.0, 2.0)];
    run(
        "scale",
        both!(|t, x| unary(t, x, |t, a| Ok(t.scale(a, Scalar::of(0.7))))),
        one(r),
    );
    run(
        "relu",
        both!(|t, x| unary(t, x, |t, a| Ok(t.relu(a)))),
        one(r),
    );
    run(
        "leaky_relu",
        both!(|t, x| unary(t, x, |t, a| t.activation(a, Activation::LeakyRelu(0.2)))),
        one(r),
    );
    run(
        "sigmoid",
        both!(|t, x| unary(t, x, |t, a| t.activation(a, Activation::Sigmoid))),
        one(r),
    );
    run(
        "ln",
        both!(|t, x| unary(t, x, |t, a| {
            let s = t.activation(a, Activation::Sigmoid)?;
            t.activation(s, Activation::Ln)
        })),
        one(r),
    );
    run(
        "log_sigmoid",
        both!(|t, x| unary(t, x, |t, a| Ok(t.log_sigmoid(a)))),
        one(r),
    );
    run(
        "softmax_rows",
        both!(|t, x| unary(t, x, |t, a| t.softmax_rows(a))),
        one(r),
    );
    run(
        "gather_rows",
        both!(|t, x| unary(t, x, |t, a| t.gather_rows(a, &[2, 0, 2, 1, 2]))),
        one(r),
    );
    run(
        "concat_cols",
        both!(|t, x| binary(t, x, |t, a, b| t.concat_cols(&[a, b, a]))),
        vec![
            random_tensor(r, &[3, 2], -1.0, 1.0),
            random_tensor(r, &[3, 3], -1.0, 1.0),
        ],
    );
    run(
        "slice_cols",
        both!(|t, x| unary(t, x, |t, a| t.slice_cols(a, 1, 3))),
        one(r),
    );
    run(
        "slice_rows",
        both!(|t, x| unary(t, x, |t, a| t.slice_rows(a, 1, 3))),
        one(r),
    );
    run(
        "sum_rows",
        both!(|t, x| unary(t, x, |t, a| t.sum_rows(a))),
        one(r),
    );
    run(
        "sum",
        both!(|t, x| unary(t, x, |t, a| Ok(t.sum(a)))),
        one(r),
    );
    run("mean", both!(|t, x| unary(t, x, |t, a| t.mean(a))), one(r));

    let a = random_csr(r, 8, 0.35).row_normalize().unwrap();
    let op = Arc::new(SparseOperator::new(a));
    let op2 = op.clone();
    run(
        "spmm",
        (
            Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| {
                let v = params(t, x);
                let y = t.spmm(&op, v[0])?;
                Ok((probe_sum(t, y)?, v))
            }),
            Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| {
                let v = params(t, x);
                let y = t.spmm(&op2, v[0])?;
                Ok((probe_sum(t, y)?, v))
            }),
        ),
        vec![random_tensor(r, &[8, 3], -1.0, 1.0)],
    );

    let pattern = Arc::new(random_csr(r, 8, 0.35).with_identity().unwrap().pattern());
    let pat2 = pattern.clone();
    fn gat<T: Scalar>(
        t: &mut Tape<T>,
        x: &[Tensor<T>],
        p: &Arc<CsrMatrix>,
    ) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        let y = t.gat_aggregate(p, v[0], v[1], v[2], GAT_SLOPE)?;
        Ok((probe_sum(t, y)?, v))
    }
    run(
        "gat_aggregate",
        (
            Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| gat(t, x, &pattern)),
            Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| gat(t, x, &pat2)),
        ),
        vec![
            random_tensor(r, &[8, 3], -1.0, 1.0),
            random_tensor(r, &[8, 1], -1.5, 1.5),
            random_tensor(r, &[8, 1], -1.5, 1.5),
        ],
    );

    for kind in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage] {
        let adj = random_csr(r, 8, 0.35);
        let step = Arc::new(PreparedStep::new(kind, &adj).unwrap());
        let s2 = step.clone();
        let p = LayerParams::<f64>::init(kind, 4, 3, r);
        let mut inputs = vec![random_tensor(r, &[8, 4], -2.0, 2.0), p.w.clone()];
        inputs.extend(p.w_self.clone());
        inputs.extend(p.attn.clone());
        run(
            &format!("layer_{}", kind.name()),
            (
                Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| layer_case(t, x, kind, &step)),
                Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| layer_case(t, x, kind, &s2)),
            ),
            inputs,
        );
    }

    fn fusion<T: Scalar>(t: &mut Tape<T>, x: &[Tensor<T>]) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        let (e, att) = fuse_attention(t, &v[..3], v[3])?;
        let le = probe_sum(t, e)?;
        let la = probe_sum(t, att)?;
        Ok((t.add(le, la)?, v))
    }
    run(
        "fusion",
        both!(fusion),
        vec![
            random_tensor(r, &[5, 4], -1.0, 1.0),
            random_tensor(r, &[5, 4], -1.0, 1.0),
            random_tensor(r, &[5, 4], -1.0, 1.0),
            random_tensor(r, &[4, 3], -1.0, 1.0),
        ],
    );

    let (users, items) = (vec![0, 1, 2, 0], vec![1, 0, 2, 2]);
    let (u2, i2) = (users.clone(), items.clone());
    run(
        "mlp",
        (
            Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| mlp_case(t, x, &users, &items)),
            Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| mlp_case(t, x, &u2, &i2)),
        ),
        vec![
            random_tensor(r, &[3, 3], -1.0, 1.0),
            random_tensor(r, &[3, 3], -1.0, 1.0),
            random_tensor(r, &[6, 5], -1.0, 1.0),
            random_tensor(r, &[5], -0.5, 0.5),
            random_tensor(r, &[5, 1], -1.0, 1.0),
            random_tensor(r, &[1], -0.5, 0.5),
        ],
    );

    fn bpr<T: Scalar>(t: &mut Tape<T>, x: &[Tensor<T>]) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        Ok((bpr_loss_tape(t, v[0], v[1])?, v))
    }
    run(
        "bpr_loss",
        both!(bpr),
        vec![
            random_tensor(r, &[6, 1], -3.0, 3.0),
            random_tensor(r, &[6, 1], -3.0, 3.0),
        ],
    );

    let samples = vec![
        EntitySample {
            user: 0,
            user_pos: 3,
            user_neg: 4,
            item: 1,
            item_pos: 5,
            item_neg: 6,
        },
        EntitySample {
            user: 2,
            user_pos: 2,
            user_neg: 2,
            item: 1,
            item_pos: 6,
            item_neg: 5,
        },
        EntitySample {
            user: 0,
            user_pos: 4,
            user_neg: 3,
            item: 7,
            item_pos: 7,
            item_neg: 7,
        },
    ];
    let s2 = samples.clone();
    fn ent<T: Scalar>(
        t: &mut Tape<T>,
        x: &[Tensor<T>],
        s: &[EntitySample],
    ) -> peagnn::Result<(Var, Vec<Var>)> {
        let v = params(t, x);
        Ok((entity_loss_tape(t, v[0], s)?, v))
    }
    run(
        "entity_loss",
        (
            Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| ent(t, x, &samples)),
            Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| ent(t, x, &s2)),
        ),
        vec![random_tensor(r, &[8, 3], -1.0, 1.0)],
    );

    for kind in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage] {
        let fx = Arc::new(model_fixture(kind, seed + kind as u64));
        let b64 = fx.base.clone();
        let b32 = fx.base.cast::<f32>();
        let inputs: Vec<Tensor<f64>> = fx
            .base
            .named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let f2 = fx.clone();
        run(
            &format!("model_{}", kind.name()),
            (
                Box::new(move |t: &mut Tape<f64>, x: &[Tensor<f64>]| {
                    model_case(t, x, &fx, &b64, 0.5)
                }),
                Box::new(move |t: &mut Tape<f32>, x: &[Tensor<f32>]| {
                    model_case(t, x, &f2, &b32, 0.5)
                }),
            ),
            inputs,
        );
    }
    out
}

/// Reachability of hop-by-hop type-respecting walks, computed by brute
/// force from the relation edge lists. `result[(t, s)]` is true when some
/// instance of `mp` starts at `s` and ends at `t`.
pub fn dfs_metapath_pairs(hin: &Hin, mp: &Metapath) -> HashSet<(usize, usize)> {
    let neighbours = |node: usize, step: usize| -> Vec<usize> {
        let st = &mp.steps[step];
        let rel = hin.relation(&st.relation).expect("validated relation");
        let (s0, d0) = (hin.range(rel.src).start, hin.range(rel.dst).start);
        let mut out = Vec::new();
        for (r, c, _) in rel.matrix.triples() {
            let (a, b) = (s0 + r, d0 + c);
            if rel.src == st.src && rel.dst == st.dst && a == node {
                out.push(b);
            }
            if rel.src == st.dst && rel.dst == st.src && b == node {
                out.push(a);
            }
        }
        out
    };
    let mut pairs = HashSet::new();
    for s in hin.range(mp.steps[0].src) {
        let mut stack = vec![(s, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            if depth == mp.steps.len() {
                pairs.insert((node, s));
                continue;
            }
            for nb in neighbours(node, depth) {
                stack.push((nb, depth + 1));
            }
        }
    }
    pairs
}

/// Pairs connected by the product of the step adjacencies.
pub fn composed_pairs(hin: &Hin, mp: &Metapath) -> HashSet<(usize, usize)> {
    let adj = derive_step_adjacencies(mp, hin).unwrap();
    let n = hin.num_nodes();
    // reach[s] = set of nodes reachable from s after k hops
    let mut pairs = HashSet::new();
    for s in 0..n {
        let mut frontier: HashSet<usize> = HashSet::from([s]);
        for m in &adj.matrices {
            let mut next = HashSet::new();
            for t in 0..n {
                let (cols, vals) = m.row(t);
                if cols
                    .iter()
                    .zip(vals)
                    .any(|(c, v)| *v != 0.0 && frontier.contains(c))
                {
                    next.insert(t);
                }
            }
            frontier = next;
        }
        for t in frontier {
            pairs.insert((t, s));
        }
    }
    pairs
}

/// Random networks of at most 50 nodes.
pub fn oracle_config(rng: &mut ChaCha8Rng) -> RandomHinConfig {
    RandomHinConfig {
        users: rng.random_range(2..=12),
        items: rng.random_range(3..=15),
        years: rng.random_range(1..=4),
        genres: rng.random_range(1..=6),
        tags: rng.random_range(1..=6),
        rate_p: rng.random_range(0.05..0.5),
        feature_p: rng.random_range(0.05..0.5),
    }
}

pub struct OracleSummary {
    pub networks: usize,
    pub metapaths_checked: usize,
    pub mismatches: Vec<String>,
    pub max_nodes: usize,
}

/// Compares composed step adjacencies with exhaustive walks on `count`
/// random networks over every 2- and 3-hop metapath they admit.
pub fn metapath_oracle(count: usize, seed: u64) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = OracleSummary {
        networks: 0,
        metapaths_checked: 0,
        mismatches: Vec::new(),
        max_nodes: 0,
    };
    for k in 0..count {
        let cfg = oracle_config(&mut rng);
        let hin = random_hin(cfg, seed.wrapping_add(k as u64)).unwrap();
        assert!(hin.num_nodes() <= 50);
        summary.networks += 1;
        summary.max_nodes = summary.max_nodes.max(hin.num_nodes());
        for mp in enumerate_metapaths(&hin, 2, 3) {
            summary.metapaths_checked += 1;
            if composed_pairs(&hin, &mp) != dfs_metapath_pairs(&hin, &mp) {
                summary.mismatches.push(format!("network {k}: {}", mp.name));
            }
        }
    }
    summary
}

/// HR@10 and NDCG@10 of uniformly random scores.
pub fn random_score_calibration(users: usize, n_candidates: usize, seed: u64) -> (f64, f64) {
    use peagnn::eval::{hit_ratio_at_k, ndcg_at_k, pessimistic_rank};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hr, mut ndcg) = (0.0, 0.0);
    for _ in 0..users {
        let scores: Vec<f64> = (0..n_candidates).map(|_| rng.random()).collect();
        let target = rng.random_range(0..n_candidates);
        let rank = pessimistic_rank(&scores, target);
        hr += hit_ratio_at_k(rank, 10);
        ndcg += ndcg_at_k(rank, 10);
    }
    (hr / users as f64, ndcg / users as f64)
}
