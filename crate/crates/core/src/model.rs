//! The recommender: per-metapath propagation, node-wise attentive fusion,
//! pair readout with an MLP scorer, and the BPR and entity-contrast losses.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::log_sigmoid;
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hin::{Contrast, Hin, NodeType};
use crate::layers::{apply_layer, xavier_uniform, LayerKind, LayerParams, LayerVars, PreparedStep};
use crate::metapath::{derive_step_adjacencies, Metapath, StepAdjacency};
use crate::par::ExecMode;

/// Standard deviation of the initial node embeddings.
pub const EMBED_INIT_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Width of the embedding table `X_0`.
    pub embed: usize,
    /// Width of every propagated and fused representation.
    pub repr: usize,
    /// Hidden width of the scoring MLP.
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 64,
            repr: 16,
            hidden: 64,
        }
    }
}

/// Two-layer scorer `w2ᵀ·ReLU(w1ᵀ·e_g + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    /// `2·repr × hidden`
    pub w1: Tensor<T>,
    /// `hidden`
    pub b1: Tensor<T>,
    /// `hidden × 1`
    pub w2: Tensor<T>,
    /// `1`
    pub b2: Tensor<T>,
}

/// All trainable state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub layer: LayerKind,
    pub dims: ModelDims,
    pub metapaths: Vec<Metapath>,
    /// `V × embed`
    pub embeddings: Tensor<T>,
    /// One layer per (metapath, hop).
    pub layers: Vec<Vec<LayerParams<T>>>,
    /// `repr × γ_u`, one column per user-ending metapath.
    pub fusion_user: Tensor<T>,
    /// `repr × γ_i`, one column per item-ending metapath.
    pub fusion_item: Tensor<T>,
    pub mlp: Mlp<T>,
}

/// Indices of the metapaths ending at users and at items, in config order.
pub fn split_by_terminal(metapaths: &[Metapath]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut users = Vec::new();
    let mut items = Vec::new();
    for (k, mp) in metapaths.iter().enumerate() {
        match mp.terminal() {
            NodeType::User => users.push(k),
            NodeType::Item => items.push(k),
            t => {
                return Err(Error::Metapath {
                    name: mp.name.clone(),
                    reason: format!("ends at {t}"),
                })
            }
        }
    }
    if users.is_empty() || items.is_empty() {
        return Err(Error::Config(format!(
            "need at least one metapath ending at each of user and item; have {} and {}",
            users.len(),
            items.len()
        )));
    }
    Ok((users, items))
}

impl<T: Scalar> ModelParams<T> {
    /// Embeddings from `N(0, 0.1²)`, weights Xavier-uniform, biases zero.
    pub fn init<R: Rng + ?Sized>(
        num_nodes: usize,
        layer: LayerKind,
        metapaths: Vec<Metapath>,
        dims: ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let (up, ip) = split_by_terminal(&metapaths)?;
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("positive std");
        let emb: Vec<T> = (0..num_nodes * dims.embed)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        let embeddings = Tensor::new(vec![num_nodes, dims.embed], emb)?;
        let layers = metapaths
            .iter()
            .map(|mp| {
                (0..mp.n_hops())
                    .map(|k| {
                        let d_in = if k == 0 { dims.embed } else { dims.repr };
                        LayerParams::init(layer, d_in, dims.repr, rng)
                    })
                    .collect()
            })
            .collect();
        let fusion_user = xavier_uniform(dims.repr, up.len(), rng);
        let fusion_item = xavier_uniform(dims.repr, ip.len(), rng);
        let mlp = Mlp {
            w1: xavier_uniform(2 * dims.repr, dims.hidden, rng),
            b1: Tensor::zeros(vec![dims.hidden]),
            w2: xavier_uniform(dims.hidden, 1, rng),
            b2: Tensor::zeros(vec![1]),
        };
        Ok(ModelParams {
            layer,
            dims,
            metapaths,
            embeddings,
            layers,
            fusion_user,
            fusion_item,
            mlp,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn user_paths(&self) -> Vec<usize> {
        split_by_terminal(&self.metapaths).map_or_else(|_| Vec::new(), |(u, _)| u)
    }

    pub fn item_paths(&self) -> Vec<usize> {
        split_by_terminal(&self.metapaths).map_or_else(|_| Vec::new(), |(_, i)| i)
    }

    /// Every parameter tensor with a stable name, in the canonical order
    /// shared by [`ModelParams::tensors_mut`] and [`ParamVars::all`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (mp, layers) in self.metapaths.iter().zip(&self.layers) {
            for (k, l) in layers.iter().enumerate() {
                out.push((format!("layer.{}.{}.w", mp.name, k + 1), &l.w));
                if let Some(t) = &l.w_self {
                    out.push((format!("layer.{}.{}.w_self", mp.name, k + 1), t));
                }
                if let Some(t) = &l.attn {
                    out.push((format!("layer.{}.{}.attn", mp.name, k + 1), t));
                }
            }
        }
        out.push(("fusion_user".into(), &self.fusion_user));
        out.push(("fusion_item".into(), &self.fusion_item));
        out.push(("mlp.w1".into(), &self.mlp.w1));
        out.push(("mlp.b1".into(), &self.mlp.b1));
        out.push(("mlp.w2".into(), &self.mlp.w2));
        out.push(("mlp.b2".into(), &self.mlp.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embeddings];
        for layers in &mut self.layers {
            for l in layers {
                out.extend(l.tensors_mut());
            }
        }
        out.push(&mut self.fusion_user);
        out.push(&mut self.fusion_item);
        out.push(&mut self.mlp.w1);
        out.push(&mut self.mlp.b1);
        out.push(&mut self.mlp.w2);
        out.push(&mut self.mlp.b2);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layer: self.layer,
            dims: self.dims,
            metapaths: self.metapaths.clone(),
            embeddings: self.embeddings.cast(),
            layers: self
                .layers
                .iter()
                .map(|ls| ls.iter().map(LayerParams::cast).collect())
                .collect(),
            fusion_user: self.fusion_user.cast(),
            fusion_item: self.fusion_item.cast(),
            mlp: Mlp {
                w1: self.mlp.w1.cast(),
                b1: self.mlp.b1.cast(),
                w2: self.mlp.w2.cast(),
                b2: self.mlp.b2.cast(),
            },
        }
    }

    /// Records every parameter as a trainable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            embeddings: tape.param(self.embeddings.clone()),
            layers: self
                .layers
                .iter()
                .map(|ls| ls.iter().map(|l| l.register(tape)).collect())
                .collect(),
            fusion_user: tape.param(self.fusion_user.clone()),
            fusion_item: tape.param(self.fusion_item.clone()),
            w1: tape.param(self.mlp.w1.clone()),
            b1: tape.param(self.mlp.b1.clone()),
            w2: tape.param(self.mlp.w2.clone()),
            b2: tape.param(self.mlp.b2.clone()),
        }
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embeddings: Var,
    pub layers: Vec<Vec<LayerVars>>,
    pub fusion_user: Var,
    pub fusion_item: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ParamVars {
    /// Handles in the order of [`ModelParams::tensors_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.embeddings];
        for ls in &self.layers {
            for l in ls {
                out.extend(l.all());
            }
        }
        out.extend([
            self.fusion_user,
            self.fusion_item,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
        ]);
        out
    }
}

/// Per-metapath hop adjacencies prepared for one layer kind, plus the user
/// and item id ranges.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub kind: LayerKind,
    pub steps: Vec<Vec<PreparedStep>>,
    pub users: Range<usize>,
    pub items: Range<usize>,
    pub num_nodes: usize,
}

impl ModelGraph {
    pub fn build(hin: &Hin, metapaths: &[Metapath], kind: LayerKind) -> Result<Self> {
        let adjs = metapaths
            .iter()
            .map(|mp| derive_step_adjacencies(mp, hin))
            .collect::<Result<Vec<_>>>()?;
        Self::from_adjacencies(&adjs, kind, hin.users(), hin.items(), hin.num_nodes())
    }

    pub fn from_adjacencies(
        adjs: &[StepAdjacency],
        kind: LayerKind,
        users: Range<usize>,
        items: Range<usize>,
        num_nodes: usize,
    ) -> Result<Self> {
        let steps = adjs
            .iter()
            .map(|a| {
                a.matrices
                    .iter()
                    .map(|m| {
                        if m.n_rows() != num_nodes {
                            return Err(Error::dims("step adjacency", &[m.n_rows()], &[num_nodes]));
                        }
                        PreparedStep::new(kind, m)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelGraph {
            kind,
            steps,
            users,
            items,
            num_nodes,
        })
    }

    fn check<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.layer != self.kind {
            return Err(Error::Contract(format!(
                "{} parameters on a graph prepared for {}",
                params.layer, self.kind
            )));
        }
        if params.num_nodes() != self.num_nodes {
            return Err(Error::dims(
                "embeddings",
                params.embeddings.shape(),
                &[self.num_nodes, params.dims.embed],
            ));
        }
        if params.layers.len() != self.steps.len() {
            return Err(Error::Contract(format!(
                "{} metapaths in the model, {} in the graph",
                params.layers.len(),
                self.steps.len()
            )));
        }
        Ok(())
    }
}

/// `X_{mp,k} = ReLU(GNN_{mp,k}(X_{mp,k-1}, A_{mp,k}))` for every hop of one
/// metapath; returns the last `V × repr` representation.
pub fn metapath_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    graph: &ModelGraph,
    mp: usize,
) -> Result<Var> {
    let steps = graph.steps.get(mp).ok_or(Error::Index {
        context: "metapath",
        index: mp,
        len: graph.steps.len(),
    })?;
    let layers = &pv.layers[mp];
    if layers.len() != steps.len() {
        return Err(Error::Contract(format!(
            "metapath {mp} has {} hops but {} layers",
            steps.len(),
            layers.len()
        )));
    }
    let mut x = pv.embeddings;
    for (step, layer) in steps.iter().zip(layers) {
        x = apply_layer(tape, x, step, layer)?;
    }
    Ok(x)
}

/// Node-wise attention over `γ` representations of the same nodes:
/// `c_v[i] = w[:, i] · x_v^{(i)}`, `att_v = softmax(c_v)`,
/// `e_v = Σ_i att_v[i] · x_v^{(i)}`. Returns `(e, att)`.
pub fn fuse_attention<T: Scalar>(tape: &mut Tape<T>, reprs: &[Var], w: Var) -> Result<(Var, Var)> {
    if reprs.is_empty() {
        return Err(Error::Contract("fusion over zero metapaths".into()));
    }
    let (_, d) = tape.value(reprs[0]).matrix_dims("fusion")?;
    let (wr, wc) = tape.value(w).matrix_dims("fusion weight")?;
    if wr != d || wc != reprs.len() {
        return Err(Error::dims("fusion weight", &[wr, wc], &[d, reprs.len()]));
    }
    let mut scores = Vec::with_capacity(reprs.len());
    for (i, &h) in reprs.iter().enumerate() {
        let col = tape.slice_cols(w, i, i + 1)?;
        scores.push(tape.matmul(h, col)?);
    }
    let c = tape.concat_cols(&scores)?;
    let att = tape.softmax_rows(c)?;
    let mut e: Option<Var> = None;
    for (i, &h) in reprs.iter().enumerate() {
        let a = tape.slice_cols(att, i, i + 1)?;
        let part = tape.scale_rows(h, a)?;
        e = Some(match e {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    Ok((e.expect("non-empty"), att))
}

/// Tape handles of the fused user and item representations.
#[derive(Clone, Copy, Debug)]
pub struct FusedVars {
    /// `V_u × repr`, row `k` is user `users.start + k`.
    pub e_user: Var,
    /// `V_i × repr`, row `k` is item `items.start + k`.
    pub e_item: Var,
    pub att_user: Var,
    pub att_item: Var,
}

/// Runs every metapath and fuses user-ending paths into user
/// representations and item-ending paths into item representations.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    pv: &ParamVars,
    graph: &ModelGraph,
) -> Result<FusedVars> {
    graph.check(params)?;
    let (up, ip) = split_by_terminal(&params.metapaths)?;
    let mut reprs = Vec::with_capacity(graph.steps.len());
    for mp in 0..graph.steps.len() {
        reprs.push(metapath_aggregate(tape, pv, graph, mp)?);
    }
    let rows = |tape: &mut Tape<T>, idx: &[usize], r: &Range<usize>| {
        idx.iter()
            .map(|&k| tape.slice_rows(reprs[k], r.start, r.end))
            .collect::<Result<Vec<_>>>()
    };
    let hu = rows(tape, &up, &graph.users)?;
    let hi = rows(tape, &ip, &graph.items)?;
    let (e_user, att_user) = fuse_attention(tape, &hu, pv.fusion_user)?;
    let (e_item, att_item) = fuse_attention(tape, &hi, pv.fusion_item)?;
    Ok(FusedVars {
        e_user,
        e_item,
        att_user,
        att_item,
    })
}

/// Scores `(users[k], items[k])` pairs given as type-local row indices;
/// returns a `B × 1` column.
pub fn score_pairs_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    fused: &FusedVars,
    users: &[usize],
    items: &[usize],
) -> Result<Var> {
    if users.len() != items.len() {
        return Err(Error::dims("score pairs", &[users.len()], &[items.len()]));
    }
    let eu = tape.gather_rows(fused.e_user, users)?;
    let ei = tape.gather_rows(fused.e_item, items)?;
    let eg = tape.concat_cols(&[eu, ei])?;
    let h = tape.matmul(eg, pv.w1)?;
    let h = tape.add_row_bias(h, pv.b1)?;
    let h = tape.relu(h);
    let s = tape.matmul(h, pv.w2)?;
    tape.add_row_bias(s, pv.b2)
}

/// Mean of `−ln σ(pos − neg)`.
pub fn bpr_loss_tape<T: Scalar>(tape: &mut Tape<T>, pos: Var, neg: Var) -> Result<Var> {
    if tape.value(pos).shape() != tape.value(neg).shape() {
        return Err(Error::dims(
            "bpr",
            tape.value(pos).shape(),
            tape.value(neg).shape(),
        ));
    }
    let diff = tape.sub(pos, neg)?;
    let ls = tape.log_sigmoid(diff);
    let m = tape.mean(ls)?;
    Ok(tape.scale(m, -T::one()))
}

/// Contrast nodes for one training triple. A side without a usable
/// contrast pair points both samples at the node itself, so its distance
/// gap is exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntitySample {
    pub user: usize,
    pub user_pos: usize,
    pub user_neg: usize,
    pub item: usize,
    pub item_pos: usize,
    pub item_neg: usize,
}

impl EntitySample {
    /// `None` when neither side has a contrast pair.
    pub fn new(user: usize, user_c: Contrast, item: usize, item_c: Contrast) -> Option<Self> {
        let side = |node, c| match c {
            Contrast::Pair { pos, neg } => (pos, neg),
            Contrast::Skip => (node, node),
        };
        if user_c == Contrast::Skip && item_c == Contrast::Skip {
            return None;
        }
        let (user_pos, user_neg) = side(user, user_c);
        let (item_pos, item_neg) = side(item, item_c);
        Some(EntitySample {
            user,
            user_pos,
            user_neg,
            item,
            item_pos,
            item_neg,
        })
    }
}

fn sq_dist<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    tape.sum_rows(d2)
}

/// Mean over samples of `−ln σ[(d(u,f₋) − d(u,f₊)) + (d(i,f₋) − d(i,f₊))]`
/// with squared Euclidean `d` on the embedding table.
pub fn entity_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    embeddings: Var,
    samples: &[EntitySample],
) -> Result<Var> {
    if samples.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let mut g = |f: fn(&EntitySample) -> usize| {
        let ids: Vec<usize> = samples.iter().map(f).collect();
        tape.gather_rows(embeddings, &ids)
    };
    let u = g(|s| s.user)?;
    let up = g(|s| s.user_pos)?;
    let un = g(|s| s.user_neg)?;
    let i = g(|s| s.item)?;
    let ip = g(|s| s.item_pos)?;
    let inn = g(|s| s.item_neg)?;
    let d_un = sq_dist(tape, u, un)?;
    let d_up = sq_dist(tape, u, up)?;
    let d_in = sq_dist(tape, i, inn)?;
    let d_ip = sq_dist(tape, i, ip)?;
    let gu = tape.sub(d_un, d_up)?;
    let gi = tape.sub(d_in, d_ip)?;
    let arg = tape.add(gu, gi)?;
    let ls = tape.log_sigmoid(arg);
    let m = tape.mean(ls)?;
    Ok(tape.scale(m, -T::one()))
}

/// `L_CF + λ·L_entity`.
pub fn total_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cf: Var,
    entity: Var,
    lambda: f64,
) -> Result<Var> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "entity weight must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(cf);
    }
    let e = tape.scale(entity, T::of(lambda));
    tape.add(cf, e)
}

/// Fused representations and attention factors, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedRepr<T: Scalar = f32> {
    pub e_user: Tensor<T>,
    pub e_item: Tensor<T>,
    /// `V_u × γ_u` node-wise attention.
    pub att_user: Tensor<T>,
    /// `V_i × γ_i` node-wise attention.
    pub att_item: Tensor<T>,
    pub user_paths: Vec<String>,
    pub item_paths: Vec<String>,
    pub users: Range<usize>,
    pub items: Range<usize>,
}

impl<T: Scalar> FusedRepr<T> {
    /// `concat(e_u, e_i)` for global user id `u` and item id `i`.
    pub fn readout(&self, u: usize, i: usize) -> Result<Vec<T>> {
        if !self.users.contains(&u) {
            return Err(Error::Contract(format!("node {u} is not a user")));
        }
        if !self.items.contains(&i) {
            return Err(Error::Contract(format!("node {i} is not an item")));
        }
        let mut e = self.e_user.row(u - self.users.start).to_vec();
        e.extend_from_slice(self.e_item.row(i - self.items.start));
        Ok(e)
    }

    pub fn score(&self, mlp: &Mlp<T>, u: usize, i: usize) -> Result<T> {
        Ok(predict_score(&self.readout(u, i)?, mlp))
    }
}

/// Full forward pass without gradients.
pub fn forward_all<T: Scalar>(
    params: &ModelParams<T>,
    graph: &ModelGraph,
    mode: ExecMode,
) -> Result<FusedRepr<T>> {
    let mut tape = Tape::with_mode(mode);
    let pv = params.register(&mut tape);
    let f = forward_tape(&mut tape, params, &pv, graph)?;
    let (up, ip) = split_by_terminal(&params.metapaths)?;
    let names = |idx: Vec<usize>| {
        idx.into_iter()
            .map(|k| params.metapaths[k].name.clone())
            .collect()
    };
    Ok(FusedRepr {
        e_user: tape.value(f.e_user).clone(),
        e_item: tape.value(f.e_item).clone(),
        att_user: tape.value(f.att_user).clone(),
        att_item: tape.value(f.att_item).clone(),
        user_paths: names(up),
        item_paths: names(ip),
        users: graph.users.clone(),
        items: graph.items.clone(),
    })
}

/// `concat(e_u, e_i)`.
pub fn readout_graph_level<T: Scalar>(fused: &FusedRepr<T>, u: usize, i: usize) -> Result<Vec<T>> {
    fused.readout(u, i)
}

/// `w2ᵀ·ReLU(w1ᵀ·e_g + b1) + b2`.
pub fn predict_score<T: Scalar>(e_g: &[T], mlp: &Mlp<T>) -> T {
    let hidden = mlp.w1.cols();
    let w1 = mlp.w1.data();
    let mut h = mlp.b1.data().to_vec();
    for (r, &x) in e_g.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (hv, &w) in h.iter_mut().zip(&w1[r * hidden..(r + 1) * hidden]) {
            *hv += x * w;
        }
    }
    let mut s = mlp.b2.data()[0];
    for (hv, &w) in h.iter().zip(mlp.w2.data()) {
        if *hv > T::zero() {
            s += *hv * w;
        }
    }
    s
}

/// Mean of `−ln σ(pos − neg)` over paired scores.
pub fn bpr_loss<T: Scalar>(pos: &[T], neg: &[T]) -> Result<T> {
    if pos.len() != neg.len() {
        return Err(Error::dims("bpr", &[pos.len()], &[neg.len()]));
    }
    if pos.is_empty() {
        return Err(Error::Contract("bpr over zero triples".into()));
    }
    let s: T = pos
        .iter()
        .zip(neg)
        .map(|(&p, &n)| -log_sigmoid(p - n))
        .sum();
    Ok(s / T::of(pos.len() as f64))
}

/// Eager counterpart of [`entity_loss_tape`].
pub fn entity_loss<T: Scalar>(embeddings: &Tensor<T>, samples: &[EntitySample]) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let d = |a: usize, b: usize| -> T {
        embeddings
            .row(a)
            .iter()
            .zip(embeddings.row(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum()
    };
    let s: T = samples
        .iter()
        .map(|s| {
            let arg = (d(s.user, s.user_neg) - d(s.user, s.user_pos))
                + (d(s.item, s.item_neg) - d(s.item, s.item_pos));
            -log_sigmoid(arg)
        })
        .sum();
    s / T::of(samples.len() as f64)
}

pub fn total_loss<T: Scalar>(l_cf: T, l_entity: T, lambda: f64) -> Result<T> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "entity weight must be >= 0, got {lambda}"
        )));
    }
    Ok(l_cf + T::of(lambda) * l_entity)
}
