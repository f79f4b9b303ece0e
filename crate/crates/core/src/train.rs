//! Mini-batch training with Adam and early stopping on validation HR@10.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{check_fusion_invariants, evaluate_leave_one_out};
use crate::hin::{
    leave_one_out_split, sample_eval_candidates, sample_train_negatives, CandidateList,
    CandidateTarget, FeatureIndex, FeatureKind, Hin, NodeType, SplitDataset, Triple,
};
use crate::layers::LayerKind;
use crate::metapath::{default_metapaths_movielens, validate_metapath, Metapath};
use crate::model::{
    bpr_loss_tape, entity_loss_tape, forward_tape, score_pairs_tape, total_loss_tape, EntitySample,
    ModelDims, ModelGraph, ModelParams,
};
use crate::par::ExecMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the entity-contrast loss.
    pub lambda: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub layer: LayerKind,
    /// Metapath names; empty selects the MovieLens defaults for the network.
    pub metapaths: Vec<String>,
    /// Sampled negatives per training interaction.
    pub neg_ratio: usize,
    /// Candidates per held-out user (target included).
    pub n_candidates: usize,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1024,
            lr: 0.001,
            lambda: 0.1,
            epochs: 100,
            patience: 10,
            seed: 0,
            layer: LayerKind::Sage,
            metapaths: Vec::new(),
            neg_ratio: 4,
            n_candidates: 100,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.neg_ratio == 0 {
            return fail("neg_ratio must be positive".into());
        }
        if self.n_candidates < 11 {
            return fail(format!(
                "n_candidates must be at least 11, got {}",
                self.n_candidates
            ));
        }
        if self.dims.embed == 0 || self.dims.repr == 0 || self.dims.hidden == 0 {
            return fail("model dimensions must be positive".into());
        }
        Ok(())
    }

    /// Parsed metapaths, validated against `hin`.
    pub fn resolve_metapaths(&self, hin: &Hin) -> Result<Vec<Metapath>> {
        let mps = if self.metapaths.is_empty() {
            let enriched = [
                FeatureKind::Actor,
                FeatureKind::Director,
                FeatureKind::Writer,
            ]
            .iter()
            .all(|&k| hin.has_type(NodeType::Feature(k)));
            default_metapaths_movielens(enriched)
        } else {
            self.metapaths
                .iter()
                .map(|n| Metapath::parse(n))
                .collect::<Result<Vec<_>>>()?
        };
        for mp in &mps {
            validate_metapath(mp, hin)?;
        }
        Ok(mps)
    }
}

/// Independent seed for one purpose (`stream`) derived from a run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.next_u64()
}

const STREAM_SPLIT: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_PROBE: u64 = 5;
const STREAM_EPOCH: u64 = 1000;

/// Split, training graph and fixed candidate lists for one run.
#[derive(Clone, Debug)]
pub struct TrainingData {
    /// The full (filtered) network; candidates and labels refer to it.
    pub hin: Hin,
    pub split: SplitDataset,
    /// Same nodes and features, `rated` restricted to training interactions.
    pub train_hin: Hin,
    pub features: FeatureIndex,
    pub validation: Vec<CandidateList>,
    pub test: Vec<CandidateList>,
}

impl TrainingData {
    pub fn prepare(hin: Hin, seed: u64, n_candidates: usize) -> Result<Self> {
        let split = leave_one_out_split(&hin, sub_seed(seed, STREAM_SPLIT))?;
        let train_hin = hin.with_interactions(&split.train)?;
        let features = FeatureIndex::new(&hin);
        let validation = sample_eval_candidates(
            &split,
            &hin,
            CandidateTarget::Validation,
            n_candidates,
            sub_seed(seed, STREAM_VALIDATION),
        )?;
        let test = sample_eval_candidates(
            &split,
            &hin,
            CandidateTarget::Test,
            n_candidates,
            sub_seed(seed, STREAM_TEST),
        )?;
        Ok(TrainingData {
            hin,
            split,
            train_hin,
            features,
            validation,
            test,
        })
    }
}

/// First and second moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = shapes
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(params: &ModelParams<T>) -> Self {
        let named = params.named_tensors();
        let refs: Vec<&Tensor<T>> = named.iter().map(|(_, t)| *t).collect();
        Self::new(&refs)
    }
}

/// One bias-corrected Adam update. Gradients are checked for NaN/inf
/// before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dims(
            "adam",
            &[params.len()],
            &[grads.len(), state.m.len()],
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(Error::dims("adam", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient in parameter tensor {k}"
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps, one) = (T::of(lr), T::of(state.eps), T::one());
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_cf: f64,
    pub loss_entity: f64,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
    pub seconds: f64,
    /// Mean `d(x, f₋) − d(x, f₊)` over a fixed probe set of contrast pairs.
    pub entity_gap: f64,
    pub batches: usize,
    /// Triples whose user and item both lacked a contrast pair.
    pub entity_skipped: usize,
    /// Worst `|Σ att − 1|` over all nodes at validation time.
    pub fusion_simplex_error: f64,
    /// Worst change of attention or fused output when every importance
    /// score is shifted by [`FUSION_SHIFT`].
    pub fusion_shift_error: f64,
}

/// Constant added to the fusion scores when checking shift invariance.
pub const FUSION_SHIFT: f64 = 10.0;

/// `epoch,loss_cf,loss_entity,val_hr10,val_ndcg10,seconds`
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss_cf,loss_entity,val_hr10,val_ndcg10,seconds\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            h.epoch, h.loss_cf, h.loss_entity, h.val_hr10, h.val_ndcg10, h.seconds
        );
    }
    s
}

pub fn write_history_csv(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

fn local(ids: impl Iterator<Item = usize>, start: usize) -> Vec<usize> {
    ids.map(|g| g - start).collect()
}

/// Mean losses of one pass over freshly sampled triples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub loss_cf: f64,
    pub loss_entity: f64,
    pub batches: usize,
    pub entity_skipped: usize,
}

/// Samples `neg_ratio` negatives per training interaction, shuffles, and
/// takes one Adam step per batch on `L_CF + λ·L_entity`.
pub fn train_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    graph: &ModelGraph,
    data: &TrainingData,
    config: &TrainConfig,
    epoch_seed: u64,
    mode: ExecMode,
) -> Result<EpochLosses> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut triples: Vec<Triple> =
        sample_train_negatives(&data.split, &data.hin, config.neg_ratio, rng.next_u64())?;
    triples.shuffle(&mut rng);
    let (u0, i0) = (graph.users.start, graph.items.start);
    let mut sum_cf = 0.0;
    let mut sum_ent = 0.0;
    let mut batches = 0;
    let mut skipped = 0;
    let mut ent_weight = 0usize;
    for batch in triples.chunks(config.batch_size) {
        let mut tape = Tape::<f32>::with_mode(mode);
        let pv = params.register(&mut tape);
        let fused = forward_tape(&mut tape, params, &pv, graph)?;
        let users = local(batch.iter().map(|t| t.user), u0);
        let mut both_users = users.clone();
        both_users.extend_from_slice(&users);
        let mut items = local(batch.iter().map(|t| t.pos), i0);
        items.extend(batch.iter().map(|t| t.neg - i0));
        let scores = score_pairs_tape(&mut tape, &pv, &fused, &both_users, &items)?;
        let b = batch.len();
        let pos = tape.slice_rows(scores, 0, b)?;
        let neg = tape.slice_rows(scores, b, 2 * b)?;
        let cf = bpr_loss_tape(&mut tape, pos, neg)?;
        let cf_value = tape.value(cf).item()? as f64;
        let loss = if config.lambda > 0.0 {
            let samples: Vec<EntitySample> = batch
                .iter()
                .filter_map(|t| {
                    let uc = data.features.sample(t.user, &mut rng);
                    let ic = data.features.sample(t.pos, &mut rng);
                    EntitySample::new(t.user, uc, t.pos, ic)
                })
                .collect();
            skipped += b - samples.len();
            let ent = entity_loss_tape(&mut tape, pv.embeddings, &samples)?;
            sum_ent += tape.value(ent).item()? as f64 * samples.len() as f64;
            ent_weight += samples.len();
            total_loss_tape(&mut tape, cf, ent, config.lambda)?
        } else {
            cf
        };
        let total = tape.value(loss).item()?;
        if !total.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {total} in batch {batches}"
            )));
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor<f32>> = pv.all().into_iter().map(|v| grads.get(v)).collect();
        let mut ps = params.tensors_mut();
        adam_step(&mut ps, &g, adam, config.lr)?;
        sum_cf += cf_value * b as f64;
        batches += 1;
    }
    Ok(EpochLosses {
        loss_cf: sum_cf / triples.len().max(1) as f64,
        loss_entity: if ent_weight > 0 {
            sum_ent / ent_weight as f64
        } else {
            0.0
        },
        batches,
        entity_skipped: skipped,
    })
}

/// Mean contrast gap over `samples` on the embedding table.
pub fn entity_gap(params: &ModelParams, samples: &[EntitySample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let e = &params.embeddings;
    let d = |a: usize, b: usize| -> f64 {
        e.row(a)
            .iter()
            .zip(e.row(b))
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum()
    };
    samples
        .iter()
        .map(|s| {
            (d(s.user, s.user_neg) - d(s.user, s.user_pos))
                + (d(s.item, s.item_neg) - d(s.item, s.item_pos))
        })
        .sum::<f64>()
        / samples.len() as f64
}

fn probe_samples(data: &TrainingData, seed: u64) -> Vec<EntitySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.split
        .train
        .iter()
        .step_by((data.split.train.len() / 2000).max(1))
        .filter_map(|it| {
            let uc = data.features.sample(it.user, &mut rng);
            let ic = data.features.sample(it.item, &mut rng);
            EntitySample::new(it.user, uc, it.item, ic)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters of the epoch with the best validation HR@10.
    pub best: ModelParams,
    /// 1-based; 0 when no epoch finished.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Gap of the probe contrast pairs before training.
    pub initial_entity_gap: f64,
    /// Why training ended before the epoch budget, if it did.
    pub stopped: Option<String>,
    /// Set when training aborted on a numerical failure; `best` is then the
    /// last good state.
    pub aborted: Option<String>,
}

/// Initializes a model from the config and trains it.
pub fn fit(data: &TrainingData, config: &TrainConfig, mode: ExecMode) -> Result<FitResult> {
    config.validate()?;
    let metapaths = config.resolve_metapaths(&data.train_hin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_INIT));
    let params = ModelParams::init(
        data.hin.num_nodes(),
        config.layer,
        metapaths,
        config.dims,
        &mut rng,
    )?;
    fit_from(params, data, config, mode)
}

/// Trains `params` with early stopping on validation HR@10.
pub fn fit_from(
    mut params: ModelParams,
    data: &TrainingData,
    config: &TrainConfig,
    mode: ExecMode,
) -> Result<FitResult> {
    config.validate()?;
    let graph = ModelGraph::build(&data.train_hin, &params.metapaths, params.layer)?;
    let mut adam = AdamState::for_model(&params);
    let probe = probe_samples(data, sub_seed(config.seed, STREAM_PROBE));
    let initial_entity_gap = entity_gap(&params, &probe);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_hr = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped = None;
    let mut aborted = None;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let seed = sub_seed(config.seed, STREAM_EPOCH + epoch as u64);
        let losses = match train_epoch(&mut params, &mut adam, &graph, data, config, seed, mode) {
            Ok(l) => l,
            Err(Error::Training(msg)) => {
                log::error!("epoch {epoch}: {msg}");
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !params.is_finite() {
            aborted = Some(format!("epoch {epoch}: parameters became non-finite"));
            break;
        }
        let val =
            evaluate_leave_one_out(&params, &graph, &data.validation, None, config.seed, mode)?;
        let fusion = check_fusion_invariants(&params, &graph, FUSION_SHIFT, mode)?;
        let stats = EpochStats {
            epoch,
            loss_cf: losses.loss_cf,
            loss_entity: losses.loss_entity,
            val_hr10: val.hr_at_10,
            val_ndcg10: val.ndcg_at_10,
            seconds: start.elapsed().as_secs_f64(),
            entity_gap: entity_gap(&params, &probe),
            batches: losses.batches,
            entity_skipped: losses.entity_skipped,
            fusion_simplex_error: fusion.simplex_error,
            fusion_shift_error: fusion.shift_error,
        };
        log::info!(
            "epoch {epoch}: loss_cf {:.4} loss_entity {:.4} val HR@10 {:.4} NDCG@10 {:.4} ({:.1}s)",
            stats.loss_cf,
            stats.loss_entity,
            stats.val_hr10,
            stats.val_ndcg10,
            stats.seconds
        );
        history.push(stats);
        if val.hr_at_10 > best_hr {
            best_hr = val.hr_at_10;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped = Some(format!(
                    "no validation improvement for {} epochs; best epoch {best_epoch}",
                    config.patience
                ));
                break;
            }
        }
    }
    Ok(FitResult {
        best,
        best_epoch,
        history,
        initial_entity_gap,
        stopped,
        aborted,
    })
}
