//! Run configuration, end-to-end runs, run directories and metapath ablation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::{
    attention_csv, attention_report, check_fusion_invariants, evaluate_leave_one_out, EvalReport,
    FusionCheck,
};
use crate::hin::{ingest_movielens_with, kcore_filter, load_hin, Hin, IngestOptions};
use crate::layers::LayerKind;
use crate::metapath::Metapath;
use crate::model::{forward_all, split_by_terminal, ModelDims, ModelGraph};
use crate::par::ExecMode;
use crate::train::{fit, write_history_csv, FitResult, TrainConfig, TrainingData, FUSION_SHIFT};

/// Everything needed to reproduce one run. Serialized as flat JSON; unknown
/// keys are rejected so typos do not silently fall back to defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Raw MovieLens directory (`ratings.csv`, `movies.csv`, `tags.csv`).
    pub data_dir: Option<PathBuf>,
    /// Previously ingested network; takes precedence over `data_dir`.
    pub hin_dir: Option<PathBuf>,
    /// Supplemental actor/director/writer file for ingestion.
    pub extra_features: Option<PathBuf>,
    /// k of the k-core filter applied after raw ingestion.
    pub kcore: usize,
    pub out: Option<PathBuf>,
    pub layer: LayerKind,
    pub metapaths: Vec<String>,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub neg_ratio: usize,
    pub n_candidates: usize,
    pub embed_dim: usize,
    pub repr_dim: usize,
    pub hidden_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            data_dir: None,
            hin_dir: None,
            extra_features: None,
            kcore: 10,
            out: None,
            layer: t.layer,
            metapaths: t.metapaths,
            batch_size: t.batch_size,
            lr: t.lr,
            lambda: t.lambda,
            epochs: t.epochs,
            patience: t.patience,
            seed: t.seed,
            neg_ratio: t.neg_ratio,
            n_candidates: t.n_candidates,
            embed_dim: t.dims.embed,
            repr_dim: t.dims.repr,
            hidden_dim: t.dims.hidden,
        }
    }
}

/// Keys that locate inputs and outputs but do not change results.
const PATH_KEYS: [&str; 4] = ["data_dir", "hin_dir", "extra_features", "out"];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            lambda: self.lambda,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            layer: self.layer,
            metapaths: self.metapaths.clone(),
            neg_ratio: self.neg_ratio,
            n_candidates: self.n_candidates,
            dims: ModelDims {
                embed: self.embed_dim,
                repr: self.repr_dim,
                hidden: self.hidden_dim,
            },
        }
    }

    /// sha256 over the result-relevant settings. Paths are ignored and the
    /// metapath list is order-insensitive.
    pub fn config_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        let map = v.as_object_mut().expect("struct serializes to an object");
        for k in PATH_KEYS {
            map.remove(k);
        }
        let mut mps = self.metapaths.clone();
        mps.sort();
        map.insert("metapaths".into(), serde_json::to_value(mps)?);
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
    }

    /// Same config with the metapath list spelled out.
    pub fn resolved(&self, hin: &Hin) -> Result<RunConfig> {
        let mps = self.train_config().resolve_metapaths(hin)?;
        Ok(RunConfig {
            metapaths: mps.into_iter().map(|m| m.name).collect(),
            ..self.clone()
        })
    }

    /// The network named by `hin_dir`, or ingested from `data_dir` and
    /// k-core filtered.
    pub fn load_network(&self) -> Result<Hin> {
        if let Some(dir) = &self.hin_dir {
            return load_hin(dir);
        }
        let Some(dir) = &self.data_dir else {
            return Err(Error::Config("neither hin_dir nor data_dir is set".into()));
        };
        let opts = IngestOptions {
            extra_features: self.extra_features.clone(),
            skip_tags: false,
        };
        let raw = ingest_movielens_with(dir, &opts)?;
        if self.kcore > 1 {
            kcore_filter(&raw, self.kcore)
        } else {
            Ok(raw)
        }
    }
}

/// Result of one training run evaluated on the held-out test interactions.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub config_hash: String,
    pub hin_hash: String,
    pub fit: FitResult,
    pub test: EvalReport,
    /// Fusion attention checked on the forward pass used for the test report.
    pub fusion: FusionCheck,
    pub attention_csv: String,
}

impl RunOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.fit.best.clone(),
            seed: self.config.seed,
            epoch: self.fit.best_epoch,
            hin_hash: self.hin_hash.clone(),
        }
    }
}

/// Splits, trains and evaluates on the test candidates with the config's seed.
pub fn train_and_evaluate(hin: &Hin, config: &RunConfig, mode: ExecMode) -> Result<RunOutcome> {
    let config = config.resolved(hin)?;
    let tc = config.train_config();
    tc.validate()?;
    let hin_hash = hin.content_hash();
    let data = TrainingData::prepare(hin.clone(), config.seed, config.n_candidates)?;
    let fit = fit(&data, &tc, mode)?;
    let graph = ModelGraph::build(&data.train_hin, &fit.best.metapaths, fit.best.layer)?;
    let test = evaluate_leave_one_out(
        &fit.best,
        &graph,
        &data.test,
        Some(&data.hin),
        config.seed,
        mode,
    )?;
    let fusion = check_fusion_invariants(&fit.best, &graph, FUSION_SHIFT, mode)?;
    let fused = forward_all(&fit.best, &graph, mode)?;
    let attention_csv = attention_csv(&attention_report(&fused));
    Ok(RunOutcome {
        config_hash: config.config_hash()?,
        config,
        hin_hash,
        fit,
        test,
        fusion,
        attention_csv,
    })
}

#[derive(Serialize)]
struct FusionSummary {
    simplex_error: f64,
    shift_error: f64,
    nodes: usize,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config_hash: &'a str,
    hin_hash: &'a str,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    stopped: &'a Option<String>,
    aborted: &'a Option<String>,
    initial_entity_gap: f64,
    best_entity_gap: Option<f64>,
    fusion: FusionSummary,
}

/// Writes `config.json`, `hin_hash.txt`, `history.csv`, `checkpoint/`,
/// `report.json`, `per_user.csv`, `attention.csv` and `summary.json`.
pub fn write_run_dir(dir: impl AsRef<Path>, outcome: &RunOutcome) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    put("config.json", &outcome.config.to_json()?)?;
    put("hin_hash.txt", &format!("{}\n", outcome.hin_hash))?;
    write_history_csv(&outcome.fit.history, dir.join("history.csv"))?;
    save_checkpoint(&outcome.checkpoint(), dir.join("checkpoint"))?;
    outcome
        .test
        .write(dir.join("report.json"), Some(&dir.join("per_user.csv")))?;
    put("attention.csv", &outcome.attention_csv)?;
    let best_gap = outcome
        .fit
        .history
        .iter()
        .find(|h| h.epoch == outcome.fit.best_epoch)
        .map(|h| h.entity_gap);
    let summary = RunSummary {
        config_hash: &outcome.config_hash,
        hin_hash: &outcome.hin_hash,
        seed: outcome.config.seed,
        best_epoch: outcome.fit.best_epoch,
        epochs_run: outcome.fit.history.len(),
        stopped: &outcome.fit.stopped,
        aborted: &outcome.fit.aborted,
        initial_entity_gap: outcome.fit.initial_entity_gap,
        best_entity_gap: best_gap,
        fusion: FusionSummary {
            simplex_error: outcome.fusion.simplex_error,
            shift_error: outcome.fusion.shift_error,
            nodes: outcome.fusion.nodes,
        },
    };
    put("summary.json", &serde_json::to_string_pretty(&summary)?)
}

/// `config` with the metapath `drop` removed. Fails if it is not in the
/// resolved list or if a node type would be left without an ending metapath.
pub fn drop_metapath(config: &RunConfig, hin: &Hin, drop: &str) -> Result<RunConfig> {
    let config = config.resolved(hin)?;
    let target = Metapath::parse(drop)?;
    let mps: Vec<Metapath> = config
        .metapaths
        .iter()
        .map(|n| Metapath::parse(n))
        .collect::<Result<_>>()?;
    let Some(pos) = mps.iter().position(|m| *m == target) else {
        return Err(Error::Config(format!(
            "metapath {drop} is not part of the configuration ({})",
            config.metapaths.join(", ")
        )));
    };
    let mut rest = mps;
    rest.remove(pos);
    split_by_terminal(&rest)?;
    Ok(RunConfig {
        metapaths: rest.into_iter().map(|m| m.name).collect(),
        ..config
    })
}

/// Full-versus-dropped comparison for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub dropped: String,
    pub hr_full: f64,
    pub hr_drop: f64,
    pub ndcg_full: f64,
    pub ndcg_drop: f64,
    /// 100·(drop − full)/full
    pub delta_hr_pct: f64,
    pub delta_ndcg_pct: f64,
}

fn pct(drop: f64, full: f64) -> f64 {
    if full == 0.0 {
        f64::NAN
    } else {
        100.0 * (drop - full) / full
    }
}

/// Retrains from scratch with and without `drop` for every seed.
pub fn ablate_metapaths(
    base: &RunConfig,
    hin: &Hin,
    drop: &str,
    seeds: &[u64],
    mode: ExecMode,
) -> Result<Vec<AblationRow>> {
    let dropped = drop_metapath(base, hin, drop)?;
    let full = base.resolved(hin)?;
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let a = train_and_evaluate(
            hin,
            &RunConfig {
                seed,
                ..full.clone()
            },
            mode,
        )?;
        let b = train_and_evaluate(
            hin,
            &RunConfig {
                seed,
                ..dropped.clone()
            },
            mode,
        )?;
        rows.push(AblationRow {
            seed,
            dropped: Metapath::parse(drop)?.name,
            hr_full: a.test.hr_at_10,
            hr_drop: b.test.hr_at_10,
            ndcg_full: a.test.ndcg_at_10,
            ndcg_drop: b.test.ndcg_at_10,
            delta_hr_pct: pct(b.test.hr_at_10, a.test.hr_at_10),
            delta_ndcg_pct: pct(b.test.ndcg_at_10, a.test.ndcg_at_10),
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "seed,dropped,hr_full,hr_drop,ndcg_full,ndcg_drop,delta_hr_pct,delta_ndcg_pct\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{:.3}\n",
            r.seed,
            r.dropped,
            r.hr_full,
            r.hr_drop,
            r.ndcg_full,
            r.ndcg_drop,
            r.delta_hr_pct,
            r.delta_ndcg_pct
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_hin, PlantedConfig};

    fn planted_config() -> RunConfig {
        RunConfig {
            metapaths: ["U-M-U", "G-M-U", "M-U-M", "M-G-M"]
                .map(String::from)
                .to_vec(),
            n_candidates: 50,
            epochs: 3,
            lr: 0.01,
            batch_size: 256,
            embed_dim: 16,
            repr_dim: 8,
            hidden_dim: 16,
            ..RunConfig::default()
        }
    }

    #[test]
    fn flat_json_with_defaults_and_unknown_keys_rejected() {
        let c: RunConfig =
            serde_json::from_str(r#"{"layer": "gcn", "seed": 7, "lambda": 0.0}"#).unwrap();
        assert_eq!(c.layer, LayerKind::Gcn);
        assert_eq!(c.seed, 7);
        assert_eq!(c.batch_size, 1024);
        assert!(serde_json::from_str::<RunConfig>(r#"{"learning_rate": 0.1}"#).is_err());
        let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_paths_and_metapath_order() {
        let a = planted_config();
        let mut b = a.clone();
        b.metapaths.reverse();
        b.out = Some("/tmp/x".into());
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.lr = 0.02;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    }

    #[test]
    fn drop_then_readd_round_trips_the_hash() {
        let hin = planted_hin(PlantedConfig::default(), 0).unwrap();
        let c = planted_config();
        let d = drop_metapath(&c, &hin, "G-M-U").unwrap();
        assert_eq!(d.metapaths.len(), 3);
        let mut readd = d.clone();
        readd.metapaths.push("G-M-U".into());
        assert_eq!(readd.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn dropping_the_last_path_of_a_type_is_a_config_error() {
        let hin = planted_hin(PlantedConfig::default(), 0).unwrap();
        let c = RunConfig {
            metapaths: ["U-M-U", "M-U-M"].map(String::from).to_vec(),
            ..planted_config()
        };
        assert!(matches!(
            drop_metapath(&c, &hin, "M-U-M"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            drop_metapath(&c, &hin, "Y-M-U"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn run_directory_is_complete() {
        let hin = planted_hin(PlantedConfig::default(), 0).unwrap();
        let out = train_and_evaluate(&hin, &planted_config(), ExecMode::Sequential).unwrap();
        assert!(out.fusion.simplex_error < 1e-6);
        assert_eq!(out.test.n_candidates, 50);
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &out).unwrap();
        for f in [
            "config.json",
            "hin_hash.txt",
            "history.csv",
            "checkpoint/manifest.json",
            "checkpoint/params.bin",
            "report.json",
            "per_user.csv",
            "attention.csv",
            "summary.json",
        ] {
            assert!(dir.path().join(f).is_file(), "missing {f}");
        }
        let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), out.fit.history.len() + 1);
        let cfg = RunConfig::load(dir.path().join("config.json")).unwrap();
        assert_eq!(cfg, out.config);
    }

    #[test]
    fn missing_network_is_a_config_error() {
        assert!(matches!(
            RunConfig::default().load_network(),
            Err(Error::Config(_))
        ));
    }
}
