//! Checkpoints: a JSON manifest plus one little-endian f32 array holding
//! every parameter tensor back to back, in manifest order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::LayerKind;
use crate::metapath::Metapath;
use crate::model::{ModelDims, ModelParams};

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub layer: LayerKind,
    pub dims: ModelDims,
    pub metapaths: Vec<String>,
    pub seed: u64,
    /// Epoch the parameters were taken from (1-based; 0 = untrained).
    pub epoch: usize,
    /// Content hash of the network the model was trained on.
    pub hin_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Trained parameters with the metadata needed to reuse them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub seed: u64,
    pub epoch: usize,
    pub hin_hash: String,
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let named = ckpt.params.named_tensors();
    let manifest = CheckpointManifest {
        version: FORMAT_VERSION,
        layer: ckpt.params.layer,
        dims: ckpt.params.dims,
        metapaths: ckpt
            .params
            .metapaths
            .iter()
            .map(|m| m.name.clone())
            .collect(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        hin_hash: ckpt.hin_hash.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(ckpt.params.num_parameters() * 4);
    for (_, t) in &named {
        for v in t.data() {
            bytes.extend(v.to_le_bytes());
        }
    }
    let p = dir.join(PARAMS);
    fs::write(&p, bytes).map_err(|e| Error::io(p, e))?;
    let m = dir.join(MANIFEST);
    fs::write(&m, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(m, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw)?;
    let bad = |message: String| Error::Format {
        path: mpath.clone(),
        message,
    };
    if manifest.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let metapaths = manifest
        .metapaths
        .iter()
        .map(|n| Metapath::parse(n))
        .collect::<Result<Vec<_>>>()?;
    let num_nodes = manifest
        .tensors
        .first()
        .filter(|t| t.name == "embeddings" && t.shape.len() == 2)
        .map(|t| t.shape[0])
        .ok_or_else(|| bad("first tensor must be the embedding table".into()))?;
    // skeleton with the right structure; every value is overwritten below
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::<f32>::init(
        num_nodes,
        manifest.layer,
        metapaths,
        manifest.dims,
        &mut rng,
    )?;
    let expected: Vec<TensorEntry> = params
        .named_tensors()
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != manifest.tensors {
        return Err(bad(
            "tensor list does not match the declared architecture".into()
        ));
    }
    let ppath = dir.join(PARAMS);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let total: usize = expected
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != total * 4 {
        return Err(Error::Format {
            path: ppath,
            message: format!("expected {} bytes, found {}", total * 4, bytes.len()),
        });
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint {
        params,
        seed: manifest.seed,
        epoch: manifest.epoch,
        hin_hash: manifest.hin_hash,
    })
}
