use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Hin, Interaction, NodeType, Relation, TypeRange};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const MANIFEST: &str = "manifest.json";
const INTERACTIONS: &str = "interactions.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    content_hash: String,
    ranges: Vec<TypeRange>,
    labels: Vec<String>,
    relations: Vec<RelationEntry>,
    interactions: usize,
}

#[derive(Serialize, Deserialize)]
struct RelationEntry {
    name: String,
    src: NodeType,
    dst: NodeType,
    n_rows: usize,
    n_cols: usize,
    nnz: usize,
}

impl Hin {
    /// SHA-256 over node types, labels, relation arrays and the interaction
    /// log, hex encoded. Equal networks hash equally.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.ranges {
            h.update([r.node_type.code() as u8]);
            h.update((r.start as u64).to_le_bytes());
            h.update((r.len as u64).to_le_bytes());
        }
        for l in &self.labels {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
        }
        for rel in &self.relations {
            h.update((rel.name.len() as u64).to_le_bytes());
            h.update(rel.name.as_bytes());
            h.update([rel.src.code() as u8, rel.dst.code() as u8]);
            h.update(usize_bytes(rel.matrix.row_ptr()));
            h.update(usize_bytes(rel.matrix.col_idx()));
            h.update(f32_bytes(rel.matrix.values()));
        }
        h.update(interaction_bytes(&self.interactions));
        hex::encode(h.finalize())
    }
}

/// Writes `manifest.json` plus little-endian arrays for every relation and
/// the interaction log into `dir`, creating it if needed.
pub fn save_hin(hin: &Hin, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    for rel in &hin.relations {
        write(
            &format!("{}.row_ptr.bin", rel.name),
            &usize_bytes(rel.matrix.row_ptr()),
        )?;
        write(
            &format!("{}.col_idx.bin", rel.name),
            &usize_bytes(rel.matrix.col_idx()),
        )?;
        write(
            &format!("{}.values.bin", rel.name),
            &f32_bytes(rel.matrix.values()),
        )?;
    }
    write(INTERACTIONS, &interaction_bytes(&hin.interactions))?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        content_hash: hin.content_hash(),
        ranges: hin.ranges.clone(),
        labels: hin.labels.clone(),
        relations: hin
            .relations
            .iter()
            .map(|r| RelationEntry {
                name: r.name.clone(),
                src: r.src,
                dst: r.dst,
                n_rows: r.matrix.n_rows(),
                n_cols: r.matrix.n_cols(),
                nnz: r.matrix.nnz(),
            })
            .collect(),
        interactions: hin.interactions.len(),
    };
    write(
        MANIFEST,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )
}

/// Reads a network written by [`save_hin`], checking array sizes and the
/// stored content hash.
pub fn load_hin(dir: impl AsRef<Path>) -> Result<Hin> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_slice(&read(MANIFEST)?)?;
    let bad = |message: String| Error::Format {
        path: manifest_path.clone(),
        message,
    };
    if manifest.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let mut relations = Vec::with_capacity(manifest.relations.len());
    for e in &manifest.relations {
        let row_ptr = parse_usize(&read(&format!("{}.row_ptr.bin", e.name))?)
            .ok_or_else(|| bad(format!("{}: truncated row_ptr", e.name)))?;
        let col_idx = parse_usize(&read(&format!("{}.col_idx.bin", e.name))?)
            .ok_or_else(|| bad(format!("{}: truncated col_idx", e.name)))?;
        let values = parse_f32(&read(&format!("{}.values.bin", e.name))?)
            .ok_or_else(|| bad(format!("{}: truncated values", e.name)))?;
        if col_idx.len() != e.nnz {
            return Err(bad(format!(
                "{}: expected {} entries, found {}",
                e.name,
                e.nnz,
                col_idx.len()
            )));
        }
        relations.push(Relation {
            name: e.name.clone(),
            src: e.src,
            dst: e.dst,
            matrix: CsrMatrix::from_parts(e.n_rows, e.n_cols, row_ptr, col_idx, values)?,
        });
    }
    let interactions = parse_interactions(&read(INTERACTIONS)?)
        .ok_or_else(|| bad("truncated interaction log".into()))?;
    if interactions.len() != manifest.interactions {
        return Err(bad(format!(
            "expected {} interactions, found {}",
            manifest.interactions,
            interactions.len()
        )));
    }
    let hin = Hin {
        ranges: manifest.ranges,
        labels: manifest.labels,
        relations,
        interactions,
    };
    let hash = hin.content_hash();
    if hash != manifest.content_hash {
        return Err(bad(format!(
            "content hash {hash} does not match manifest {}",
            manifest.content_hash
        )));
    }
    Ok(hin)
}

fn usize_bytes(v: &[usize]) -> Vec<u8> {
    v.iter().flat_map(|&x| (x as u64).to_le_bytes()).collect()
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn interaction_bytes(v: &[Interaction]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 24);
    for it in v {
        out.extend((it.user as u64).to_le_bytes());
        out.extend((it.item as u64).to_le_bytes());
        out.extend(it.timestamp.to_le_bytes());
    }
    out
}

fn parse_usize(b: &[u8]) -> Option<Vec<usize>> {
    b.len().is_multiple_of(8).then(|| {
        b.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect()
    })
}

fn parse_f32(b: &[u8]) -> Option<Vec<f32>> {
    b.len().is_multiple_of(4).then(|| {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    })
}

fn parse_interactions(b: &[u8]) -> Option<Vec<Interaction>> {
    b.len().is_multiple_of(24).then(|| {
        b.chunks_exact(24)
            .map(|c| Interaction {
                user: u64::from_le_bytes(c[0..8].try_into().unwrap()) as usize,
                item: u64::from_le_bytes(c[8..16].try_into().unwrap()) as usize,
                timestamp: i64::from_le_bytes(c[16..24].try_into().unwrap()),
            })
            .collect()
    })
}
