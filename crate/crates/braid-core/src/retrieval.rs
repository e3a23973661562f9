//! Exact embedding index: full-scan top-k search over unit-norm rows.
//!
//! Rows are stored at 32 bits; dot products accumulate at 64 bits and the
//! final score is rounded back to `f32`, which keeps tie-breaking and the
//! canonical run-file format exact. The index records the checkpoint
//! fingerprint of the model that built it so stale indexes are detectable.

use crate::encoder::{
    encode_sequence, model_fingerprint, AudioFrontend, Embedding, RetrieverModel,
};
use crate::error::{Error, Result};
use crate::types::{Corpus, RankedList};
use ndarray::Array2;
use rayon::prelude::*;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const INDEX_MAGIC: &[u8; 8] = b"BRAIDIDX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    matrix: Array2<f32>,
    model_fingerprint: String,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f32> {
        self.matrix.row(i)
    }

    /// True when this index was built by a model with a different
    /// checkpoint fingerprint.
    pub fn is_stale_for(&self, model: &RetrieverModel) -> Result<bool> {
        Ok(model_fingerprint(model)? != self.model_fingerprint)
    }
}

/// Encode every document (ascending id order, parallel with a fixed row
/// order) into an index.
pub fn build_index(
    model: &RetrieverModel,
    corpus: &Corpus,
    frontend: AudioFrontend,
) -> Result<EmbeddingIndex> {
    let ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    let rows: Vec<Vec<f32>> = corpus
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|doc| {
            encode_sequence(model, doc, frontend)
                .map(|e| e.to_f32())
                .map_err(|e| Error::invariant(&doc.id, format!("encode failed: {e}")))
        })
        .collect::<Result<_>>()?;

    let dim = if let Some(r) = rows.first() {
        r.len()
    } else {
        model.out_dim()
    };
    let mut matrix = Array2::<f32>::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            matrix[[i, j]] = *v;
        }
    }
    Ok(EmbeddingIndex {
        ids,
        matrix,
        model_fingerprint: model_fingerprint(model)?,
    })
}

fn rank_cmp(a: &(usize, f32, &str), b: &(usize, f32, &str)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .expect("scores are finite")
        .then_with(|| a.2.cmp(b.2))
}

/// Exact top-min(k, m) by dot product, ties broken by ascending doc id.
pub fn search(
    index: &EmbeddingIndex,
    query_id: &str,
    query: &Embedding,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Config("search k must be >= 1".into()));
    }
    if query.dim() != index.dim() && !index.is_empty() {
        return Err(Error::DimMismatch {
            context: "search".into(),
            expected: index.dim(),
            got: query.dim(),
        });
    }
    let q = query.to_f32();
    let mut scored: Vec<(usize, f32, &str)> = (0..index.len())
        .map(|i| {
            // 64-bit accumulation over 32-bit values.
            let mut acc = 0.0f64;
            for (a, b) in index.matrix.row(i).iter().zip(q.iter()) {
                acc += f64::from(*a) * f64::from(*b);
            }
            (i, acc as f32, index.ids[i].as_str())
        })
        .collect();

    let k = k.min(scored.len());
    if k > 0 && k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_cmp);
        scored.truncate(k);
    }
    scored.sort_by(rank_cmp);
    RankedList::new(
        query_id,
        scored
            .into_iter()
            .map(|(_, s, id)| (id.to_string(), s))
            .collect(),
    )
}

/// Elementwise [`search`]; parallel execution, output order matches input.
pub fn batch_search(
    index: &EmbeddingIndex,
    queries: &[(String, Embedding)],
    k: usize,
) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|(id, emb)| search(index, id, emb, k))
        .collect()
}

// ---------------------------------------------------------------------------
// Binary persistence: header, id table, row-major little-endian matrix
// ---------------------------------------------------------------------------

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn r_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    (|| -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w_u32(&mut w, INDEX_VERSION)?;
        w_u64(&mut w, index.len() as u64)?;
        w_u64(&mut w, index.dim() as u64)?;
        let fp = index.model_fingerprint.as_bytes();
        w_u32(&mut w, fp.len() as u32)?;
        w.write_all(fp)?;
        for id in &index.ids {
            let b = id.as_bytes();
            w_u32(&mut w, b.len() as u32)?;
            w.write_all(b)?;
        }
        for v in index.matrix.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut r = BufReader::new(std::fs::File::open(path).map_err(io_err)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::parse(path, 0, "bad index magic"));
    }
    let version = r_u32(&mut r).map_err(io_err)?;
    if version != INDEX_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported index version {version}")));
    }
    let m = r_u64(&mut r).map_err(io_err)? as usize;
    let dim = r_u64(&mut r).map_err(io_err)? as usize;
    let fp_len = r_u32(&mut r).map_err(io_err)? as usize;
    let mut fp = vec![0u8; fp_len];
    r.read_exact(&mut fp).map_err(io_err)?;
    let model_fingerprint = String::from_utf8(fp)
        .map_err(|e| Error::parse(path, 0, format!("bad fingerprint: {e}")))?;

    let mut ids = Vec::with_capacity(m);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..m {
        let len = r_u32(&mut r).map_err(io_err)? as usize;
        let mut b = vec![0u8; len];
        r.read_exact(&mut b).map_err(io_err)?;
        let id =
            String::from_utf8(b).map_err(|e| Error::parse(path, 0, format!("bad id: {e}")))?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id });
        }
        ids.push(id);
    }

    let mut matrix = Array2::<f32>::zeros((m, dim));
    for i in 0..m {
        for j in 0..dim {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io_err)?;
            matrix[[i, j]] = f32::from_le_bytes(b);
        }
    }
    // Unit-norm row invariant, at 32-bit storage precision.
    for (i, row) in matrix.rows().into_iter().enumerate() {
        let norm: f64 = row.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::invariant(
                ids[i].clone(),
                format!("index row norm {norm} is not 1"),
            ));
        }
    }
    Ok(EmbeddingIndex {
        ids,
        matrix,
        model_fingerprint,
    })
}
