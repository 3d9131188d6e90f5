use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{rank_order, RankedItem, RankedList, RetrievalError};
use crate::embedding::{cosine_from_parts, dot, l2_norm, Embedder, EmbeddingVector};

const MAGIC: &[u8; 8] = b"CLMLVIDX";
pub const INDEX_FORMAT_VERSION: u32 = 1;
const PARALLEL_THRESHOLD: usize = 20_000;

/// In-memory exact cosine index over normalized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    model_name: String,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

fn id_hash(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl VectorIndex {
    pub fn new(model_name: impl Into<String>, dim: usize) -> Self {
        Self {
            dim,
            model_name: model_name.into(),
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        }
    }

    /// Builds from `(id, vector)` pairs; every vector must be normalized and
    /// of dimension `dim`.
    pub fn build(
        model_name: impl Into<String>,
        dim: usize,
        entries: impl IntoIterator<Item = (String, EmbeddingVector)>,
    ) -> Result<Self, RetrievalError> {
        let mut index = Self::new(model_name, dim);
        for (id, v) in entries {
            if !v.is_normalized() {
                return Err(RetrievalError::NotNormalized(id));
            }
            index.push(id, v.values())?;
        }
        Ok(index)
    }

    fn push(&mut self, id: String, values: &[f32]) -> Result<(), RetrievalError> {
        if values.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(values);
        self.norms.push(l2_norm(values));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&row| self.row(row))
    }

    fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<f64, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let qn = l2_norm(query.values());
        if qn == 0.0 {
            return Err(RetrievalError::InvalidQuery("zero query vector".into()));
        }
        Ok(qn)
    }

    fn score_row(&self, query: &[f32], qn: f64, row: usize) -> f64 {
        cosine_from_parts(dot(query, self.row(row)), qn, self.norms[row])
    }

    /// Cosine of `query` against the entry `id`.
    pub fn score(&self, query: &EmbeddingVector, id: &str) -> Result<Option<f64>, RetrievalError> {
        let qn = self.check_query(query)?;
        Ok(self
            .positions
            .get(id)
            .map(|&row| self.score_row(query.values(), qn, row)))
    }

    /// Cosine of `query` against every entry, in index order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<(String, f64)>, RetrievalError> {
        let qn = self.check_query(query)?;
        Ok((0..self.len())
            .map(|row| (self.ids[row].clone(), self.score_row(query.values(), qn, row)))
            .collect())
    }

    /// Exact top-`k` by cosine.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize, query_id: &str) -> Result<RankedList, RetrievalError> {
        self.top_k_where(query, k, query_id, |_| true)
    }

    /// Exact top-`k` among entries whose id passes `keep`.
    pub fn top_k_where(
        &self,
        query: &EmbeddingVector,
        k: usize,
        query_id: &str,
        keep: impl Fn(&str) -> bool + Sync,
    ) -> Result<RankedList, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let qn = self.check_query(query)?;
        let q = query.values();
        let score =
            |row: usize| -> Option<(usize, f64)> { keep(&self.ids[row]).then(|| (row, self.score_row(q, qn, row))) };
        let mut scored: Vec<(usize, f64)> = if self.len() >= PARALLEL_THRESHOLD {
            (0..self.len()).into_par_iter().filter_map(score).collect()
        } else {
            (0..self.len()).filter_map(score).collect()
        };
        let cmp = |a: &(usize, f64), b: &(usize, f64)| rank_order(a.1, &self.ids[a.0], b.1, &self.ids[b.0]);
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(RankedList::from_sorted_items(
            query_id,
            scored
                .into_iter()
                .map(|(row, score)| RankedItem {
                    factcheck_id: self.ids[row].clone(),
                    score,
                })
                .collect(),
        ))
    }

    /// Writes `magic | version | dim | model_name | count` followed by one
    /// `id-hash | id-length | id | dim × f32 LE` record per entry.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
            w.write_all(&(self.dim as u32).to_le_bytes())?;
            w.write_all(&(self.model_name.len() as u32).to_le_bytes())?;
            w.write_all(self.model_name.as_bytes())?;
            w.write_all(&(self.len() as u64).to_le_bytes())?;
            for (row, id) in self.ids.iter().enumerate() {
                w.write_all(&id_hash(id).to_le_bytes())?;
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id.as_bytes())?;
                for v in self.row(row) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn open(path: &Path) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RetrievalError::Corrupt("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Version {
                found: version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let dim = read_u32(&mut r)? as usize;
        let model_name = read_string(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut index = Self::new(model_name, dim);
        let mut values = vec![0f32; dim];
        for _ in 0..count {
            let hash = read_u64(&mut r)?;
            let id = read_string(&mut r)?;
            if id_hash(&id) != hash {
                return Err(RetrievalError::Corrupt(format!("id hash mismatch for {id}")));
            }
            for v in values.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
            index.push(id, &values)?;
        }
        Ok(index)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String, RetrievalError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(RetrievalError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| RetrievalError::Corrupt(e.to_string()))
}

/// Embeds `(id, text)` pairs and indexes the vectors.
pub fn build_index(embedder: &Embedder, items: &[(String, String)]) -> Result<VectorIndex, RetrievalError> {
    let spec = embedder.spec();
    if items.is_empty() {
        return Ok(VectorIndex::new(&spec.model_name, spec.dim));
    }
    let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    VectorIndex::build(
        &spec.model_name,
        spec.dim,
        items.iter().map(|(id, _)| id.clone()).zip(vectors),
    )
}
