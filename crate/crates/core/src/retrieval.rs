//! Exact cosine k-nearest-neighbor retrieval over record embeddings.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{render_target_prompt, EditRecord};
use crate::error::RetrievalError;

/// A dense embedding. Stored in single precision; similarities are computed
/// in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        let v = Self(values);
        if v.norm() == 0.0 {
            return Err(RetrievalError::ZeroNorm);
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }
}

/// Text key under which a record is embedded: target prompt, original
/// object, new object, single-space joined.
pub fn encode_key(record: &EditRecord) -> String {
    [
        render_target_prompt(record),
        record.target_true.clone(),
        record.target_new.clone(),
    ]
    .iter()
    .map(|s| s.trim())
    .filter(|s| !s.is_empty())
    .collect::<Vec<_>>()
    .join(" ")
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }
    Ok(dot(u.values(), v.values()) / (nu * nv))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// One retrieved neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub case_id: u64,
    pub similarity: f64,
}

/// Neighbors sorted from most to least similar.
pub type RetrievalResult = Vec<Neighbor>;

/// Immutable exact-search index keyed by case_id.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dimension: usize,
    ids: Vec<u64>,
    vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
}

impl EmbeddingIndex {
    pub fn build(
        dimension: usize,
        entries: impl IntoIterator<Item = (u64, EmbeddingVector)>,
    ) -> Result<Self, RetrievalError> {
        let mut entries: Vec<(u64, EmbeddingVector)> = entries.into_iter().collect();
        entries.sort_by_key(|(id, _)| *id);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(RetrievalError::DuplicateId(w[0].0));
        }
        let mut index = Self {
            dimension,
            ids: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len()),
            norms: Vec::with_capacity(entries.len()),
        };
        for (id, v) in entries {
            if v.dim() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dimension,
                    actual: v.dim(),
                });
            }
            index.ids.push(id);
            index.norms.push(v.norm());
            index.vectors.push(v);
        }
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, case_id: u64) -> Option<&EmbeddingVector> {
        self.ids
            .binary_search(&case_id)
            .ok()
            .map(|i| &self.vectors[i])
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Similarity of the query to every entry, in case_id order.
    pub fn similarities(&self, query: &EmbeddingVector) -> Result<Vec<Neighbor>, RetrievalError> {
        if query.dim() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dim(),
            });
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(RetrievalError::ZeroNorm);
        }
        Ok(self
            .ids
            .iter()
            .zip(&self.vectors)
            .zip(&self.norms)
            .map(|((&case_id, v), &n)| Neighbor {
                case_id,
                similarity: dot(query.values(), v.values()) / (qn * n),
            })
            .collect())
    }
}

/// Max-heap entry whose top is the weakest kept neighbor.
struct Weakest(Neighbor);

impl PartialEq for Weakest {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Weakest {}
impl PartialOrd for Weakest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Weakest {
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

/// Ranking order: higher similarity first, then lower case_id.
fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.case_id.cmp(&b.case_id))
}

/// The `min(k, |index|)` most similar entries, most similar first; ties go to
/// the lower case_id.
pub fn knn(
    index: &EmbeddingIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for n in index.similarities(query)? {
        if heap.len() < k {
            heap.push(Weakest(n));
        } else if let Some(top) = heap.peek() {
            if rank(&n, &top.0) == Ordering::Less {
                heap.pop();
                heap.push(Weakest(n));
            }
        }
    }
    // ascending Weakest order is best-first
    Ok(heap.into_sorted_vec().into_iter().map(|w| w.0).collect())
}

/// Left-to-right context order: least similar first, most similar last so
/// the closest demonstration sits next to the query.
pub fn order_for_context(result: &[Neighbor]) -> Vec<u64> {
    let mut ordered = result.to_vec();
    ordered.sort_by(|a, b| {
        a.similarity
            .total_cmp(&b.similarity)
            .then(a.case_id.cmp(&b.case_id))
    });
    ordered.into_iter().map(|n| n.case_id).collect()
}

/// Deterministic stand-in for a sentence encoder: a seeded ChaCha expansion
/// of SHA-256(seed, text), unit-normalized.
pub fn stub_embed(text: &str, dimension: usize, seed: u64) -> EmbeddingVector {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    let mut values: Vec<f64> = (0..dimension.max(1))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        values[0] = 1.0;
    } else {
        values.iter_mut().for_each(|x| *x /= norm);
    }
    EmbeddingVector(values.into_iter().map(|x| x as f32).collect())
}

/// Anything that can turn free text into embeddings.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError>;
}

#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Embedder for StubEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts
            .iter()
            .map(|t| stub_embed(t, self.dimension, self.seed))
            .collect())
    }
}

/// Reads `case_id<TAB>v1 v2 … vd` lines. All vectors must share a dimension.
pub fn read_embeddings(
    path: impl AsRef<Path>,
) -> Result<HashMap<u64, EmbeddingVector>, RetrievalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, message: String| RetrievalError::File {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut table = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| err(n, "expected `case_id<TAB>values`".into()))?;
        let id: u64 = id
            .trim()
            .parse()
            .map_err(|_| err(n, format!("bad case_id `{id}`")))?;
        let values = rest
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(n, e.to_string()))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(n, format!("dimension {} differs from {d}", values.len())))
            }
            _ => {}
        }
        let v = EmbeddingVector::new(values).map_err(|e| err(n, e.to_string()))?;
        if table.insert(id, v).is_some() {
            return Err(err(n, format!("duplicate case_id {id}")));
        }
    }
    Ok(table)
}

/// Writes vectors in ascending case_id order.
pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = (u64, &'a EmbeddingVector)>,
) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut entries: Vec<_> = entries.into_iter().collect();
    entries.sort_by_key(|(id, _)| *id);
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for (id, v) in entries {
        let values: Vec<String> = v.values().iter().map(|x| x.to_string()).collect();
        writeln!(out, "{id}\t{}", values.join(" ")).map_err(io)?;
    }
    out.flush().map_err(io)
}
