//! Synthetic identity pool and minimum-distance face swapping.
//!
//! Distances are Euclidean between L2-normalized embeddings, so the swap
//! threshold reads as `sqrt(2 - 2 cos(theta))` whatever the encoder's scale.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    decode_embedding_file, encode_embedding_file, EmbeddingHeader, EmbeddingSet,
    EMBEDDING_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MIN_SWAP_DISTANCE: f64 = 1.0;

/// Immutable, normalized identity pool.
///
/// Rows are stored at `f32` precision so that a pool read back from disk is
/// identical to the one that was written.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPool {
    ids: Vec<String>,
    embeddings: Array2<f64>,
    sources: Vec<String>,
    provider: String,
    source_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapResult {
    pub query_id: String,
    pub chosen_id: String,
    pub distance: f64,
    /// Set when the farthest member was substituted because nothing met the
    /// threshold; `distance` is then below it.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoCandidatePolicy {
    #[default]
    Error,
    Farthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePromptMode {
    /// `[original, swapped]` as two tokens.
    #[default]
    Tokens,
    /// Their element-wise mean as one token.
    Average,
}

fn normalize(v: ArrayView1<'_, f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Validates and normalizes an embedding set into a pool.
pub fn build_pool(set: &EmbeddingSet) -> Result<IdentityPool> {
    let dim = set.dim();
    let mut flat = Vec::with_capacity(set.len() * dim);
    for (id, row) in set.ids().iter().zip(set.vectors().rows()) {
        let unit = normalize(row).ok_or_else(|| Error::InvalidRecord {
            record: id.clone(),
            message: "zero or non-finite embedding".into(),
        })?;
        flat.extend(unit.into_iter().map(|v| f64::from(v as f32)));
    }
    Ok(IdentityPool {
        ids: set.ids().to_vec(),
        embeddings: Array2::from_shape_vec((set.len(), dim), flat).expect("shape from set"),
        sources: vec![set.provider().to_owned(); set.len()],
        provider: set.provider().to_owned(),
        source_hash: set.content_hash(),
    })
}

impl IdentityPool {
    /// `n` random unit identities, for toy runs when no real pool is available.
    pub fn synthetic(n: usize, dim: usize, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::domain("synthetic pool needs n >= 1 and dim >= 1"));
        }
        let mut rng = seed::tagged_rng(seed, "synthetic-pool");
        let vectors = Array2::from_shape_fn((n, dim), |_| rng.sample::<f64, _>(StandardNormal));
        let ids = (0..n).map(|i| format!("synthetic-{i:05}")).collect();
        build_pool(&EmbeddingSet::new(ids, vectors, "synthetic")?)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn embedding(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|i| self.embeddings.row(i))
    }

    pub fn with_source_hash(mut self, hash: impl Into<String>) -> Self {
        self.source_hash = hash.into();
        self
    }

    fn as_set(&self) -> EmbeddingSet {
        EmbeddingSet::new(self.ids.clone(), self.embeddings.clone(), self.provider.clone())
            .expect("pool contents are valid")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = EmbeddingHeader {
            version: EMBEDDING_FORMAT_VERSION,
            provider: self.provider.clone(),
            dimension: self.dim(),
            count: self.len(),
            normalized: true,
            source_hash: self.source_hash.clone(),
            ids: self.ids.clone(),
            sources: self.sources.clone(),
        };
        encode_embedding_file(&self.as_set(), &header)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (set, header) = decode_embedding_file(&std::fs::read(path)?, path)?;
        if !header.normalized {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                message: "pool file must hold normalized embeddings".into(),
            });
        }
        let sources = if header.sources.len() == set.len() {
            header.sources
        } else {
            vec![header.provider.clone(); set.len()]
        };
        Ok(Self {
            ids: set.ids().to_vec(),
            embeddings: set.vectors().clone(),
            sources,
            provider: header.provider,
            source_hash: header.source_hash,
        })
    }

    fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::contract(format!(
                "query dimension {} does not match pool dimension {}",
                query.len(),
                self.dim()
            )));
        }
        let unit = normalize(ArrayView1::from(query))
            .ok_or_else(|| Error::domain("query embedding must be non-zero and finite"))?;
        Ok(self
            .embeddings
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(&unit)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

/// Nearest pool member at distance `>= min_dist`; ties go to the smallest id.
pub fn find_swap(
    query_id: &str,
    query: &[f64],
    pool: &IdentityPool,
    min_dist: f64,
) -> Result<SwapResult> {
    if min_dist.is_nan() || min_dist < 0.0 {
        return Err(Error::domain(format!("min_dist must be >= 0, got {min_dist}")));
    }
    let distances = pool.distances(query)?;
    let mut best: Option<usize> = None;
    for (i, &d) in distances.iter().enumerate() {
        if d < min_dist {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => match d.total_cmp(&distances[b]) {
                Ordering::Less => Some(i),
                Ordering::Equal if pool.ids[i] < pool.ids[b] => Some(i),
                _ => Some(b),
            },
        };
    }
    let i = best.ok_or(Error::NoCandidate { min_dist })?;
    Ok(SwapResult {
        query_id: query_id.to_owned(),
        chosen_id: pool.ids[i].clone(),
        distance: distances[i],
        fallback: false,
    })
}

/// [`find_swap`] with a fallback for unsatisfiable thresholds.
pub fn find_swap_with_policy(
    query_id: &str,
    query: &[f64],
    pool: &IdentityPool,
    min_dist: f64,
    policy: NoCandidatePolicy,
) -> Result<SwapResult> {
    match find_swap(query_id, query, pool, min_dist) {
        Err(Error::NoCandidate { .. }) if policy == NoCandidatePolicy::Farthest => {
            let distances = pool.distances(query)?;
            let i = (0..distances.len())
                .max_by(|&a, &b| {
                    distances[a]
                        .total_cmp(&distances[b])
                        .then_with(|| pool.ids[b].cmp(&pool.ids[a]))
                })
                .expect("pool is non-empty");
            Ok(SwapResult {
                query_id: query_id.to_owned(),
                chosen_id: pool.ids[i].clone(),
                distance: distances[i],
                fallback: true,
            })
        }
        other => other,
    }
}

/// Image-prompt tokens for one face: `[original, swapped]`.
pub fn assemble_conditioning(original: &[f64], swapped: &[f64]) -> Vec<Vec<f64>> {
    vec![original.to_vec(), swapped.to_vec()]
}

pub fn assemble_conditioning_with(
    original: &[f64],
    swapped: &[f64],
    mode: ImagePromptMode,
) -> Vec<Vec<f64>> {
    match mode {
        ImagePromptMode::Tokens => assemble_conditioning(original, swapped),
        ImagePromptMode::Average => vec![original
            .iter()
            .zip(swapped)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()],
    }
}
