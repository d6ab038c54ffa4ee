//! Id-indexed embedding matrices and their on-disk format.
//!
//! File layout: `b"LDME"`, `u32` LE format version, `u32` LE header length,
//! a JSON [`EmbeddingHeader`], then `count x dimension` little-endian `f32`
//! values in row order. Identity pools and evaluation embedding dumps share
//! this format.

use std::collections::HashSet;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDME";
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: Array2<f64>,
    provider: String,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, vectors: Array2<f64>, provider: impl Into<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("embedding set must not be empty"));
        }
        if ids.len() != vectors.nrows() {
            return Err(Error::contract(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.nrows()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::contract("embedding dimension must be positive"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidRecord {
                    record: id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        for (id, row) in ids.iter().zip(vectors.rows()) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord {
                    record: id.clone(),
                    message: "non-finite entry".into(),
                });
            }
        }
        Ok(Self {
            ids,
            vectors,
            provider: provider.into(),
        })
    }

    /// Builds from `(id, vector)` rows; every vector must share one dimension.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, provider: impl Into<String>) -> Result<Self> {
        let Some(dim) = rows.first().map(|(_, v)| v.len()) else {
            return Err(Error::domain("embedding set must not be empty"));
        };
        let mut ids = Vec::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::InvalidRecord {
                    record: id,
                    message: format!("dimension {} differs from {dim}", v.len()),
                });
            }
            flat.extend(v);
            ids.push(id);
        }
        let n = ids.len();
        let vectors = Array2::from_shape_vec((n, dim), flat).expect("row lengths checked");
        Self::new(ids, vectors, provider)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    /// SHA-256 over ids and the `f32` payload.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for id in &self.ids {
            hasher.update((id.len() as u64).to_le_bytes());
            hasher.update(id.as_bytes());
        }
        for v in self.vectors.iter() {
            hasher.update((*v as f32).to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub version: u32,
    pub provider: String,
    pub dimension: usize,
    pub count: usize,
    pub normalized: bool,
    pub source_hash: String,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

pub fn encode_embedding_file(set: &EmbeddingSet, header: &EmbeddingHeader) -> Result<Vec<u8>> {
    if header.ids != set.ids || header.dimension != set.dim() || header.count != set.len() {
        return Err(Error::contract("embedding header does not describe the set"));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * set.vectors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&EMBEDDING_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in set.vectors.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embedding_file(bytes: &[u8], path: &Path) -> Result<(EmbeddingSet, EmbeddingHeader)> {
    let corrupt = |m: String| Error::CorruptFile {
        path: path.to_path_buf(),
        message: m,
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("not an embedding file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != EMBEDDING_FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: EmbeddingHeader =
        serde_json::from_slice(json).map_err(|e| corrupt(e.to_string()))?;
    let payload = &bytes[12 + header_len..];
    let expected = header.count * header.dimension * 4;
    if payload.len() != expected || header.ids.len() != header.count {
        return Err(corrupt(format!(
            "payload of {} bytes does not match {} x {}",
            payload.len(),
            header.count,
            header.dimension
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let vectors = Array2::from_shape_vec((header.count, header.dimension), values)
        .map_err(|e| corrupt(e.to_string()))?;
    let set = EmbeddingSet::new(header.ids.clone(), vectors, header.provider.clone())?;
    Ok((set, header))
}

pub fn write_embedding_file(path: &Path, set: &EmbeddingSet, header: &EmbeddingHeader) -> Result<()> {
    let bytes = encode_embedding_file(set, header)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<(EmbeddingSet, EmbeddingHeader)> {
    decode_embedding_file(&fs::read(path)?, path)
}

#[derive(Deserialize)]
struct JsonlRow {
    id: String,
    embedding: Vec<f64>,
}

/// Reads `{"id": ..., "embedding": [...]}` lines. Errors name the line and,
/// when it can be recovered, the record id.
pub fn read_embedding_jsonl<R: BufRead>(reader: R, path: &Path, provider: &str) -> Result<EmbeddingSet> {
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line).map_err(|e| {
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned));
            let at = match id {
                Some(id) => format!("line {} (id {id:?})", n + 1),
                None => format!("line {}", n + 1),
            };
            Error::CorruptFile {
                path: path.to_path_buf(),
                message: format!("{at}: {e}"),
            }
        })?;
        rows.push((row.id, row.embedding));
    }
    EmbeddingSet::from_rows(rows, provider)
}

/// Header for a plain (unnormalized) dump of `set`.
pub fn plain_header(set: &EmbeddingSet) -> EmbeddingHeader {
    EmbeddingHeader {
        version: EMBEDDING_FORMAT_VERSION,
        provider: set.provider.clone(),
        dimension: set.dim(),
        count: set.len(),
        normalized: false,
        source_hash: set.content_hash(),
        ids: set.ids.clone(),
        sources: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> EmbeddingSet {
        EmbeddingSet::from_rows(
            vec![
                ("a".into(), vec![1.0, 0.5]),
                ("b".into(), vec![-2.0, 0.25]),
            ],
            "test",
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip() {
        let s = set();
        let bytes = encode_embedding_file(&s, &plain_header(&s)).unwrap();
        let (back, header) = decode_embedding_file(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert!(!header.normalized);
        assert!(decode_embedding_file(&bytes[..bytes.len() - 2], Path::new("mem")).is_err());
    }

    #[test]
    fn rejects_invalid_sets() {
        assert!(EmbeddingSet::from_rows(vec![], "x").is_err());
        assert!(EmbeddingSet::from_rows(
            vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])],
            "x"
        )
        .is_err());
        assert!(EmbeddingSet::from_rows(
            vec![("a".into(), vec![1.0]), ("b".into(), vec![2.0, 3.0])],
            "x"
        )
        .is_err());
        assert!(EmbeddingSet::from_rows(vec![("a".into(), vec![f64::NAN])], "x").is_err());
    }

    #[test]
    fn jsonl_source() {
        let text = "{\"id\": \"a\", \"embedding\": [1, 2]}\n\n{\"id\": \"b\", \"embedding\": [3, 4]}\n";
        let set = read_embedding_jsonl(text.as_bytes(), Path::new("src"), "p").unwrap();
        assert_eq!(set.ids(), &["a".to_string(), "b".to_string()]);
        let bad = "{\"id\": \"a\", \"embedding\": [1, 2]}\n{\"id\": \"zz\", \"embedding\": \"oops\"}\n";
        match read_embedding_jsonl(bad.as_bytes(), Path::new("src"), "p") {
            Err(Error::CorruptFile { message, .. }) => assert!(message.contains("\"zz\"")),
            other => panic!("{other:?}"),
        }
        let dup = "{\"id\": \"a\", \"embedding\": [1]}\n{\"id\": \"a\", \"embedding\": [2]}\n";
        assert!(matches!(
            read_embedding_jsonl(dup.as_bytes(), Path::new("src"), "p"),
            Err(Error::InvalidRecord { .. })
        ));
    }
}
