//! Nearest-neighbour retrieval ranks and re-identification summaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Ranks reported by [`reid_report`].
pub const REID_RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FaceLevel,
    ImageLevel,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::FaceLevel => "Face-level",
            Protocol::ImageLevel => "Image-level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReIDReport {
    /// Empty when no query could be scored (`n_queries == 0`).
    pub reid_at: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub protocol: Protocol,
    pub n_queries: usize,
    /// Queries dropped because detection or embedding failed.
    #[serde(default)]
    pub excluded: usize,
    /// Anonymized ids with no real counterpart.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unpaired: Vec<String>,
}

impl ReIDReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.reid_at.get(&k).copied()
    }
}

/// Re-ID@K as the fraction of ranks `<= K`; mAP as the mean reciprocal rank.
pub fn reid_report(ranks: &[usize], protocol: Protocol) -> Result<ReIDReport> {
    if ranks.is_empty() {
        return Err(Error::domain("reid_report needs at least one rank"));
    }
    if ranks.contains(&0) {
        return Err(Error::domain("ranks are 1-based"));
    }
    let n = ranks.len() as f64;
    let reid_at = REID_RANKS
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let map_score = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok(ReIDReport {
        reid_at,
        map_score,
        protocol,
        n_queries: ranks.len(),
        excluded: 0,
        unpaired: Vec::new(),
    })
}

fn unit(v: ArrayView1<'_, f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Gallery with rows pre-normalized for cosine ranking.
#[derive(Debug, Clone)]
pub struct CosineGallery<'a> {
    set: &'a EmbeddingSet,
    units: Array2<f64>,
}

impl<'a> CosineGallery<'a> {
    pub fn new(set: &'a EmbeddingSet) -> Self {
        let mut units = Array2::zeros(set.vectors().raw_dim());
        for (mut dst, src) in units.rows_mut().into_iter().zip(set.vectors().rows()) {
            dst.assign(&ArrayView1::from(&unit(src)));
        }
        Self { set, units }
    }

    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.set.dim() {
            return Err(Error::contract(format!(
                "query dimension {} does not match gallery dimension {}",
                query.len(),
                self.set.dim()
            )));
        }
        let q = unit(ArrayView1::from(query));
        Ok(self
            .units
            .rows()
            .into_iter()
            .map(|row| 1.0 - row.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// 1-based rank of `true_id` by ascending cosine distance, ties by id.
    pub fn rank(&self, query: &[f64], true_id: &str) -> Result<usize> {
        let t = self
            .set
            .index_of(true_id)
            .ok_or_else(|| Error::Protocol(format!("id {true_id:?} is not in the gallery")))?;
        let d = self.distances(query)?;
        let ids = self.set.ids();
        let ahead = (0..d.len())
            .filter(|&j| match d[j].total_cmp(&d[t]) {
                Ordering::Less => true,
                Ordering::Equal => ids[j] < ids[t],
                Ordering::Greater => false,
            })
            .count();
        Ok(ahead + 1)
    }
}

pub fn knn_rank(query: &[f64], gallery: &EmbeddingSet, true_id: &str) -> Result<usize> {
    CosineGallery::new(gallery).rank(query, true_id)
}

/// Ranks every query against the gallery entry with the same id.
///
/// Query ids missing from the gallery are reported as unpaired and skipped.
pub fn reid_from_embeddings(
    gallery: &EmbeddingSet,
    queries: &EmbeddingSet,
    protocol: Protocol,
) -> Result<ReIDReport> {
    let g = CosineGallery::new(gallery);
    let (paired, unpaired): (Vec<usize>, Vec<usize>) =
        (0..queries.len()).partition(|&i| gallery.index_of(&queries.ids()[i]).is_some());
    let ranks = paired
        .par_iter()
        .map(|&i| {
            let q = queries.vectors().row(i).to_vec();
            g.rank(&q, &queries.ids()[i])
        })
        .collect::<Result<Vec<_>>>()?;
    if ranks.is_empty() {
        return Err(Error::Protocol("no paired queries".into()));
    }
    let mut report = reid_report(&ranks, protocol)?;
    report.unpaired = unpaired.into_iter().map(|i| queries.ids()[i].clone()).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[(&str, &[f64])]) -> EmbeddingSet {
        EmbeddingSet::from_rows(
            rows.iter().map(|(i, v)| (i.to_string(), v.to_vec())).collect(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn exact_match_is_rank_one() {
        let g = set(&[("a", &[1.0, 0.0, 0.0]), ("b", &[0.0, 1.0, 0.0]), ("c", &[0.0, 0.0, 1.0])]);
        assert_eq!(knn_rank(&[0.0, 1.0, 0.0], &g, "b").unwrap(), 1);
    }

    #[test]
    fn rank_follows_distance_order() {
        // Cosine distances from e0: 0.4, 0.2, 0.9.
        let at = |d: f64| {
            let c: f64 = 1.0 - d;
            vec![c, (1.0 - c * c).sqrt()]
        };
        let rows = [("a", at(0.4)), ("b", at(0.2)), ("c", at(0.9))];
        let g = EmbeddingSet::from_rows(
            rows.iter().map(|(i, v)| (i.to_string(), v.clone())).collect(),
            "t",
        )
        .unwrap();
        assert_eq!(knn_rank(&[1.0, 0.0], &g, "a").unwrap(), 2);
    }

    #[test]
    fn ties_use_id_order() {
        let g = set(&[("b", &[1.0, 0.0]), ("a", &[2.0, 0.0])]);
        assert_eq!(knn_rank(&[1.0, 0.0], &g, "a").unwrap(), 1);
        assert_eq!(knn_rank(&[1.0, 0.0], &g, "b").unwrap(), 2);
        assert!(matches!(knn_rank(&[1.0, 0.0], &g, "z"), Err(Error::Protocol(_))));
    }

    #[test]
    fn report_values() {
        let r = reid_report(&[1, 2, 4], Protocol::FaceLevel).unwrap();
        assert!((r.at(1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.at(5), Some(1.0));
        assert!((r.map_score - 0.5833333333333334).abs() < 1e-12);
        let r = reid_report(&[1, 1], Protocol::ImageLevel).unwrap();
        assert!(r.reid_at.values().all(|v| *v == 1.0));
        assert_eq!(r.map_score, 1.0);
        assert_eq!(reid_report(&[11, 20], Protocol::ImageLevel).unwrap().at(10), Some(0.0));
    }

    #[test]
    fn unpaired_queries_are_listed() {
        let g = set(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let q = set(&[("a", &[1.0, 0.1]), ("x", &[0.0, 1.0])]);
        let r = reid_from_embeddings(&g, &q, Protocol::ImageLevel).unwrap();
        assert_eq!(r.n_queries, 1);
        assert_eq!(r.unpaired, vec!["x".to_string()]);
    }
}
