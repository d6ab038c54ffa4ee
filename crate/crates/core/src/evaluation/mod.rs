//! Privacy and quality metrics over pluggable embedders.

mod auc;
mod dna;
mod fid;
mod retrieval;

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use auc::downstream_auc;
pub use dna::{
    dataset_dna_report, dna_distance, emd_1d, histogram_set, shared_layer_edges, visual_dna_pair,
    ActivationHistogramSet, ActivationProvider, DnaSummary, LayerHistograms, DNA_BINS,
};
pub use fid::{fid, COVARIANCE_REGULARIZER};
pub use retrieval::{
    knn_rank, reid_from_embeddings, reid_report, CosineGallery, Protocol, ReIDReport, REID_RANKS,
};

use crate::attributes::{detect_faces, BBox, FaceDetector, FaceRecord, ToyFaceEncoder};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

/// Identity embedding of one detected face.
pub trait FaceEmbedder: Send + Sync {
    fn embed_face(&self, image: &Image, face: &FaceRecord) -> Result<Vec<f64>>;
}

/// Embedding of a whole image, as a reverse image search engine would use.
pub trait WholeImageEmbedder: Send + Sync {
    fn embed_image(&self, image: &Image) -> Result<Vec<f64>>;
}

impl FaceEmbedder for ToyFaceEncoder {
    fn embed_face(&self, image: &Image, face: &FaceRecord) -> Result<Vec<f64>> {
        Ok(self.embed_region(image, &face.bbox))
    }
}

/// Random projection of the pooled whole image.
#[derive(Debug, Clone)]
pub struct ToyImageEmbedder {
    encoder: ToyFaceEncoder,
}

impl ToyImageEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            encoder: ToyFaceEncoder::new(seed::derive_seed(seed, "image-embedder")),
        }
    }
}

impl WholeImageEmbedder for ToyImageEmbedder {
    fn embed_image(&self, image: &Image) -> Result<Vec<f64>> {
        let bbox = BBox::new(0.0, 0.0, image.width() as f64, image.height() as f64);
        Ok(self.encoder.embed_region(image, &bbox))
    }
}

/// Two rectified random-projection layers over a downsampled image.
#[derive(Debug, Clone)]
pub struct ToyActivationProvider {
    first: Array2<f64>,
    second: Array2<f64>,
}

const TOY_ACTIVATION_SIDE: usize = 16;
const TOY_NEURONS: usize = 8;

impl ToyActivationProvider {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::tagged_rng(seed, "toy-activations");
        let mut draw = |rows, cols| {
            Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
        };
        Self {
            first: draw(3, TOY_NEURONS),
            second: draw(TOY_NEURONS, TOY_NEURONS),
        }
    }
}

impl ActivationProvider for ToyActivationProvider {
    fn activations(&self, image: &Image) -> Result<Vec<Array2<f64>>> {
        let side = TOY_ACTIVATION_SIDE;
        let small = image.resize(side, side);
        let pixels = small
            .data()
            .to_shape((3, side * side))
            .map_err(|e| Error::contract(e.to_string()))?
            .t()
            .mapv(|v| v / 255.0 - 0.5);
        let first = pixels.dot(&self.first).mapv(|v| v.max(0.0));
        // 2x2 average pool over the spatial grid before the second layer.
        let half = side / 2;
        let mut pooled = Array2::zeros((half * half, TOY_NEURONS));
        for y in 0..side {
            for x in 0..side {
                let mut dst = pooled.row_mut((y / 2) * half + x / 2);
                dst.scaled_add(0.25, &first.row(y * side + x));
            }
        }
        let second = pooled.dot(&self.second).mapv(|v| v.max(0.0));
        Ok(vec![first, second])
    }
}

/// An image with its identifier, e.g. the file stem.
#[derive(Debug, Clone)]
pub struct NamedImage {
    pub id: String,
    pub image: Image,
}

impl NamedImage {
    pub fn new(id: impl Into<String>, image: Image) -> Self {
        Self {
            id: id.into(),
            image,
        }
    }
}

fn largest_face_embedding(
    item: &NamedImage,
    detector: &dyn FaceDetector,
    embedder: &dyn FaceEmbedder,
) -> Option<Vec<f64>> {
    let outcome = detect_faces(&item.image, detector);
    let face = outcome.faces.first()?;
    embedder.embed_face(&item.image, face).ok()
}

/// Embeddings for the items where `f` succeeds, in input order.
fn embed_all<F>(items: &[NamedImage], f: F) -> Vec<(String, Vec<f64>)>
where
    F: Fn(&NamedImage) -> Option<Vec<f64>> + Sync,
{
    let results: Vec<_> = items.par_iter().map(|it| (it.id.clone(), f(it))).collect();
    results
        .into_iter()
        .filter_map(|(id, e)| e.map(|e| (id, e)))
        .collect()
}

/// Ranks anonymized embeddings against the real gallery and accounts for
/// every anonymized id as a query, an exclusion, or unpaired.
fn paired_report(
    real: &[NamedImage],
    anon: &[NamedImage],
    real_emb: Vec<(String, Vec<f64>)>,
    anon_emb: Vec<(String, Vec<f64>)>,
    protocol: Protocol,
) -> Result<ReIDReport> {
    if real_emb.is_empty() {
        return Err(Error::Protocol("no real image produced an embedding".into()));
    }
    let gallery = EmbeddingSet::from_rows(real_emb, "real")?;
    let paired: Vec<_> = anon_emb
        .into_iter()
        .filter(|(id, _)| gallery.index_of(id).is_some())
        .collect();
    let mut report = if paired.is_empty() {
        // Nothing could be scored, e.g. no face survived anonymization.
        ReIDReport {
            reid_at: Default::default(),
            map_score: 0.0,
            protocol,
            n_queries: 0,
            excluded: 0,
            unpaired: Vec::new(),
        }
    } else {
        let queries = EmbeddingSet::from_rows(paired, "anonymized")?;
        reid_from_embeddings(&gallery, &queries, protocol)?
    };
    report.unpaired = anon
        .iter()
        .filter(|a| !real.iter().any(|r| r.id == a.id))
        .map(|a| a.id.clone())
        .collect();
    report.excluded = anon.len() - report.unpaired.len() - report.n_queries;
    Ok(report)
}

fn check_ids(items: &[NamedImage], side: &str) -> Result<()> {
    let mut ids: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Protocol(format!("duplicate {side} id {:?}", w[0])));
    }
    Ok(())
}

/// Re-identification from the largest face in each image.
///
/// Images whose face cannot be detected or embedded, on either side, are
/// excluded and counted.
pub fn face_level_protocol(
    real: &[NamedImage],
    anon: &[NamedImage],
    detector: &dyn FaceDetector,
    embedder: &dyn FaceEmbedder,
) -> Result<ReIDReport> {
    check_ids(real, "real")?;
    check_ids(anon, "anonymized")?;
    let real_emb = embed_all(real, |it| largest_face_embedding(it, detector, embedder));
    let anon_emb = embed_all(anon, |it| largest_face_embedding(it, detector, embedder));
    paired_report(real, anon, real_emb, anon_emb, Protocol::FaceLevel)
}

/// Re-identification from whole-image embeddings.
pub fn image_level_protocol(
    real: &[NamedImage],
    anon: &[NamedImage],
    embedder: &dyn WholeImageEmbedder,
) -> Result<ReIDReport> {
    check_ids(real, "real")?;
    check_ids(anon, "anonymized")?;
    let real_emb = embed_all(real, |it| embedder.embed_image(&it.image).ok());
    let anon_emb = embed_all(anon, |it| embedder.embed_image(&it.image).ok());
    paired_report(real, anon, real_emb, anon_emb, Protocol::ImageLevel)
}

/// FID between whole-image embeddings of two image sets.
pub fn fid_from_images(
    real: &[NamedImage],
    anon: &[NamedImage],
    embedder: &dyn WholeImageEmbedder,
) -> Result<f64> {
    let features = |items: &[NamedImage]| -> Result<Array2<f64>> {
        let rows = items
            .par_iter()
            .map(|it| embedder.embed_image(&it.image))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = rows.iter().map(|r| ndarray::ArrayView1::from(r.as_slice())).collect();
        ndarray::stack(Axis(0), &views).map_err(|e| Error::contract(e.to_string()))
    };
    fid(&features(real)?, &features(anon)?)
}

/// Visual DNA over pairs matched by id.
pub fn dna_from_images(
    real: &[NamedImage],
    anon: &[NamedImage],
    provider: &dyn ActivationProvider,
) -> Result<DnaSummary> {
    let pairs: Vec<(&Image, &Image)> = anon
        .iter()
        .filter_map(|a| {
            real.iter()
                .find(|r| r.id == a.id)
                .map(|r| (&r.image, &a.image))
        })
        .collect();
    let distances = pairs
        .par_iter()
        .map(|(r, a)| dna_distance(provider, r, a))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = dataset_dna_report(&distances)?;
    Ok(DnaSummary {
        mean,
        std,
        pairs: distances.len(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_level: Option<ReIDReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_level: Option<ReIDReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_dna: Option<DnaSummary>,
}

impl EvaluationReport {
    /// Metric rows against protocol columns, then quality lines.
    pub fn to_table(&self) -> String {
        let cols = [
            (Protocol::FaceLevel, self.face_level.as_ref()),
            (Protocol::ImageLevel, self.image_level.as_ref()),
        ];
        let mut out = String::new();
        if cols.iter().all(|(_, r)| r.is_none()) {
            self.push_scalar_lines(&mut out);
            return out;
        }
        let _ = write!(out, "{:<10}", "Metric");
        for (p, _) in &cols {
            let _ = write!(out, " | {:>11}", p.label());
        }
        out.push('\n');
        out.push_str(&"-".repeat(10 + cols.len() * 14));
        out.push('\n');
        let cell = |r: Option<&ReIDReport>, f: &dyn Fn(&ReIDReport) -> Option<f64>| {
            r.and_then(f).map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
        };
        for k in REID_RANKS {
            let _ = write!(out, "{:<10}", format!("Re-ID@{k}"));
            for (_, r) in &cols {
                let _ = write!(out, " | {:>11}", cell(*r, &|r| r.at(k)));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<10}", "mAP");
        for (_, r) in &cols {
            let _ = write!(out, " | {:>11}", cell(*r, &|r| (r.n_queries > 0).then_some(r.map_score)));
        }
        out.push('\n');
        for (label, count) in [
            ("Queries", (|r: &ReIDReport| r.n_queries) as fn(&ReIDReport) -> usize),
            ("Excluded", |r| r.excluded),
        ] {
            let _ = write!(out, "{label:<10}");
            for (_, r) in &cols {
                let v = r.map_or_else(|| "-".into(), |r| count(r).to_string());
                let _ = write!(out, " | {v:>11}");
            }
            out.push('\n');
        }
        self.push_scalar_lines(&mut out);
        out
    }

    fn push_scalar_lines(&self, out: &mut String) {
        if let Some(f) = self.fid {
            let _ = writeln!(out, "FID: {f:.3}");
        }
        if let Some(d) = self.visual_dna {
            let _ = writeln!(out, "Visual DNA: {:.3} \u{00b1} {:.3} ({} pairs)", d.mean, d.std, d.pairs);
        }
    }
}
