//! Per-pair activation-histogram distance.
//!
//! Each layer yields a `positions x neurons` activation matrix. Histograms
//! use 64 uniform bins over the range observed in that layer across every
//! image being compared, so both sides of a pair share edges.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DNA_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerHistograms {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// `neurons x bins` non-negative counts.
    pub counts: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationHistogramSet {
    pub layers: Vec<LayerHistograms>,
}

/// Layer activations for one image.
pub trait ActivationProvider: Send + Sync {
    fn activations(&self, image: &Image) -> Result<Vec<Array2<f64>>>;
}

/// 1-D earth mover's distance between two histograms on shared edges.
pub fn emd_1d(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>, edges: &[f64]) -> Result<f64> {
    if p.len() != q.len() || edges.len() != p.len() + 1 {
        return Err(Error::contract("histogram and edge lengths disagree"));
    }
    let (sp, sq) = (p.sum(), q.sum());
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::domain("histograms must have positive mass"));
    }
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        cp += p[i] / sp;
        cq += q[i] / sq;
        total += (cp - cq).abs() * (edges[i + 1] - edges[i]);
    }
    Ok(total)
}

/// Mean EMD over neurons, then over layers.
pub fn visual_dna_pair(real: &ActivationHistogramSet, anon: &ActivationHistogramSet) -> Result<f64> {
    if real.layers.len() != anon.layers.len() || real.layers.is_empty() {
        return Err(Error::contract("histogram sets have different layer counts"));
    }
    let mut layer_sum = 0.0;
    for (i, (a, b)) in real.layers.iter().zip(&anon.layers).enumerate() {
        if a.edges != b.edges || a.counts.dim() != b.counts.dim() || a.counts.nrows() == 0 {
            return Err(Error::contract(format!("layer {i} structure differs")));
        }
        let mut neuron_sum = 0.0;
        for (p, q) in a.counts.rows().into_iter().zip(b.counts.rows()) {
            neuron_sum += emd_1d(p, q, &a.edges)?;
        }
        layer_sum += neuron_sum / a.counts.nrows() as f64;
    }
    Ok(layer_sum / real.layers.len() as f64)
}

/// Per-layer edges spanning the values in every activation set given.
pub fn shared_layer_edges(sets: &[&[Array2<f64>]], bins: usize) -> Result<Vec<Vec<f64>>> {
    let first = sets.first().ok_or_else(|| Error::domain("no activations"))?;
    if bins == 0 {
        return Err(Error::domain("bins must be positive"));
    }
    (0..first.len())
        .map(|l| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for set in sets {
                let layer = set
                    .get(l)
                    .ok_or_else(|| Error::contract("activation sets have different layer counts"))?;
                for v in layer {
                    if !v.is_finite() {
                        return Err(Error::domain("activations must be finite"));
                    }
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
            if lo > hi {
                return Err(Error::domain(format!("layer {l} is empty")));
            }
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            Ok((0..=bins)
                .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
                .collect())
        })
        .collect()
}

pub fn histogram_set(activations: &[Array2<f64>], edges: &[Vec<f64>]) -> Result<ActivationHistogramSet> {
    if activations.len() != edges.len() {
        return Err(Error::contract("one edge vector per layer is required"));
    }
    let layers = activations
        .iter()
        .zip(edges)
        .map(|(acts, e)| {
            let bins = e.len() - 1;
            let (lo, hi) = (e[0], e[bins]);
            let mut counts = Array2::zeros((acts.ncols(), bins));
            for row in acts.rows() {
                for (n, v) in row.iter().enumerate() {
                    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
                    let b = (t.max(0.0) as usize).min(bins - 1);
                    counts[[n, b]] += 1.0;
                }
            }
            LayerHistograms {
                edges: e.clone(),
                counts,
            }
        })
        .collect();
    Ok(ActivationHistogramSet { layers })
}

/// Visual DNA distance of one real/anonymized pair under `provider`.
pub fn dna_distance(provider: &dyn ActivationProvider, real: &Image, anon: &Image) -> Result<f64> {
    let a = provider.activations(real)?;
    let b = provider.activations(anon)?;
    let edges = shared_layer_edges(&[&a, &b], DNA_BINS)?;
    visual_dna_pair(&histogram_set(&a, &edges)?, &histogram_set(&b, &edges)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnaSummary {
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
}

/// Population mean and standard deviation.
pub fn dataset_dna_report(pairs: &[f64]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::domain("no pair distances"));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().sum::<f64>() / n;
    let var = pairs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
