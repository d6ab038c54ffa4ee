//! Identity-repelling classifier-free guidance.
//!
//! Each sampling step combines three noise predictions: the identity control
//! branch (conditioned on the latent of the original image and the positive
//! prompt), the negative-prompt branch and the positive-prompt branch. The
//! anonymization scale `a_s` interpolates between faithful reconstruction
//! (`a_s = 0`), ordinary CFG (`a_s = 1`) and active repulsion from the
//! original (`a_s > 1`).

use std::fmt;
use std::sync::Arc;

use ndarray::{Array, Array3, ArrayView, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default classifier-free guidance scale.
pub const DEFAULT_OMEGA: f64 = 7.5;

/// Coefficients of the three guided noise predictions.
///
/// `w0` scales the identity-control prediction, `w1` the negative-prompt
/// prediction and `w2` the positive-prompt prediction. They always sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    a_s: f64,
    omega: f64,
    w0: f64,
    w1: f64,
    w2: f64,
}

impl GuidanceWeights {
    pub fn new(a_s: f64, omega: f64) -> Result<Self> {
        compute_guidance_weights(a_s, omega)
    }

    pub fn a_s(&self) -> f64 {
        self.a_s
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn w1(&self) -> f64 {
        self.w1
    }

    pub fn w2(&self) -> f64 {
        self.w2
    }

    pub fn as_triple(&self) -> (f64, f64, f64) {
        (self.w0, self.w1, self.w2)
    }
}

/// Derives `(w0, w1, w2)` from the anonymization scale and the guidance scale.
///
/// The positive-prompt weight is `a_s * omega` below 1 and `a_s - 1 + omega`
/// from 1 upwards; both branches meet at `omega` when `a_s = 1`. `a_s = 0`
/// falls in the lower branch, giving pure identity reconstruction.
pub fn compute_guidance_weights(a_s: f64, omega: f64) -> Result<GuidanceWeights> {
    if !a_s.is_finite() || a_s < 0.0 {
        return Err(Error::domain(format!(
            "anonymization scale must be finite and >= 0, got {a_s}"
        )));
    }
    if !omega.is_finite() || omega <= 0.0 {
        return Err(Error::domain(format!(
            "guidance scale must be finite and > 0, got {omega}"
        )));
    }
    let w0 = 1.0 - a_s;
    // Adding 0.0 turns the -0.0 of a_s = 0 into 0.0.
    let w1 = a_s.min(1.0) * (1.0 - omega) + 0.0;
    let w2 = if a_s < 1.0 { a_s * omega } else { a_s - 1.0 + omega };
    Ok(GuidanceWeights {
        a_s,
        omega,
        w0,
        w1,
        w2,
    })
}

/// `w0 * eps_identity + w1 * eps_negative + w2 * eps_positive`.
pub fn combine_noise_predictions<D: Dimension>(
    weights: &GuidanceWeights,
    eps_identity: ArrayView<'_, f64, D>,
    eps_negative: ArrayView<'_, f64, D>,
    eps_positive: ArrayView<'_, f64, D>,
) -> Result<Array<f64, D>> {
    if eps_identity.shape() != eps_negative.shape() || eps_identity.shape() != eps_positive.shape()
    {
        return Err(Error::contract(format!(
            "noise prediction shapes differ: {:?} / {:?} / {:?}",
            eps_identity.shape(),
            eps_negative.shape(),
            eps_positive.shape()
        )));
    }
    let (w0, w1, w2) = weights.as_triple();
    let mut out = Array::zeros(eps_identity.raw_dim());
    Zip::from(&mut out)
        .and(&eps_identity)
        .and(&eps_negative)
        .and(&eps_positive)
        .for_each(|o, &i, &n, &p| *o = w0 * i + w1 * n + w2 * p);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Depth,
    Normal,
    Segmentation,
    Pose,
    Lineart,
    /// Latent of the original image; feeds the identity branch only.
    IdentityLatent,
    /// Per-face attribute map consumed by the lightweight adapter variant.
    FaceAttributes,
}

impl ControlKind {
    /// Spatial controls in their canonical extraction order.
    pub const SPATIAL: [ControlKind; 5] = [
        ControlKind::Depth,
        ControlKind::Normal,
        ControlKind::Segmentation,
        ControlKind::Pose,
        ControlKind::Lineart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::Depth => "depth",
            ControlKind::Normal => "normal",
            ControlKind::Segmentation => "segmentation",
            ControlKind::Pose => "pose",
            ControlKind::Lineart => "lineart",
            ControlKind::IdentityLatent => "identity_latent",
            ControlKind::FaceAttributes => "face_attributes",
        }
    }

    /// Default `(weight, cutoff_fraction)`.
    pub fn default_settings(self) -> ControlSettings {
        let (weight, cutoff_fraction) = match self {
            ControlKind::Depth => (0.5, 1.0),
            ControlKind::Normal => (0.3, 1.0),
            ControlKind::Segmentation => (0.3, 1.0),
            ControlKind::Pose => (0.4, 1.0),
            ControlKind::Lineart => (0.5, 0.5),
            ControlKind::IdentityLatent | ControlKind::FaceAttributes => (1.0, 1.0),
        };
        ControlSettings {
            weight,
            cutoff_fraction,
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    pub weight: f64,
    pub cutoff_fraction: f64,
}

impl ControlSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::domain(format!(
                "control weight must lie in [0, 1], got {}",
                self.weight
            )));
        }
        if !(self.cutoff_fraction > 0.0 && self.cutoff_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "cutoff fraction must lie in (0, 1], got {}",
                self.cutoff_fraction
            )));
        }
        Ok(())
    }
}

/// One spatial conditioning channel. Weight and cutoff are fixed at
/// construction; the tensor is shared so signals are cheap to clone.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    kind: ControlKind,
    tensor: Arc<Array3<f64>>,
    weight: f64,
    cutoff_fraction: f64,
}

impl ControlSignal {
    pub fn new(kind: ControlKind, tensor: Array3<f64>, settings: ControlSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            kind,
            tensor: Arc::new(tensor),
            weight: settings.weight,
            cutoff_fraction: settings.cutoff_fraction,
        })
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.tensor
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn cutoff_fraction(&self) -> f64 {
        self.cutoff_fraction
    }

    /// The step index from which this control is disabled.
    pub fn cutoff_step(&self, total_steps: usize) -> usize {
        (self.cutoff_fraction * total_steps as f64).floor() as usize
    }
}

/// The control's weight while `step_index < floor(cutoff_fraction * total_steps)`,
/// zero afterwards.
pub fn effective_control_weight(
    control: &ControlSignal,
    step_index: usize,
    total_steps: usize,
) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::contract("total_steps must be positive"));
    }
    if step_index >= total_steps {
        return Err(Error::contract(format!(
            "step index {step_index} out of range for {total_steps} steps"
        )));
    }
    if step_index < control.cutoff_step(total_steps) {
        Ok(control.weight)
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A sequence of equal-dimension token vectors filling a prompt slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    tokens: Vec<Vec<f64>>,
    polarity: Polarity,
}

impl PromptEmbedding {
    pub fn new(tokens: Vec<Vec<f64>>, polarity: Polarity) -> Result<Self> {
        if let Some(first) = tokens.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(Error::contract("prompt tokens must be non-empty vectors"));
            }
            if let Some(bad) = tokens.iter().position(|t| t.len() != dim) {
                return Err(Error::contract(format!(
                    "prompt token {bad} has dimension {} (expected {dim})",
                    tokens[bad].len()
                )));
            }
        }
        Ok(Self { tokens, polarity })
    }

    pub fn tokens(&self) -> &[Vec<f64>] {
        &self.tokens
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn dim(&self) -> Option<usize> {
        self.tokens.first().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }
}
