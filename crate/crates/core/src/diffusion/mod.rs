//! Denoiser and autoencoder contracts, the sigma schedule and the sampling loop.

mod sampler;
mod schedule;
mod toy;
pub mod wire;

use ndarray::Array3;

pub use sampler::{
    img2img_init, sample, Euler, EulerAncestral, GuidanceSlot, SampleRequest, SamplingTrace,
    SlotRecord, StepRecord, Stepper, StepperKind, TracingDenoiser, DenoiserCall,
};
pub use schedule::{
    karras_sigma_schedule, SigmaSchedule, DEFAULT_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
pub use toy::{ToyAutoencoder, ToyDenoiser};

use crate::error::{Error, Result};
use crate::guidance::{ControlSignal, PromptEmbedding};
use crate::image::Image;

pub const LATENT_CHANNELS: usize = 4;
pub const DOWNSAMPLE: usize = 8;

/// A `4 x h x w` latent with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Array3<f64>,
}

impl LatentTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != LATENT_CHANNELS {
            return Err(Error::contract(format!(
                "latent must have {LATENT_CHANNELS} channels, got {}",
                data.shape()[0]
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("latent contains non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((LATENT_CHANNELS, height, width)),
        }
    }

    /// Latent spatial size for an image, or a domain error when a side is not
    /// a multiple of 8.
    pub fn dims_for_image(width: usize, height: usize) -> Result<(usize, usize)> {
        if !width.is_multiple_of(DOWNSAMPLE) || !height.is_multiple_of(DOWNSAMPLE) || width == 0 || height == 0 {
            return Err(Error::domain(format!(
                "image size {width}x{height} is not a positive multiple of {DOWNSAMPLE}"
            )));
        }
        Ok((height / DOWNSAMPLE, width / DOWNSAMPLE))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }
}

/// A control passed to the denoiser together with its weight at this step.
#[derive(Debug, Clone, Copy)]
pub struct WeightedControl<'a> {
    pub signal: &'a ControlSignal,
    pub weight: f64,
}

/// Noise-prediction network.
///
/// Implementations must return a tensor shaped like `x` and be deterministic
/// for identical inputs. Whether the per-control weight scales the control
/// tensor or the residual it produces is up to the implementation.
pub trait Denoiser: Send + Sync {
    fn predict(
        &self,
        x: &LatentTensor,
        sigma: f64,
        controls: &[WeightedControl<'_>],
        prompt: &PromptEmbedding,
    ) -> Result<Array3<f64>>;

    /// False when one instance must not serve concurrent samples.
    fn shareable(&self) -> bool {
        true
    }
}

pub trait Autoencoder: Send + Sync {
    fn encode(&self, image: &Image) -> Result<LatentTensor>;
    fn decode(&self, latent: &LatentTensor) -> Result<Image>;

    fn shareable(&self) -> bool {
        true
    }
}
