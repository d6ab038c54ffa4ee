//! Deterministic linear stand-ins for the denoiser and the autoencoder.
//!
//! These are fixtures for exact verification, not approximations of the
//! real networks.

use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    Autoencoder, Denoiser, LatentTensor, WeightedControl, DOWNSAMPLE, LATENT_CHANNELS,
};
use crate::error::{Error, Result};
use crate::guidance::{ControlKind, PromptEmbedding};
use crate::image::Image;
use crate::seed;

/// Affine toy denoiser.
///
/// It predicts a clean latent `D` and returns `eps = (x - D) / sigma`, where
///
/// ```text
/// R = sum_i w_i * B_i(control_i) + C(prompt)
/// D = w_id * z_id + (1 - w_id) * R     (identity control present)
/// D = R                                 (otherwise)
/// ```
///
/// `B_i` average-pools a control to latent resolution and mixes its channels
/// into 4 with a seed-derived matrix; `C` projects the mean prompt token to
/// a per-channel constant. The identity control reproduces its latent, so a
/// sampler driven only by that slot converges onto the original.
#[derive(Debug, Clone, Copy)]
pub struct ToyDenoiser {
    seed: u64,
}

impl ToyDenoiser {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn matrix(&self, tag: &str, cols: usize) -> Array2<f64> {
        let mut rng = seed::tagged_rng(self.seed, &format!("{tag}/{cols}"));
        let scale = 0.5 / (cols as f64).sqrt();
        Array2::from_shape_fn((LATENT_CHANNELS, cols), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// `B_kind(control)` at latent resolution `(h, w)`.
    pub fn project_control(
        &self,
        kind: ControlKind,
        tensor: &Array3<f64>,
        h: usize,
        w: usize,
    ) -> Result<Array3<f64>> {
        let (c, ch, cw) = tensor.dim();
        if h == 0 || w == 0 || ch % h != 0 || cw % w != 0 || ch / h != cw / w {
            return Err(Error::contract(format!(
                "{kind} control of spatial size {ch}x{cw} cannot be pooled to latent {h}x{w}"
            )));
        }
        let factor = ch / h;
        let pooled = average_pool(tensor, factor);
        if kind == ControlKind::IdentityLatent {
            if c != LATENT_CHANNELS {
                return Err(Error::contract("identity control must be a 4-channel latent"));
            }
            return Ok(pooled);
        }
        let mix = self.matrix(kind.as_str(), c);
        Ok(mix_channels(&mix, &pooled))
    }

    /// `C(prompt)` broadcast to `(4, h, w)`.
    pub fn project_prompt(&self, prompt: &PromptEmbedding, h: usize, w: usize) -> Array3<f64> {
        let Some(dim) = prompt.dim() else {
            return Array3::zeros((LATENT_CHANNELS, h, w));
        };
        let mut mean = vec![0.0; dim];
        for token in prompt.tokens() {
            for (m, v) in mean.iter_mut().zip(token) {
                *m += v;
            }
        }
        let count = prompt.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let proj = self.matrix("prompt", dim);
        let mut out = Array3::zeros((LATENT_CHANNELS, h, w));
        for k in 0..LATENT_CHANNELS {
            let v: f64 = proj.row(k).iter().zip(&mean).map(|(a, b)| a * b).sum();
            out.slice_mut(s![k, .., ..]).fill(v);
        }
        out
    }

    /// The clean-latent estimate `D` for a latent of spatial size `(h, w)`.
    pub fn denoised(
        &self,
        h: usize,
        w: usize,
        controls: &[WeightedControl<'_>],
        prompt: &PromptEmbedding,
    ) -> Result<Array3<f64>> {
        let mut residual = self.project_prompt(prompt, h, w);
        let mut identity: Option<(f64, Array3<f64>)> = None;
        for control in controls {
            let kind = control.signal.kind();
            let projected = self.project_control(kind, control.signal.tensor(), h, w)?;
            if kind == ControlKind::IdentityLatent {
                if identity.is_some() {
                    return Err(Error::contract("more than one identity control"));
                }
                identity = Some((control.weight, projected));
            } else {
                residual.scaled_add(control.weight, &projected);
            }
        }
        Ok(match identity {
            Some((weight, latent)) => latent * weight + residual * (1.0 - weight),
            None => residual,
        })
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(
        &self,
        x: &LatentTensor,
        sigma: f64,
        controls: &[WeightedControl<'_>],
        prompt: &PromptEmbedding,
    ) -> Result<Array3<f64>> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::contract(format!("sigma must be positive, got {sigma}")));
        }
        let denoised = self.denoised(x.height(), x.width(), controls, prompt)?;
        Ok((x.data() - &denoised) / sigma)
    }
}

fn average_pool(tensor: &Array3<f64>, factor: usize) -> Array3<f64> {
    if factor == 1 {
        return tensor.clone();
    }
    let (c, h, w) = tensor.dim();
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = Array3::zeros((c, oh, ow));
    for ((ci, y, x), v) in tensor.indexed_iter() {
        out[[ci, y / factor, x / factor]] += v;
    }
    out.mapv_inplace(|v| v / norm);
    out
}

fn mix_channels(mix: &Array2<f64>, input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = input.dim();
    let flat = input
        .view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous pooled tensor");
    mix.dot(&flat)
        .into_shape_with_order((mix.nrows(), h, w))
        .expect("mixed tensor shape")
}

/// Columns are orthonormal, so the transpose inverts the mix exactly.
const TOY_MIX: [[f64; 3]; LATENT_CHANNELS] = [
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5],
];

/// 8x8 block-mean encoder with a fixed orthonormal RGB-to-latent mix.
///
/// `decode(encode(img))` equals the block-mean image of `img`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyAutoencoder;

impl ToyAutoencoder {
    pub fn new() -> Self {
        Self
    }

    /// Every pixel replaced by the mean of its 8x8 block.
    pub fn block_mean(image: &Image) -> Result<Image> {
        LatentTensor::dims_for_image(image.width(), image.height())?;
        let pooled = average_pool(image.data(), DOWNSAMPLE);
        let mut out = Array3::zeros(image.data().raw_dim());
        for ((c, y, x), v) in out.indexed_iter_mut() {
            *v = pooled[[c, y / DOWNSAMPLE, x / DOWNSAMPLE]];
        }
        Image::from_array(out)
    }
}

impl Autoencoder for ToyAutoencoder {
    fn encode(&self, image: &Image) -> Result<LatentTensor> {
        LatentTensor::dims_for_image(image.width(), image.height())?;
        let pooled = average_pool(image.data(), DOWNSAMPLE).mapv(|v| v / 127.5 - 1.0);
        let mix = Array2::from_shape_fn((LATENT_CHANNELS, 3), |(k, c)| TOY_MIX[k][c]);
        LatentTensor::new(mix_channels(&mix, &pooled))
    }

    fn decode(&self, latent: &LatentTensor) -> Result<Image> {
        let mix_t = Array2::from_shape_fn((3, LATENT_CHANNELS), |(c, k)| TOY_MIX[k][c]);
        let rgb = mix_channels(&mix_t, latent.data()).mapv(|v| (v + 1.0) * 127.5);
        let (h, w) = (latent.height() * DOWNSAMPLE, latent.width() * DOWNSAMPLE);
        let mut out = Array3::zeros((3, h, w));
        for ((c, y, x), v) in out.indexed_iter_mut() {
            *v = rgb[[c, y / DOWNSAMPLE, x / DOWNSAMPLE]];
        }
        Image::from_array(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::{ControlSettings, ControlSignal, Polarity};

    fn random_latent(seed: u64, h: usize, w: usize) -> LatentTensor {
        let mut rng = seed::rng(seed);
        LatentTensor::new(Array3::from_shape_fn((4, h, w), |_| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    fn depth(seed: u64) -> ControlSignal {
        let mut rng = seed::rng(seed);
        ControlSignal::new(
            ControlKind::Depth,
            Array3::from_shape_fn((1, 32, 32), |_| rng.random::<f64>()),
            ControlSettings {
                weight: 0.5,
                cutoff_fraction: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_adapter() {
        let x = random_latent(1, 4, 4);
        let c = depth(2);
        let controls = [WeightedControl {
            signal: &c,
            weight: 0.5,
        }];
        let p = PromptEmbedding::new(vec![vec![0.3; 16]], Polarity::Positive).unwrap();
        let a = ToyDenoiser::new(42).predict(&x, 2.0, &controls, &p).unwrap();
        let b = ToyDenoiser::new(42).predict(&x, 2.0, &controls, &p).unwrap();
        let other = ToyDenoiser::new(43).predict(&x, 2.0, &controls, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let x = LatentTensor::zeros(4, 4);
        let p = PromptEmbedding::new(vec![vec![0.0; 16]], Polarity::Positive).unwrap();
        let out = ToyDenoiser::new(3).predict(&x, 1.0, &[], &p).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let empty = PromptEmbedding::new(vec![], Polarity::Negative).unwrap();
        let out = ToyDenoiser::new(3).predict(&x, 1.0, &[], &empty).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_superposition() {
        let d = ToyDenoiser::new(8);
        let c = depth(5);
        let controls = [WeightedControl {
            signal: &c,
            weight: 0.5,
        }];
        let p = PromptEmbedding::new(vec![vec![0.7; 16], vec![-0.1; 16]], Polarity::Positive)
            .unwrap();
        for trial in 0..10 {
            let x1 = random_latent(100 + trial, 4, 4);
            let x2 = random_latent(200 + trial, 4, 4);
            let sum = LatentTensor::new(x1.data() + x2.data()).unwrap();
            let zero = LatentTensor::zeros(4, 4);
            let lhs = d.predict(&sum, 1.7, &controls, &p).unwrap();
            let rhs = d.predict(&x1, 1.7, &controls, &p).unwrap()
                + d.predict(&x2, 1.7, &controls, &p).unwrap()
                - d.predict(&zero, 1.7, &controls, &p).unwrap();
            let err = (&lhs - &rhs).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
            assert!(err < 1e-10, "superposition error {err}");
        }
    }

    #[test]
    fn identity_control_reproduces_latent() {
        let z = random_latent(6, 3, 5);
        let id = ControlSignal::new(
            ControlKind::IdentityLatent,
            z.data().clone(),
            ControlKind::IdentityLatent.default_settings(),
        )
        .unwrap();
        let p = PromptEmbedding::new(vec![vec![1.0; 16]], Polarity::Positive).unwrap();
        let d = ToyDenoiser::new(1)
            .denoised(3, 5, &[WeightedControl { signal: &id, weight: 1.0 }], &p)
            .unwrap();
        assert_eq!(&d, z.data());
    }

    #[test]
    fn mismatched_control_resolution_is_rejected() {
        let c = ControlSignal::new(
            ControlKind::Depth,
            Array3::zeros((1, 30, 30)),
            ControlKind::Depth.default_settings(),
        )
        .unwrap();
        let x = LatentTensor::zeros(4, 4);
        let p = PromptEmbedding::new(vec![], Polarity::Positive).unwrap();
        assert!(matches!(
            ToyDenoiser::new(0).predict(&x, 1.0, &[WeightedControl { signal: &c, weight: 0.5 }], &p),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn constant_image_round_trip() {
        let ae = ToyAutoencoder::new();
        let img = Image::filled(16, 24, [90.0, 90.0, 90.0]);
        let z = ae.encode(&img).unwrap();
        for k in 0..4 {
            let first = z.data()[[k, 0, 0]];
            assert!(z.data().slice(s![k, .., ..]).iter().all(|v| *v == first));
        }
        let back = ae.decode(&z).unwrap();
        assert!(back.data().iter().all(|v| (v - 90.0).abs() < 1e-12));
    }

    #[test]
    fn latent_is_one_eighth_resolution() {
        let ae = ToyAutoencoder::new();
        let z = ae.encode(&Image::filled(768, 768, [0.0; 3])).unwrap();
        assert_eq!(z.shape(), &[4, 96, 96]);
        assert!(matches!(
            ae.encode(&Image::filled(250, 250, [0.0; 3])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn round_trip_is_block_mean() {
        let mut rng = seed::rng(77);
        let img = Image::from_array(Array3::from_shape_fn((3, 16, 24), |_| {
            rng.random_range(0.0..255.0)
        }))
        .unwrap();
        let ae = ToyAutoencoder::new();
        let back = ae.decode(&ae.encode(&img).unwrap()).unwrap();
        let expected = ToyAutoencoder::block_mean(&img).unwrap();
        let err = (back.data() - expected.data())
            .mapv(f64::abs)
            .fold(0.0_f64, |a, &b| a.max(b));
        assert!(err < 1e-9, "round trip error {err}");
    }
}
