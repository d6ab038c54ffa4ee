use std::sync::Mutex;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, LatentTensor, SigmaSchedule, WeightedControl};
use crate::error::{Error, Result};
use crate::guidance::{
    combine_noise_predictions, effective_control_weight, ControlKind, ControlSignal,
    GuidanceWeights, PromptEmbedding,
};
use crate::seed;

/// Advances the latent from `sigma` to `sigma_next` given the guided noise
/// prediction.
pub trait Stepper: Send + Sync {
    fn name(&self) -> &'static str;

    fn step(
        &self,
        x: &Array3<f64>,
        eps: &Array3<f64>,
        sigma: f64,
        sigma_next: f64,
        rng: &mut ChaCha8Rng,
    ) -> Array3<f64>;
}

/// First-order Euler step on the probability-flow ODE. With an epsilon
/// prediction the derivative `(x - denoised) / sigma` is `eps` itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euler;

impl Stepper for Euler {
    fn name(&self) -> &'static str {
        "euler"
    }

    fn step(
        &self,
        x: &Array3<f64>,
        eps: &Array3<f64>,
        sigma: f64,
        sigma_next: f64,
        _rng: &mut ChaCha8Rng,
    ) -> Array3<f64> {
        x + &(eps * (sigma_next - sigma))
    }
}

/// Euler step to `sigma_down` followed by fresh noise of scale `sigma_up`.
#[derive(Debug, Clone, Copy)]
pub struct EulerAncestral {
    pub eta: f64,
}

impl Default for EulerAncestral {
    fn default() -> Self {
        Self { eta: 1.0 }
    }
}

impl Stepper for EulerAncestral {
    fn name(&self) -> &'static str {
        "euler_ancestral"
    }

    fn step(
        &self,
        x: &Array3<f64>,
        eps: &Array3<f64>,
        sigma: f64,
        sigma_next: f64,
        rng: &mut ChaCha8Rng,
    ) -> Array3<f64> {
        let variance = sigma_next * sigma_next * (sigma * sigma - sigma_next * sigma_next)
            / (sigma * sigma);
        let sigma_up = (self.eta * variance.max(0.0).sqrt()).min(sigma_next);
        let sigma_down = (sigma_next * sigma_next - sigma_up * sigma_up).max(0.0).sqrt();
        let mut out = x + &(eps * (sigma_down - sigma));
        if sigma_next > 0.0 {
            out.mapv_inplace(|v| v + sigma_up * rng.sample::<f64, _>(StandardNormal));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepperKind {
    #[default]
    Euler,
    EulerAncestral,
}

impl StepperKind {
    pub fn build(self) -> Box<dyn Stepper> {
        match self {
            StepperKind::Euler => Box::new(Euler),
            StepperKind::EulerAncestral => Box::new(EulerAncestral::default()),
        }
    }
}

/// Noises an encoded image for img2img: `start_step = n - floor(strength * n)`
/// and `x = latent + sigmas[start_step] * g` with `g ~ N(0, I)` drawn from `seed`.
pub fn img2img_init(
    latent: &LatentTensor,
    strength: f64,
    schedule: &SigmaSchedule,
    seed: u64,
) -> Result<(LatentTensor, usize)> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::domain(format!(
            "img2img strength must lie in (0, 1], got {strength}"
        )));
    }
    let n = schedule.steps();
    let start_step = n - (strength * n as f64).floor() as usize;
    let sigma = schedule.sigma(start_step);
    let mut rng = seed::rng(seed);
    let mut x = latent.data().clone();
    x.mapv_inplace(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    Ok((LatentTensor::new(x)?, start_step))
}

/// Which guided prediction a denoiser query fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSlot {
    Identity,
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: GuidanceSlot,
    pub controls: Vec<(ControlKind, f64)>,
    pub prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sigma: f64,
    pub weights: (f64, f64, f64),
    pub slots: Vec<SlotRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingTrace {
    pub start_step: usize,
    pub total_steps: usize,
    pub steps: Vec<StepRecord>,
}

impl SamplingTrace {
    pub fn queries(&self, slot: GuidanceSlot) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.slots)
            .filter(|r| r.slot == slot)
            .count()
    }
}

pub struct SampleRequest<'a> {
    pub x_start: &'a LatentTensor,
    pub start_step: usize,
    pub schedule: &'a SigmaSchedule,
    /// Spatial controls plus at most one `IdentityLatent` control, which is
    /// routed to the identity slot.
    pub controls: &'a [ControlSignal],
    pub positive: &'a PromptEmbedding,
    pub negative: &'a PromptEmbedding,
    pub weights: GuidanceWeights,
    /// Seed for stochastic steppers.
    pub seed: u64,
}

/// Runs steps `start_step..n` of the guided sampler.
///
/// Each step queries the denoiser once per guidance slot with a non-zero
/// coefficient; controls whose effective weight has dropped to zero are not
/// passed at all.
pub fn sample(
    denoiser: &dyn Denoiser,
    stepper: &dyn Stepper,
    req: &SampleRequest<'_>,
) -> Result<(LatentTensor, SamplingTrace)> {
    let n = req.schedule.steps();
    if req.start_step > n {
        return Err(Error::contract(format!(
            "start step {} beyond schedule of {n} steps",
            req.start_step
        )));
    }

    let mut identity = None;
    let mut spatial = Vec::new();
    for control in req.controls {
        if control.kind() == ControlKind::IdentityLatent {
            if identity.replace(control).is_some() {
                return Err(Error::contract("more than one identity control supplied"));
            }
        } else {
            spatial.push(control);
        }
    }
    let (w0, w1, w2) = req.weights.as_triple();
    if w0 != 0.0 && identity.is_none() {
        return Err(Error::contract(
            "identity weight is non-zero but no identity control was supplied",
        ));
    }

    let mut trace = SamplingTrace {
        start_step: req.start_step,
        total_steps: n,
        steps: Vec::with_capacity(n - req.start_step),
    };
    let mut rng = seed::rng(req.seed);
    let mut x = req.x_start.clone();
    let shape = x.shape().to_vec();

    for step in req.start_step..n {
        let sigma = req.schedule.sigma(step);
        let sigma_next = req.schedule.sigma(step + 1);

        let mut active = Vec::with_capacity(spatial.len());
        for control in &spatial {
            let weight = effective_control_weight(control, step, n)?;
            if weight > 0.0 {
                active.push(WeightedControl {
                    signal: control,
                    weight,
                });
            }
        }

        let mut record = StepRecord {
            step,
            sigma,
            weights: (w0, w1, w2),
            slots: Vec::with_capacity(3),
        };
        let zeros = || Array3::<f64>::zeros((shape[0], shape[1], shape[2]));

        let eps_identity = match identity {
            Some(control) if w0 != 0.0 => {
                let weight = effective_control_weight(control, step, n)?;
                let controls: Vec<_> = (weight > 0.0)
                    .then_some(WeightedControl {
                        signal: control,
                        weight,
                    })
                    .into_iter()
                    .collect();
                query(denoiser, &x, sigma, &controls, req.positive, GuidanceSlot::Identity, &mut record)?
            }
            _ => zeros(),
        };
        let eps_negative = if w1 != 0.0 {
            query(denoiser, &x, sigma, &active, req.negative, GuidanceSlot::Negative, &mut record)?
        } else {
            zeros()
        };
        let eps_positive = if w2 != 0.0 {
            query(denoiser, &x, sigma, &active, req.positive, GuidanceSlot::Positive, &mut record)?
        } else {
            zeros()
        };

        let eps = combine_noise_predictions(
            &req.weights,
            eps_identity.view(),
            eps_negative.view(),
            eps_positive.view(),
        )?;
        let next = stepper.step(x.data(), &eps, sigma, sigma_next, &mut rng);
        x = LatentTensor::new(next).map_err(|e| {
            Error::contract(format!("sampler diverged at step {step}: {e}"))
        })?;
        trace.steps.push(record);
    }
    Ok((x, trace))
}

fn query(
    denoiser: &dyn Denoiser,
    x: &LatentTensor,
    sigma: f64,
    controls: &[WeightedControl<'_>],
    prompt: &PromptEmbedding,
    slot: GuidanceSlot,
    record: &mut StepRecord,
) -> Result<Array3<f64>> {
    let eps = denoiser.predict(x, sigma, controls, prompt)?;
    if eps.shape() != x.shape() {
        return Err(Error::contract(format!(
            "denoiser returned shape {:?} for latent {:?}",
            eps.shape(),
            x.shape()
        )));
    }
    record.slots.push(SlotRecord {
        slot,
        controls: controls
            .iter()
            .map(|c| (c.signal.kind(), c.weight))
            .collect(),
        prompt_tokens: prompt.len(),
    });
    Ok(eps)
}

/// One logged denoiser invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserCall {
    pub sigma: f64,
    pub controls: Vec<(ControlKind, f64)>,
    pub prompt_tokens: usize,
    pub polarity: crate::guidance::Polarity,
}

/// Wraps a denoiser and records every call it receives.
pub struct TracingDenoiser<D> {
    inner: D,
    calls: Mutex<Vec<DenoiserCall>>,
}

impl<D: Denoiser> TracingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<DenoiserCall> {
        self.calls.lock().expect("trace lock poisoned").clone()
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for TracingDenoiser<D> {
    fn predict(
        &self,
        x: &LatentTensor,
        sigma: f64,
        controls: &[WeightedControl<'_>],
        prompt: &PromptEmbedding,
    ) -> Result<Array3<f64>> {
        self.calls
            .lock()
            .expect("trace lock poisoned")
            .push(DenoiserCall {
                sigma,
                controls: controls
                    .iter()
                    .map(|c| (c.signal.kind(), c.weight))
                    .collect(),
                prompt_tokens: prompt.len(),
                polarity: prompt.polarity(),
            });
        self.inner.predict(x, sigma, controls, prompt)
    }

    fn shareable(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::super::{karras_sigma_schedule, ToyDenoiser};
    use super::*;
    use crate::guidance::{ControlSettings, Polarity};

    fn latent(seed: u64, h: usize, w: usize) -> LatentTensor {
        let mut rng = seed::rng(seed);
        LatentTensor::new(Array3::from_shape_fn((4, h, w), |_| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    fn prompt(polarity: Polarity, value: f64) -> PromptEmbedding {
        PromptEmbedding::new(vec![vec![value; 8]; 2], polarity).unwrap()
    }

    #[test]
    fn img2img_start_steps() {
        let z = LatentTensor::zeros(2, 2);
        let s16 = karras_sigma_schedule(16, 0.0292, 14.6146, 7.0).unwrap();
        let s30 = karras_sigma_schedule(30, 0.0292, 14.6146, 7.0).unwrap();
        assert_eq!(img2img_init(&z, 1.0, &s16, 0).unwrap().1, 0);
        assert_eq!(img2img_init(&z, 0.9, &s16, 0).unwrap().1, 2);
        assert_eq!(img2img_init(&z, 0.6, &s30, 0).unwrap().1, 12);
        assert!(img2img_init(&z, 0.0, &s16, 0).is_err());
        assert!(img2img_init(&z, 1.1, &s16, 0).is_err());
    }

    #[test]
    fn img2img_is_seed_deterministic() {
        let z = latent(3, 4, 4);
        let s = karras_sigma_schedule(16, 0.0292, 14.6146, 7.0).unwrap();
        let a = img2img_init(&z, 0.9, &s, 11).unwrap().0;
        let b = img2img_init(&z, 0.9, &s, 11).unwrap().0;
        let c = img2img_init(&z, 0.9, &s, 12).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_step_returns_start() {
        let denoiser = ToyDenoiser::new(1);
        let s = karras_sigma_schedule(4, 0.1, 10.0, 7.0).unwrap();
        let x = latent(1, 2, 2);
        let pos = prompt(Polarity::Positive, 1.0);
        let neg = prompt(Polarity::Negative, -1.0);
        let req = SampleRequest {
            x_start: &x,
            start_step: 4,
            schedule: &s,
            controls: &[],
            positive: &pos,
            negative: &neg,
            weights: GuidanceWeights::new(1.0, 7.5).unwrap(),
            seed: 0,
        };
        let (out, trace) = sample(&denoiser, &Euler, &req).unwrap();
        assert_eq!(out, x);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn identity_slot_skipped_when_weight_zero() {
        let z = latent(2, 2, 2);
        let identity = ControlSignal::new(
            ControlKind::IdentityLatent,
            z.data().clone(),
            ControlKind::IdentityLatent.default_settings(),
        )
        .unwrap();
        let denoiser = TracingDenoiser::new(ToyDenoiser::new(5));
        let s = karras_sigma_schedule(6, 0.1, 10.0, 7.0).unwrap();
        let pos = prompt(Polarity::Positive, 1.0);
        let neg = prompt(Polarity::Negative, -1.0);
        let controls = [identity];
        let req = SampleRequest {
            x_start: &z,
            start_step: 0,
            schedule: &s,
            controls: &controls,
            positive: &pos,
            negative: &neg,
            weights: GuidanceWeights::new(1.0, 7.5).unwrap(),
            seed: 0,
        };
        let (_, trace) = sample(&denoiser, &Euler, &req).unwrap();
        assert_eq!(trace.queries(GuidanceSlot::Identity), 0);
        assert!(denoiser
            .calls()
            .iter()
            .all(|c| c.controls.iter().all(|(k, _)| *k != ControlKind::IdentityLatent)));
        assert_eq!(denoiser.calls().len(), 12);
    }

    #[test]
    fn missing_identity_control_is_rejected() {
        let z = latent(2, 2, 2);
        let s = karras_sigma_schedule(3, 0.1, 10.0, 7.0).unwrap();
        let pos = prompt(Polarity::Positive, 1.0);
        let neg = prompt(Polarity::Negative, -1.0);
        let req = SampleRequest {
            x_start: &z,
            start_step: 0,
            schedule: &s,
            controls: &[],
            positive: &pos,
            negative: &neg,
            weights: GuidanceWeights::new(0.5, 7.5).unwrap(),
            seed: 0,
        };
        assert!(matches!(
            sample(&ToyDenoiser::new(0), &Euler, &req),
            Err(Error::ContractViolation(_))
        ));
    }

    struct BadShape;

    impl Denoiser for BadShape {
        fn predict(
            &self,
            _x: &LatentTensor,
            _sigma: f64,
            _controls: &[WeightedControl<'_>],
            _prompt: &PromptEmbedding,
        ) -> Result<Array3<f64>> {
            Ok(Array3::zeros((4, 1, 1)))
        }
    }

    #[test]
    fn shape_violation_aborts() {
        let z = latent(2, 2, 2);
        let s = karras_sigma_schedule(3, 0.1, 10.0, 7.0).unwrap();
        let pos = prompt(Polarity::Positive, 1.0);
        let neg = prompt(Polarity::Negative, -1.0);
        let req = SampleRequest {
            x_start: &z,
            start_step: 0,
            schedule: &s,
            controls: &[],
            positive: &pos,
            negative: &neg,
            weights: GuidanceWeights::new(1.0, 7.5).unwrap(),
            seed: 0,
        };
        assert!(matches!(
            sample(&BadShape, &Euler, &req),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn ancestral_is_seeded() {
        let z = latent(9, 2, 2);
        let s = karras_sigma_schedule(5, 0.1, 10.0, 7.0).unwrap();
        let pos = prompt(Polarity::Positive, 1.0);
        let neg = prompt(Polarity::Negative, -1.0);
        let depth = ControlSignal::new(
            ControlKind::Depth,
            Array3::from_elem((1, 16, 16), 0.3),
            ControlSettings {
                weight: 0.5,
                cutoff_fraction: 1.0,
            },
        )
        .unwrap();
        let controls = [depth];
        let run = |seed| {
            let req = SampleRequest {
                x_start: &z,
                start_step: 0,
                schedule: &s,
                controls: &controls,
                positive: &pos,
                negative: &neg,
                weights: GuidanceWeights::new(1.0, 3.0).unwrap(),
                seed,
            };
            sample(&ToyDenoiser::new(4), &EulerAncestral::default(), &req)
                .unwrap()
                .0
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
