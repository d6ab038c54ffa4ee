//! Karras noise levels and an img2img run of the toy denoiser with the
//! identity control only, at a few anonymization scales.

use ldm_anon::annotator::identity_control;
use ldm_anon::diffusion::{
    img2img_init, karras_sigma_schedule, sample, Autoencoder, Euler, SampleRequest,
    ToyAutoencoder, ToyDenoiser, DEFAULT_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN,
};
use ldm_anon::fixtures;
use ldm_anon::guidance::{GuidanceWeights, Polarity, PromptEmbedding};

fn main() -> ldm_anon::Result<()> {
    let schedule = karras_sigma_schedule(16, DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, DEFAULT_RHO)?;
    let sigmas: Vec<String> = schedule.sigmas().iter().map(|s| format!("{s:.3}")).collect();
    println!("sigmas: {}", sigmas.join(" "));

    let image = fixtures::two_faces(64);
    let autoencoder = ToyAutoencoder::new();
    let latent = autoencoder.encode(&image)?;
    let (x_start, start_step) = img2img_init(&latent, 0.9, &schedule, 7)?;
    println!("img2img starts at step {start_step} (sigma {:.3})", schedule.sigma(start_step));

    let controls = [identity_control(&latent)];
    let prompt = PromptEmbedding::new(vec![vec![0.5; 8]], Polarity::Positive)?;
    let negative = PromptEmbedding::new(vec![vec![0.0; 8]], Polarity::Negative)?;
    let denoiser = ToyDenoiser::new(1);
    for a_s in [0.0, 0.5, 1.0, 1.25] {
        let request = SampleRequest {
            x_start: &x_start,
            start_step,
            schedule: &schedule,
            controls: &controls,
            positive: &prompt,
            negative: &negative,
            weights: GuidanceWeights::new(a_s, 7.5)?,
            seed: 0,
        };
        let (out, trace) = sample(&denoiser, &Euler, &request)?;
        let drift = (out.data() - latent.data()).mapv(f64::abs).mean().unwrap_or(0.0);
        println!(
            "a_s {a_s:.2}: {} steps, mean |latent change| {drift:.4}",
            trace.steps.len()
        );
    }
    Ok(())
}
