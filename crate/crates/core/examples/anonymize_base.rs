//! One image through the base variant at several anonymization scales.
//! Writes PNGs to the directory given as the first argument (default: a
//! temp directory).

use std::path::PathBuf;

use ldm_anon::diffusion::{GuidanceSlot, ToyAutoencoder};
use ldm_anon::fixtures;
use ldm_anon::pipeline::{anonymize_base, Adapters, PipelineConfig, Variant};

fn main() -> ldm_anon::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ldm-anon-base"));
    std::fs::create_dir_all(&out)?;
    let image = fixtures::two_faces(128);
    image.save_png(&out.join("input.png"))?;
    let adapters = Adapters::toy(0);
    let reconstruction = ToyAutoencoder::block_mean(&image)?;

    for a_s in [0.0, 0.5, 1.0, 1.25] {
        let mut config = PipelineConfig::defaults(Variant::Base);
        config.resolution = 128;
        config.a_s = a_s;
        let result = anonymize_base(&image, &config, &adapters, 11)?;
        let diff = (result.image.data() - reconstruction.data()).mapv(f64::abs);
        let w = result.trace.steps[0].weights;
        println!(
            "a_s {a_s:.2}: weights ({:.2}, {:.2}, {:.2}), identity queries {}, mean |out - reconstruction| {:.2}",
            w.0,
            w.1,
            w.2,
            result.trace.queries(GuidanceSlot::Identity),
            diff.mean().unwrap_or(0.0)
        );
        result.image.save_png(&out.join(format!("base_as{a_s:.2}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
