//! Face-level and image-level re-identification of anonymized scenes
//! against the originals.

use ldm_anon::attributes::ToyFaceDetector;
use ldm_anon::evaluation::{
    face_level_protocol, image_level_protocol, EvaluationReport, NamedImage, ToyImageEmbedder,
};
use ldm_anon::fixtures;
use ldm_anon::pipeline::{anonymize, image_seed, Adapters, PipelineConfig, Variant};

fn main() -> ldm_anon::Result<()> {
    let real: Vec<NamedImage> = (0..8)
        .map(|i| NamedImage::new(format!("scene{i}"), fixtures::scene(i, 64, 1)))
        .collect();
    let mut config = PipelineConfig::defaults(Variant::Base);
    config.resolution = 64;
    let adapters = Adapters::toy(0);
    let detector = ToyFaceDetector::new(0);
    let embedder = ToyImageEmbedder::new(0);

    for a_s in [0.0, 1.25] {
        config.a_s = a_s;
        let anon = real
            .iter()
            .map(|r| {
                let seed = image_seed(config.seed, &r.image.content_hash());
                anonymize(&r.image, &config, &adapters, seed).map(|a| NamedImage::new(r.id.clone(), a.image))
            })
            .collect::<ldm_anon::Result<Vec<_>>>()?;
        let report = EvaluationReport {
            face_level: Some(face_level_protocol(&real, &anon, &detector, detector.encoder())?),
            image_level: Some(image_level_protocol(&real, &anon, &embedder)?),
            ..Default::default()
        };
        println!("a_s = {a_s}\n{}", report.to_table());
    }
    Ok(())
}
