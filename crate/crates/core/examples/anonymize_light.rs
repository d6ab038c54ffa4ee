//! The light variant: per-face attribute map and swapped identities in the
//! image prompt, no caption.

use ldm_anon::fixtures;
use ldm_anon::pipeline::{anonymize_light, Adapters, PipelineConfig, Variant};

fn main() -> ldm_anon::Result<()> {
    let mut config = PipelineConfig::defaults(Variant::Light);
    config.resolution = 128;
    let adapters = Adapters::toy(0);
    for (name, image) in [("two faces", fixtures::two_faces(128)), ("no faces", fixtures::blank(128))] {
        let result = anonymize_light(&image, &config, &adapters, 5)?;
        let r = &result.record;
        println!("{name}: attribute map {:?}", r.attribute_map_shape);
        for swap in &r.swaps {
            println!("  {} -> {} (distance {:.3})", swap.query_id, swap.chosen_id, swap.distance);
        }
        for w in &r.warnings {
            println!("  warning: {w}");
        }
        println!("  sampled {} of {} steps", result.trace.steps.len(), result.trace.total_steps);
    }
    Ok(())
}
