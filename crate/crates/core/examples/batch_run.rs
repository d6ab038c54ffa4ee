//! A batch run over a directory of generated scenes, twice, showing that
//! outputs and manifests are reproducible.

use ldm_anon::fixtures;
use ldm_anon::pipeline::{list_inputs, run_batch, Adapters, PipelineConfig, Variant, MANIFEST_FILE};

fn main() -> ldm_anon::Result<()> {
    let root = std::env::temp_dir().join("ldm-anon-batch");
    let input = root.join("in");
    std::fs::create_dir_all(&input)?;
    for i in 0..4 {
        fixtures::scene(i, 128, 2).save_png(&input.join(format!("scene{i}.png")))?;
    }
    std::fs::write(input.join("broken.png"), b"not an image")?;

    let mut config = PipelineConfig::defaults(Variant::Base);
    config.resolution = 128;
    config.seed = 9;
    let inputs = list_inputs(&input)?;
    let adapters = Adapters::toy(config.seed);

    let first = run_batch(&inputs, &config, &adapters, &root.join("run1"))?;
    let second = run_batch(&inputs, &config, &adapters, &root.join("run2"))?;
    for r in &first.manifest.records {
        println!(
            "{:<12} {:?} seed {:?} output {:?}",
            r.input, r.status, r.seed, r.output
        );
    }
    let a = std::fs::read(root.join("run1").join(MANIFEST_FILE))?;
    let b = std::fs::read(root.join("run2").join(MANIFEST_FILE))?;
    println!("manifests identical: {}", a == b);
    println!("mean seconds per image: {:.3}", second.mean_seconds().unwrap_or(0.0));
    Ok(())
}
