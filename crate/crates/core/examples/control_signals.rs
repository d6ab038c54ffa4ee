//! The five spatial controls extracted from a scene, and when each one is
//! switched off during a 16-step run.

use ldm_anon::annotator::{extract_controls, toy_extractors, ControlTable};
use ldm_anon::fixtures;
use ldm_anon::guidance::effective_control_weight;

fn main() -> ldm_anon::Result<()> {
    let image = fixtures::two_faces(64);
    let controls = extract_controls(&image, &toy_extractors(), &ControlTable::default())?;
    let steps = 16;
    for control in &controls {
        let active: Vec<usize> = (0..steps)
            .filter(|&s| effective_control_weight(control, s, steps).is_ok_and(|w| w > 0.0))
            .collect();
        println!(
            "{:<13} shape {:?} weight {:.1} active for steps 0..{}",
            control.kind().as_str(),
            control.tensor().shape(),
            control.weight(),
            active.last().map_or(0, |s| s + 1)
        );
    }
    Ok(())
}
