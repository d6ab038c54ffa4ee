//! Guidance weights across the anonymization scale, and what they do to
//! three scalar noise predictions.

use ldm_anon::guidance::{combine_noise_predictions, GuidanceWeights, DEFAULT_OMEGA};
use ndarray::arr1;

fn main() -> ldm_anon::Result<()> {
    let identity = arr1(&[1.0]);
    let negative = arr1(&[2.0]);
    let positive = arr1(&[3.0]);
    println!("{:>5} {:>8} {:>8} {:>8} {:>10}", "a_s", "w0", "w1", "w2", "combined");
    for a_s in [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5] {
        let w = GuidanceWeights::new(a_s, DEFAULT_OMEGA)?;
        let eps = combine_noise_predictions(&w, identity.view(), negative.view(), positive.view())?;
        println!(
            "{a_s:>5.2} {:>8.3} {:>8.3} {:>8.3} {:>10.3}",
            w.w0(),
            w.w1(),
            w.w2(),
            eps[0]
        );
    }
    Ok(())
}
