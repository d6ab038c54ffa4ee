//! FID between two Gaussian feature sets and Visual DNA distances between
//! image pairs.

use ldm_anon::evaluation::{dataset_dna_report, dna_distance, fid, ToyActivationProvider};
use ldm_anon::fixtures;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> ldm_anon::Result<()> {
    let mut rng = ldm_anon::seed::rng(1);
    let mut gaussian = |n: usize, d: usize, shift: f64| {
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal) + shift)
    };
    let a = gaussian(5000, 4, 0.0);
    let b = gaussian(5000, 4, 0.0);
    let c = gaussian(5000, 4, 0.5);
    println!("FID same distribution: {:.4}", fid(&a, &b)?);
    println!("FID mean shifted by 0.5 in 4 dims (population 1.0): {:.4}", fid(&a, &c)?);

    let provider = ToyActivationProvider::new(0);
    let distances = (0..6)
        .map(|i| {
            let real = fixtures::scene(i, 64, 1);
            let other = fixtures::scene(i + 100, 64, 1);
            dna_distance(&provider, &real, &other)
        })
        .collect::<ldm_anon::Result<Vec<_>>>()?;
    let (mean, std) = dataset_dna_report(&distances)?;
    println!("Visual DNA over unrelated pairs: {mean:.3} ± {std:.3}");
    let same = dna_distance(&provider, &fixtures::scene(0, 64, 1), &fixtures::scene(0, 64, 1))?;
    println!("Visual DNA of an image with itself: {same:.3}");
    Ok(())
}
