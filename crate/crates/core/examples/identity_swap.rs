//! Builds a pool, saves and reloads it, and swaps a detected face for the
//! nearest identity at least the minimum distance away.

use ldm_anon::attributes::{detect_faces, ToyFaceDetector, IDENTITY_DIM};
use ldm_anon::fixtures;
use ldm_anon::identity_pool::{assemble_conditioning, find_swap, IdentityPool, DEFAULT_MIN_SWAP_DISTANCE};

fn main() -> ldm_anon::Result<()> {
    let pool = IdentityPool::synthetic(500, IDENTITY_DIM, 42)?;
    let dir = std::env::temp_dir().join("ldm-anon-identity-swap");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("pool.bin");
    pool.save(&path)?;
    let pool = IdentityPool::load(&path)?;
    println!("pool: {} identities of dimension {}", pool.len(), pool.dim());

    let faces = detect_faces(&fixtures::two_faces(64), &ToyFaceDetector::new(0)).faces;
    for (i, face) in faces.iter().enumerate() {
        let swap = find_swap(&format!("face{i}"), &face.identity_embedding, &pool, DEFAULT_MIN_SWAP_DISTANCE)?;
        let swapped = pool.embedding(&swap.chosen_id).expect("chosen from pool").to_vec();
        let tokens = assemble_conditioning(&face.identity_embedding, &swapped);
        println!(
            "{} -> {} at distance {:.3}; {} prompt tokens",
            swap.query_id,
            swap.chosen_id,
            swap.distance,
            tokens.len()
        );
    }
    match find_swap("far", &faces[0].identity_embedding, &pool, 2.5) {
        Err(e) => println!("threshold 2.5: {e}"),
        Ok(s) => println!("threshold 2.5: unexpectedly found {}", s.chosen_id),
    }
    Ok(())
}
