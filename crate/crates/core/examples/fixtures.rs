//! Writes synthetic face scenes to a directory for trying the CLI.
//!
//! cargo run --example fixtures -- <dir> [count] [size]

use std::path::PathBuf;

use ldm_anon::fixtures;

fn main() -> ldm_anon::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let count: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let size: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(128);
    std::fs::create_dir_all(&dir)?;
    for i in 0..count {
        let path = dir.join(format!("scene{i:03}.png"));
        fixtures::scene(i as u64, size, 1 + i % 3).save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}
