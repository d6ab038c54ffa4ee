//! Detects faces in a scene and rasterizes their attributes and keypoints
//! into the 41-channel map used by the light variant.

use ldm_anon::attributes::{
    detect_faces, encode_attribute_map, ToyFaceDetector, KEYPOINT_CHANNEL,
};
use ldm_anon::fixtures;

fn main() -> ldm_anon::Result<()> {
    let image = fixtures::two_faces(128);
    let faces = detect_faces(&image, &ToyFaceDetector::new(0)).faces;
    for (i, f) in faces.iter().enumerate() {
        println!(
            "face {i}: box ({:.0}, {:.0})-({:.0}, {:.0}), first attributes {:.2?}",
            f.bbox.x0,
            f.bbox.y0,
            f.bbox.x1,
            f.bbox.y1,
            &f.attributes[..3]
        );
    }
    let map = encode_attribute_map(&faces, (128, 128), (16, 16))?;
    println!("map shape {:?}", map.shape());
    println!("channel 0 (rows of the 16x16 grid):");
    for row in map.data().index_axis(ndarray::Axis(0), 0).rows() {
        let line: String = row.iter().map(|v| if *v > 0.0 { '#' } else { '.' }).collect();
        println!("  {line}");
    }
    let keypoints = map
        .data()
        .index_axis(ndarray::Axis(0), KEYPOINT_CHANNEL)
        .iter()
        .filter(|v| **v > 0.0)
        .count();
    println!("keypoint cells set: {keypoints}");
    Ok(())
}
