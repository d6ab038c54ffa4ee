//! Synthetic test scenes for the toy adapters.
//!
//! Faces are drawn as textured rectangles in the marker colour range that
//! [`ToyFaceDetector`](crate::attributes::ToyFaceDetector) looks for; the
//! background never falls in that range.

use ndarray::s;
use rand::Rng;

use crate::attributes::BBox;
use crate::image::Image;
use crate::seed;

/// Background gradient with a few non-face blocks.
pub fn background(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = seed::tagged_rng(seed, "fixture-background");
    let mut img = Image::filled(width, height, [0.0; 3]);
    let tint: [f64; 3] = [rng.random_range(20.0..120.0), rng.random_range(80.0..200.0), rng.random_range(60.0..220.0)];
    {
        let data = img.data_mut();
        for y in 0..height {
            for x in 0..width {
                let t = (x + y) as f64 / (width + height) as f64;
                for c in 0..3 {
                    data[[c, y, x]] = (tint[c] + 40.0 * t).min(255.0);
                }
            }
        }
        for _ in 0..3 {
            let bw = rng.random_range(width / 8..=width / 3).max(1);
            let bh = rng.random_range(height / 8..=height / 3).max(1);
            let x0 = rng.random_range(0..width - bw + 1);
            let y0 = rng.random_range(0..height - bh + 1);
            let color = [
                rng.random_range(0.0..255.0),
                rng.random_range(90.0..255.0),
                rng.random_range(0.0..255.0),
            ];
            for (c, value) in color.into_iter().enumerate() {
                data.slice_mut(s![c, y0..y0 + bh, x0..x0 + bw]).fill(value);
            }
        }
    }
    img
}

/// Paints a textured face patch; the texture depends on `identity`.
pub fn paint_face(img: &mut Image, bbox: &BBox, identity: u64) {
    let mut rng = seed::tagged_rng(identity, "fixture-face");
    let base = [
        rng.random_range(215.0..245.0),
        rng.random_range(5.0..30.0),
        rng.random_range(5.0..30.0),
    ];
    let freq = rng.random_range(1..5) as usize;
    let data = img.data_mut();
    let (x0, y0, x1, y1) = (bbox.x0 as usize, bbox.y0 as usize, bbox.x1 as usize, bbox.y1 as usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let wave = (((x - x0) / freq + (y - y0) / (freq + 1)) % 3) as f64;
            data[[0, y, x]] = base[0] + 3.0 * wave;
            data[[1, y, x]] = base[1] + 8.0 * wave;
            data[[2, y, x]] = base[2] + 5.0 * (2.0 - wave);
        }
    }
}

/// Two faces of different sizes on a background.
pub fn two_faces(size: usize) -> Image {
    let mut img = background(2, size, size);
    let (big, small) = two_face_boxes(size);
    paint_face(&mut img, &big, 11);
    paint_face(&mut img, &small, 12);
    img
}

/// Boxes used by [`two_faces`], largest first.
pub fn two_face_boxes(size: usize) -> (BBox, BBox) {
    let q = size as f64 / 8.0;
    (
        BBox::new(q, q, 4.0 * q, 4.0 * q),
        BBox::new(5.0 * q, 5.0 * q, 7.0 * q, 7.0 * q),
    )
}

/// Background only.
pub fn blank(size: usize) -> Image {
    background(0, size, size)
}

/// A scene with `faces` non-overlapping faces whose textures derive from `seed`.
pub fn scene(seed: u64, size: usize, faces: usize) -> Image {
    let mut img = background(seed, size, size);
    let mut rng = seed::tagged_rng(seed, "fixture-scene");
    let slots = 3;
    let cell = size / slots;
    let mut placed = 0;
    let mut order: Vec<usize> = (0..slots * slots).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    for slot in order {
        if placed == faces || cell < 6 {
            break;
        }
        let (gx, gy) = (slot % slots, slot / slots);
        let side = rng.random_range(cell / 2..cell - 1).max(4);
        let x0 = gx * cell + rng.random_range(0..cell - side);
        let y0 = gy * cell + rng.random_range(0..cell - side);
        let bbox = BBox::new(x0 as f64, y0 as f64, (x0 + side) as f64, (y0 + side) as f64);
        paint_face(&mut img, &bbox, seed.wrapping_mul(31).wrapping_add(placed as u64));
        placed += 1;
    }
    img
}
