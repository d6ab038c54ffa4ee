//! RGB image container used throughout the pipeline.
//!
//! Pixels are stored as `f64` in channel-major order (`3 x H x W`) on the
//! nominal `[0, 255]` scale. Generated images may leave that range; values
//! are clamped only when written to disk.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::{s, Array2, Array3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::contract(format!(
                "image must have 3 channels, got {}",
                data.shape()[0]
            )));
        }
        if data.shape()[1] == 0 || data.shape()[2] == 0 {
            return Err(Error::contract("image must be non-empty"));
        }
        Ok(Self { data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Array3::zeros((3, height, width));
        for (c, v) in rgb.iter().enumerate() {
            data.slice_mut(s![c, .., ..]).fill(*v);
        }
        Self { data }
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Rec. 601 luma.
    pub fn grayscale(&self) -> Array2<f64> {
        let r = self.data.slice(s![0, .., ..]);
        let g = self.data.slice(s![1, .., ..]);
        let b = self.data.slice(s![2, .., ..]);
        let mut out = Array2::zeros((self.height(), self.width()));
        ndarray::Zip::from(&mut out)
            .and(&r)
            .and(&g)
            .and(&b)
            .for_each(|o, &r, &g, &b| *o = 0.299 * r + 0.587 * g + 0.114 * b);
        out
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f64::from(px[c]);
            }
        }
        Self { data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                self.data[[c, y as usize, x as usize]]
                    .clamp(0.0, 255.0)
                    .round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn load_from_memory(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Writes a lossless PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Bilinear resize. Returns a clone when the size is unchanged; otherwise
    /// values are clamped to `[0, 255]` first.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width() && height == self.height() {
            return self.clone();
        }
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(self.width() as u32, self.height() as u32, |x, y| {
                let px = |c: usize| (self.data[[c, y as usize, x as usize]] / 255.0) as f32;
                Rgb([px(0), px(1), px(2)])
            });
        let dst = image::imageops::resize(
            &src,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        let mut data = Array3::zeros((3, height, width));
        for (x, y, px) in dst.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = f64::from(px[c]) * 255.0;
            }
        }
        Self { data }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width() || y0 + height > self.height() || width == 0 || height == 0 {
            return Err(Error::contract(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width(),
                self.height()
            )));
        }
        Ok(Self {
            data: self
                .data
                .slice(s![.., y0..y0 + height, x0..x0 + width])
                .to_owned(),
        })
    }

    /// SHA-256 over the dimensions and the `f64` pixel bit patterns.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.width() as u64).to_le_bytes());
        hasher.update((self.height() as u64).to_le_bytes());
        for v in self.data.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Placement of a source image inside the square working canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub original_width: usize,
    pub original_height: usize,
    pub scaled_width: usize,
    pub scaled_height: usize,
    pub offset_x: usize,
    pub offset_y: usize,
    pub side: usize,
}

/// Scales the longer side to `side` and zero-pads the shorter one to a
/// centered square. Square inputs of exactly `side` pass through untouched.
pub fn letterbox(img: &Image, side: usize) -> (Image, Letterbox) {
    let (w, h) = (img.width(), img.height());
    let scale = side as f64 / w.max(h) as f64;
    let sw = ((w as f64 * scale).round() as usize).clamp(1, side);
    let sh = ((h as f64 * scale).round() as usize).clamp(1, side);
    let ox = (side - sw) / 2;
    let oy = (side - sh) / 2;
    let placement = Letterbox {
        original_width: w,
        original_height: h,
        scaled_width: sw,
        scaled_height: sh,
        offset_x: ox,
        offset_y: oy,
        side,
    };
    if sw == side && sh == side && w == side && h == side {
        return (img.clone(), placement);
    }
    let scaled = img.resize(sw, sh);
    let mut canvas = Array3::zeros((3, side, side));
    canvas
        .slice_mut(s![.., oy..oy + sh, ox..ox + sw])
        .assign(scaled.data());
    (Image { data: canvas }, placement)
}

/// Inverse of [`letterbox`]: crops the padded region and resizes back to the
/// original dimensions.
pub fn unletterbox(img: &Image, placement: &Letterbox) -> Result<Image> {
    let cropped = img.crop(
        placement.offset_x,
        placement.offset_y,
        placement.scaled_width,
        placement.scaled_height,
    )?;
    Ok(cropped.resize(placement.original_width, placement.original_height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letterbox_square_is_passthrough() {
        let img = Image::filled(32, 32, [10.0, 20.0, 30.0]);
        let (boxed, placement) = letterbox(&img, 32);
        assert_eq!(boxed, img);
        assert_eq!(unletterbox(&boxed, &placement).unwrap(), img);
    }

    #[test]
    fn letterbox_restores_original_dimensions() {
        let img = Image::filled(40, 20, [100.0, 100.0, 100.0]);
        let (boxed, placement) = letterbox(&img, 32);
        assert_eq!((boxed.width(), boxed.height()), (32, 32));
        assert_eq!((placement.scaled_width, placement.scaled_height), (32, 16));
        assert_eq!(placement.offset_y, 8);
        let back = unletterbox(&boxed, &placement).unwrap();
        assert_eq!((back.width(), back.height()), (40, 20));
        assert!(back.data().iter().all(|v| (v - 100.0).abs() < 1e-3));
    }

    #[test]
    fn png_round_trip() {
        let mut img = Image::filled(9, 7, [0.0, 128.0, 255.0]);
        img.data_mut()[[0, 3, 4]] = 17.0;
        let bytes = img.encode_png().unwrap();
        assert_eq!(Image::load_from_memory(&bytes).unwrap(), img);
    }

    #[test]
    fn content_hash_changes_with_pixels() {
        let a = Image::filled(8, 8, [1.0, 2.0, 3.0]);
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.data_mut()[[2, 0, 0]] = 4.0;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
