//! Per-clip PNG frame directories with zero-padded indices.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::flow::GrayImage;

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.png"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:04}.png"))
}

/// Number of consecutive `frame_NNNN.png` files starting at index 0.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| frame_path(dir, i).is_file()).count()
}

/// RGB frame as three planes of floats in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f32>; 3],
}

impl RgbFrame {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut planes = [Vec::new(), Vec::new(), Vec::new()];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    planes[c].push(px[c]);
                }
            }
        }
        Self {
            width,
            height,
            planes,
        }
    }

    pub fn luma(&self) -> GrayImage {
        let [r, g, b] = &self.planes;
        let data = (0..r.len()).map(|i| crate::flow::luma(r[i], g[i], b[i])).collect();
        GrayImage::new(self.width, self.height, data).expect("frame pixels are finite")
    }

    /// Area/bilinear resize of each plane.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let plane = |c: usize| {
            GrayImage::new(self.width, self.height, self.planes[c].clone())
                .expect("frame pixels are finite")
                .resize_area(width, height)
                .data()
                .to_vec()
        };
        Self {
            width,
            height,
            planes: [plane(0), plane(1), plane(2)],
        }
    }

    fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([q(self.planes[0][i]), q(self.planes[1][i]), q(self.planes[2][i])])
        })
    }
}

pub fn write_frame(path: &Path, frame: &RgbFrame) -> Result<()> {
    frame
        .to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub fn read_frame(path: &Path) -> Result<RgbFrame> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbFrame::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
    }))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let mask = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok((img.width() as usize, img.height() as usize, mask))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}
