//! Single-channel float images and the resampling the flow solver needs.

use crate::error::{Error, Result};

/// Row-major single-channel image, values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// ITU-R BT.601 luma.
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("image contains non-finite pixels".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_parts(width, height, data)
    }

    /// Converts interleaved 8-bit RGB to luma in [0, 1].
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::Input("RGB buffer size mismatch".into()));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| luma(p[0] as f32, p[1] as f32, p[2] as f32) / 255.0)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a real-valued position, replicating the border.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Separable Gaussian blur with border replication.
    pub fn gaussian_blur(&self, sigma: f32) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);

        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, i) in kernel.iter().zip(-radius..=radius) {
                    let xx = (x + i).clamp(0, w - 1);
                    acc += k * self.data[(y * w + xx) as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, i) in kernel.iter().zip(-radius..=radius) {
                    let yy = (y + i).clamp(0, h - 1);
                    acc += k * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Self::from_parts(self.width, self.height, out)
    }

    /// Bilinear resize, aligning pixel centres.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Self::from_fn(width, height, |x, y| {
            self.sample((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
        })
    }

    /// Box-filtered downsample when shrinking by an integer factor, bilinear
    /// otherwise.
    pub fn resize_area(&self, width: usize, height: usize) -> Self {
        if self.width % width == 0 && self.height % height == 0 {
            let (fx, fy) = (self.width / width, self.height / height);
            let norm = 1.0 / (fx * fy) as f32;
            return Self::from_fn(width, height, |x, y| {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += self.get(x * fx + dx, y * fy + dy);
                    }
                }
                acc * norm
            });
        }
        self.resize(width, height)
    }

    /// Central-difference gradient (one-sided at the border).
    pub fn gradient(&self) -> (Self, Self) {
        let (w, h) = (self.width, self.height);
        let gx = Self::from_fn(w, h, |x, y| {
            if w == 1 {
                0.0
            } else if x == 0 {
                self.get(1, y) - self.get(0, y)
            } else if x == w - 1 {
                self.get(w - 1, y) - self.get(w - 2, y)
            } else {
                0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
            }
        });
        let gy = Self::from_fn(w, h, |x, y| {
            if h == 1 {
                0.0
            } else if y == 0 {
                self.get(x, 1) - self.get(x, 0)
            } else if y == h - 1 {
                self.get(x, h - 1) - self.get(x, h - 2)
            } else {
                0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
            }
        });
        (gx, gy)
    }
}
