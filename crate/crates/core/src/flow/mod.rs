//! Dense optical flow: multi-scale TV-L1, `.flo` files, and network input
//! conversion.

pub mod flo;
pub mod image;
mod tvl1;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use self::image::{luma, GrayImage};
pub use tvl1::{estimate_flow, estimate_flow_logged, tvl1_energy, FlowLog, TvL1Params};

/// Default clamp (pixels) applied before mapping displacements to [-1, 1].
pub const DEFAULT_FLOW_BOUND: f32 = 20.0;

/// Per-pixel displacement from one frame to the next, in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(Error::Input(format!("empty flow field {width}x{height}")));
        }
        if u.len() != n || v.len() != n {
            return Err(Error::Input(format!(
                "flow components for {width}x{height} need {n} entries, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Input("flow contains non-finite entries".into()));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let n = width * height;
        let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Component-wise resize; displacements are rescaled with the grid.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        let u = GrayImage::from_parts(self.width, self.height, self.u.clone()).resize(width, height);
        let v = GrayImage::from_parts(self.width, self.height, self.v.clone()).resize(width, height);
        let sx = width as f32 / self.width as f32;
        let sy = height as f32 / self.height as f32;
        Self {
            width,
            height,
            u: u.data().iter().map(|a| a * sx).collect(),
            v: v.data().iter().map(|b| b * sy).collect(),
        }
    }

    /// Fraction of pixels inside the central window covering `keep` of
    /// each axis whose endpoint error against `truth` is at most `tol`,
    /// plus the mean endpoint error over that window.
    pub fn endpoint_error_stats(&self, truth: &FlowField, keep: f32, tol: f32) -> (f32, f32) {
        assert_eq!((self.width, self.height), (truth.width, truth.height));
        let (x0, x1) = central_window(self.width, keep);
        let (y0, y1) = central_window(self.height, keep);
        let (mut within, mut total, mut sum) = (0usize, 0usize, 0.0f64);
        for y in y0..y1 {
            for x in x0..x1 {
                let (a, b) = self.at(x, y);
                let (c, d) = truth.at(x, y);
                let epe = ((a - c).powi(2) + (b - d).powi(2)).sqrt();
                within += (epe <= tol) as usize;
                sum += epe as f64;
                total += 1;
            }
        }
        (within as f32 / total as f32, (sum / total as f64) as f32)
    }
}

/// Index range covering the central `keep` fraction of `n` samples.
pub fn central_window(n: usize, keep: f32) -> (usize, usize) {
    let margin = ((n as f32 * (1.0 - keep)) / 2.0).round() as usize;
    (margin.min(n / 2), n - margin.min(n / 2))
}

/// Stacks flows as a [2, N-1, H, W] tensor (u then v), clamping to
/// `[-bound, bound]` and dividing by `bound`.
pub fn flow_to_input(flows: &[FlowField], bound: f32) -> Result<Tensor<f32>> {
    stack_two_channel(
        flows.iter().map(|f| (f.width, f.height, f.u.as_slice(), f.v.as_slice())),
        bound,
    )
}

pub(crate) fn stack_two_channel<'a>(
    fields: impl ExactSizeIterator<Item = (usize, usize, &'a [f32], &'a [f32])>,
    bound: f32,
) -> Result<Tensor<f32>> {
    if !(bound > 0.0) {
        return Err(Error::Config(format!("clamp bound must be positive, got {bound}")));
    }
    let steps = fields.len();
    let mut dims = None;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (i, (w, h, a, b)) in fields.enumerate() {
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::Input(format!(
                    "field {i} is {w}x{h}, expected {}x{}",
                    d.0, d.1
                )))
            }
            _ => {}
        }
        first.extend(a.iter().map(|x| x.clamp(-bound, bound) / bound));
        second.extend(b.iter().map(|x| x.clamp(-bound, bound) / bound));
    }
    let (w, h) = dims.ok_or_else(|| Error::Input("empty field sequence".into()))?;
    first.extend(second);
    Tensor::new(vec![2, steps, h, w], first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_maps_to_zero() {
        let t = flow_to_input(&vec![FlowField::zeros(4, 3); 2], DEFAULT_FLOW_BOUND).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3, 4]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bound_maps_to_one() {
        let f = FlowField::constant(3, 3, 20.0, 45.0);
        let t = flow_to_input(&[f], 20.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let f = FlowField::constant(3, 3, -7.0, 0.0);
        let t = flow_to_input(&[f], 14.0).unwrap();
        assert!(t.data()[..9].iter().all(|&v| v == -0.5));
    }

    #[test]
    fn frames_to_steps() {
        // N frames give N - 1 flow fields and N - 1 time steps.
        let n_frames = 7;
        let flows = vec![FlowField::zeros(5, 5); n_frames - 1];
        let t = flow_to_input(&flows, 20.0).unwrap();
        assert_eq!(t.shape()[1], n_frames - 1);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let flows = vec![FlowField::zeros(5, 5), FlowField::zeros(5, 4)];
        assert!(matches!(flow_to_input(&flows, 20.0), Err(Error::Input(_))));
        assert!(flow_to_input(&[], 20.0).is_err());
    }

    #[test]
    fn window() {
        assert_eq!(central_window(100, 0.8), (10, 90));
        assert_eq!(central_window(10, 1.0), (0, 10));
    }
}
