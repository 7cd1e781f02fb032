//! Motion boundaries: per-component spatial derivatives of a flow field,
//! summed so that constant (camera) motion cancels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::flo::{read_file, write_file, TwoChannelField, MOTION_BOUNDARY_MAGIC};
use crate::flow::{stack_two_channel, FlowField, GrayImage};
use crate::tensor::Tensor;

/// Smallest extent for which central differences exist at some pixel.
const MIN_EXTENT: usize = 3;

pub const DEFAULT_MB_BOUND: f32 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionBoundaryField {
    width: usize,
    height: usize,
    b_u: Vec<f32>,
    b_v: Vec<f32>,
}

impl MotionBoundaryField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn b_u(&self) -> &[f32] {
        &self.b_u
    }

    pub fn b_v(&self) -> &[f32] {
        &self.b_v
    }

    /// Squared magnitude `b_u² + b_v²` per pixel.
    pub fn energy(&self) -> Vec<f32> {
        self.b_u.iter().zip(&self.b_v).map(|(a, b)| a * a + b * b).collect()
    }

    /// Area resize. Values are derivatives, so they are not rescaled.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        let channel = |c: &[f32]| {
            GrayImage::from_parts(self.width, self.height, c.to_vec())
                .resize_area(width, height)
                .data()
                .to_vec()
        };
        Self {
            width,
            height,
            b_u: channel(&self.b_u),
            b_v: channel(&self.b_v),
        }
    }

    fn to_raw(&self) -> TwoChannelField {
        TwoChannelField {
            width: self.width,
            height: self.height,
            first: self.b_u.clone(),
            second: self.b_v.clone(),
        }
    }
}

/// Derivatives of a row-major field along x (columns) and y (rows):
/// central differences inside, one-sided at the border.
pub fn spatial_derivatives(values: &[f32], width: usize, height: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    if width < MIN_EXTENT || height < MIN_EXTENT {
        return Err(Error::Input(format!(
            "derivatives need at least {MIN_EXTENT}x{MIN_EXTENT}, got {width}x{height}"
        )));
    }
    if values.len() != width * height {
        return Err(Error::Input(format!(
            "{width}x{height} field needs {} entries, got {}",
            width * height,
            values.len()
        )));
    }
    let f = |x: usize, y: usize| values[y * width + x];
    let mut dx = Vec::with_capacity(values.len());
    let mut dy = Vec::with_capacity(values.len());
    for y in 0..height {
        for x in 0..width {
            dx.push(if x == 0 {
                f(1, y) - f(0, y)
            } else if x == width - 1 {
                f(x, y) - f(x - 1, y)
            } else {
                (f(x + 1, y) - f(x - 1, y)) / 2.0
            });
            dy.push(if y == 0 {
                f(x, 1) - f(x, 0)
            } else if y == height - 1 {
                f(x, y) - f(x, y - 1)
            } else {
                (f(x, y + 1) - f(x, y - 1)) / 2.0
            });
        }
    }
    Ok((dx, dy))
}

/// `b_u = u_x + u_y`, `b_v = v_x + v_y`.
pub fn motion_boundary(flow: &FlowField) -> Result<MotionBoundaryField> {
    let (w, h) = (flow.width(), flow.height());
    let sum = |component: &[f32]| -> Result<Vec<f32>> {
        let (dx, dy) = spatial_derivatives(component, w, h)?;
        Ok(dx.iter().zip(&dy).map(|(a, b)| a + b).collect())
    };
    Ok(MotionBoundaryField {
        width: w,
        height: h,
        b_u: sum(flow.u())?,
        b_v: sum(flow.v())?,
    })
}

/// One boundary field per flow, i.e. N - 1 fields for an N-frame clip.
pub fn mb_sequence(flows: &[FlowField]) -> Result<Vec<MotionBoundaryField>> {
    if flows.is_empty() {
        return Err(Error::Input("motion boundaries need at least one flow field".into()));
    }
    flows.iter().map(motion_boundary).collect()
}

/// Stacks fields as [2, N-1, H, W] with the same clamp-and-scale as flow.
pub fn mb_to_input(fields: &[MotionBoundaryField], bound: f32) -> Result<Tensor<f32>> {
    stack_two_channel(
        fields.iter().map(|f| (f.width, f.height, f.b_u.as_slice(), f.b_v.as_slice())),
        bound,
    )
}

pub fn write_mb(path: &Path, field: &MotionBoundaryField) -> Result<()> {
    write_file(path, MOTION_BOUNDARY_MAGIC, &field.to_raw())
}

pub fn read_mb(path: &Path) -> Result<MotionBoundaryField> {
    let raw = read_file(path, MOTION_BOUNDARY_MAGIC)?;
    if raw.first.iter().chain(&raw.second).any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite motion boundary entries"));
    }
    Ok(MotionBoundaryField {
        width: raw.width,
        height: raw.height,
        b_u: raw.first,
        b_v: raw.second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior(w: usize, h: usize) -> impl Iterator<Item = usize> {
        (1..h - 1).flat_map(move |y| (1..w - 1).map(move |x| y * w + x))
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let (dx, dy) = spatial_derivatives(&[4.5; 20], 5, 4).unwrap();
        assert!(dx.iter().chain(&dy).all(|&v| v == 0.0));
    }

    #[test]
    fn ramps() {
        let (w, h) = (6, 5);
        let ramp: Vec<f32> = (0..w * h).map(|i| 3.0 * (i % w) as f32).collect();
        let (dx, dy) = spatial_derivatives(&ramp, w, h).unwrap();
        assert!(interior(w, h).all(|i| dx[i] == 3.0 && dy[i] == 0.0));

        let plane: Vec<f32> = (0..w * h).map(|i| 2.0 * (i / w) as f32 + 5.0 * (i % w) as f32).collect();
        let (dx, dy) = spatial_derivatives(&plane, w, h).unwrap();
        assert!(interior(w, h).all(|i| dx[i] == 5.0 && dy[i] == 2.0));
    }

    #[test]
    fn too_small() {
        assert!(matches!(spatial_derivatives(&[0.0; 4], 2, 2), Err(Error::Input(_))));
    }

    #[test]
    fn pan_is_removed() {
        let mb = motion_boundary(&FlowField::constant(7, 6, 2.0, 1.0)).unwrap();
        assert!(interior(7, 6).all(|i| mb.b_u()[i] == 0.0 && mb.b_v()[i] == 0.0));
    }

    #[test]
    fn horizontal_ramp_flow() {
        let flow = FlowField::from_fn(7, 6, |x, _| (x as f32, 0.0));
        let mb = motion_boundary(&flow).unwrap();
        assert!(interior(7, 6).all(|i| mb.b_u()[i] == 1.0 && mb.b_v()[i] == 0.0));
    }

    #[test]
    fn frame_bookkeeping() {
        for n_frames in [2, 11] {
            let flows = vec![FlowField::zeros(4, 4); n_frames - 1];
            let t = mb_to_input(&mb_sequence(&flows).unwrap(), 20.0).unwrap();
            assert_eq!(t.shape()[0] * t.shape()[1], (n_frames - 1) * 2);
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        assert!(mb_sequence(&[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mb");
        let flow = FlowField::from_fn(5, 4, |x, y| ((x * y) as f32, x as f32 - y as f32));
        let mb = motion_boundary(&flow).unwrap();
        write_mb(&path, &mb).unwrap();
        assert_eq!(read_mb(&path).unwrap(), mb);
        assert!(crate::flow::flo::read_flo(&path).is_err());
    }
}
