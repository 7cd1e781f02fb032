//! 3D cross-correlation via im2col + GEMM.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Resolved extents of one conv3d call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub c_in: usize,
    pub c_out: usize,
    /// Input extents (T, H, W).
    pub input: [usize; 3],
    /// Kernel extents (kT, kH, kW).
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Output extents (T', H', W').
    pub output: [usize; 3],
}

const AXES: [&str; 3] = ["time", "height", "width"];

impl Conv3dGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::Dimension {
                axis: "input rank",
                detail: format!("expected [C, T, H, W], got {input_shape:?}"),
            });
        }
        if kernel_shape.len() != 5 {
            return Err(Error::Dimension {
                axis: "kernel rank",
                detail: format!("expected [C_out, C_in, kT, kH, kW], got {kernel_shape:?}"),
            });
        }
        if kernel_shape[1] != input_shape[0] {
            return Err(Error::Dimension {
                axis: "channels",
                detail: format!(
                    "kernel expects {} input channels, input has {}",
                    kernel_shape[1], input_shape[0]
                ),
            });
        }
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(Error::Dimension {
                    axis: AXES[a],
                    detail: "stride must be at least 1".into(),
                });
            }
            let padded = input_shape[a + 1] + 2 * padding[a];
            let k = kernel_shape[a + 2];
            if k == 0 || k > padded {
                return Err(Error::Dimension {
                    axis: AXES[a],
                    detail: format!("kernel extent {k} exceeds padded input extent {padded}"),
                });
            }
            output[a] = (padded - k) / stride[a] + 1;
        }
        Ok(Self {
            c_in: input_shape[0],
            c_out: kernel_shape[0],
            input: [input_shape[1], input_shape[2], input_shape[3]],
            kernel: [kernel_shape[2], kernel_shape[3], kernel_shape[4]],
            stride,
            padding,
            output,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.c_out, self.output[0], self.output[1], self.output[2]]
    }

    /// Rows of the column matrix: C_in · kT · kH · kW.
    fn patch_len(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    /// For one kernel tap along one axis, the range of output indices whose
    /// source coordinate lands inside the unpadded input.
    fn valid_range(&self, axis: usize, tap: usize) -> (usize, usize) {
        let (n_in, n_out) = (self.input[axis] as isize, self.output[axis]);
        let (s, p) = (self.stride[axis] as isize, self.padding[axis] as isize);
        let off = tap as isize - p;
        // need 0 <= o*s + off < n_in
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = if n_in - off <= 0 {
            0
        } else {
            ((n_in - off + s - 1) / s).min(n_out as isize)
        };
        (lo.max(0) as usize, hi.max(lo) as usize)
    }

    fn im2col<S: Scalar>(&self, input: &[S]) -> Vec<S> {
        let [t_in, h_in, w_in] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, ho, wo] = self.output;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let positions = self.positions();
        let mut cols = vec![S::zero(); self.patch_len() * positions];
        let mut row = 0;
        for c in 0..self.c_in {
            let chan = &input[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                let (ot0, ot1) = self.valid_range(0, dt);
                for dh in 0..kh {
                    let (oh0, oh1) = self.valid_range(1, dh);
                    for dw in 0..kw {
                        let (ow0, ow1) = self.valid_range(2, dw);
                        let dst = &mut cols[row * positions..(row + 1) * positions];
                        for ot in ot0..ot1 {
                            let it = ot * st + dt - pt;
                            for oh in oh0..oh1 {
                                let ih = oh * sh + dh - ph;
                                let src = &chan[(it * h_in + ih) * w_in..];
                                let base = (ot * ho + oh) * wo;
                                for ow in ow0..ow1 {
                                    dst[base + ow] = src[ow * sw + dw - pw];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<S: Scalar>(&self, cols: &[S], grad_input: &mut [S]) {
        let [t_in, h_in, w_in] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [_, ho, wo] = self.output;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let positions = self.positions();
        let mut row = 0;
        for c in 0..self.c_in {
            let chan = &mut grad_input[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                let (ot0, ot1) = self.valid_range(0, dt);
                for dh in 0..kh {
                    let (oh0, oh1) = self.valid_range(1, dh);
                    for dw in 0..kw {
                        let (ow0, ow1) = self.valid_range(2, dw);
                        let src = &cols[row * positions..(row + 1) * positions];
                        for ot in ot0..ot1 {
                            let it = ot * st + dt - pt;
                            for oh in oh0..oh1 {
                                let ih = oh * sh + dh - ph;
                                let base = (ot * ho + oh) * wo;
                                let dst = &mut chan[(it * h_in + ih) * w_in..];
                                for ow in ow0..ow1 {
                                    dst[ow * sw + dw - pw] += src[base + ow];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    pub(crate) fn forward<S: Scalar>(&self, input: &[S], kernel: &[S]) -> Vec<S> {
        let cols = self.im2col(input);
        let (m, k, n) = (self.c_out, self.patch_len(), self.positions());
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, kernel, false, &cols, false, &mut out, false);
        out
    }

    /// Returns (d input, d kernel) for an upstream gradient laid out like the output.
    pub(crate) fn backward<S: Scalar>(
        &self,
        input: &[S],
        kernel: &[S],
        grad_out: &[S],
    ) -> (Vec<S>, Vec<S>) {
        let cols = self.im2col(input);
        let (m, k, n) = (self.c_out, self.patch_len(), self.positions());
        let mut grad_kernel = vec![S::zero(); m * k];
        S::gemm(m, n, k, grad_out, false, &cols, true, &mut grad_kernel, false);
        let mut grad_cols = cols;
        S::gemm(k, m, n, kernel, true, grad_out, false, &mut grad_cols, false);
        let mut grad_input = vec![S::zero(); input.len()];
        self.col2im_add(&grad_cols, &mut grad_input);
        (grad_input, grad_kernel)
    }
}

/// Cross-correlation of `input` [C_in, T, H, W] with `kernel`
/// [C_out, C_in, kT, kH, kW]; zero padding, no bias.
pub fn conv3d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<S>> {
    let geom = Conv3dGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let out = geom.forward(input.data(), kernel.data());
    Ok(Tensor::from_parts(geom.output_shape().to_vec(), out))
}
