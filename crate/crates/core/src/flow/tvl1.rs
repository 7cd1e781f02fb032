//! Coarse-to-fine TV-L1 optical flow solved with the primal-dual scheme of
//! Zach, Pock and Bischof.

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::FlowField;
use crate::error::{Error, Result};

const GRAD_IS_ZERO: f32 = 1e-10;
const PRESMOOTHING_SIGMA: f32 = 0.8;
/// Intensities are rescaled to this range internally; the conventional
/// lambda is tuned for 8-bit magnitudes.
const INTENSITY_RANGE: f32 = 255.0;
/// The pyramid stops once the image diagonal would drop below this.
const MIN_PYRAMID_DIAGONAL: f32 = 16.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvL1Params {
    pub lambda: f32,
    pub theta: f32,
    pub tau: f32,
    pub pyramid_levels: usize,
    pub scale_factor: f32,
    pub warps_per_level: usize,
    pub iterations_per_warp: usize,
    pub stop_epsilon: f32,
}

impl Default for TvL1Params {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.125,
            pyramid_levels: 5,
            scale_factor: 0.5,
            warps_per_level: 5,
            iterations_per_warp: 30,
            stop_epsilon: 0.01,
        }
    }
}

impl TvL1Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 0.125) {
            return Err(Error::Config(format!("tau {} violates 0 < tau <= 0.125", self.tau)));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::Config(format!(
                "scale factor {} outside (0, 1)",
                self.scale_factor
            )));
        }
        if self.pyramid_levels == 0 || self.warps_per_level == 0 || self.iterations_per_warp == 0 {
            return Err(Error::Config("pyramid, warp and iteration counts must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.theta > 0.0 && self.stop_epsilon >= 0.0) {
            return Err(Error::Config("lambda and theta must be positive".into()));
        }
        Ok(())
    }

    /// Applies a `key=value` override as accepted on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("cannot parse `{value}` for `{key}`"));
        match key {
            "lambda" => self.lambda = value.parse().map_err(|_| bad())?,
            "theta" => self.theta = value.parse().map_err(|_| bad())?,
            "tau" => self.tau = value.parse().map_err(|_| bad())?,
            "pyramid_levels" => self.pyramid_levels = value.parse().map_err(|_| bad())?,
            "scale_factor" => self.scale_factor = value.parse().map_err(|_| bad())?,
            "warps_per_level" => self.warps_per_level = value.parse().map_err(|_| bad())?,
            "iterations_per_warp" => {
                self.iterations_per_warp = value.parse().map_err(|_| bad())?
            }
            "stop_epsilon" => self.stop_epsilon = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown TV-L1 parameter `{key}`"))),
        }
        Ok(())
    }

    fn effective_levels(&self, width: usize, height: usize) -> usize {
        let diag = ((width * width + height * height) as f32).sqrt();
        let max_levels = 1.0 + (diag / MIN_PYRAMID_DIAGONAL).ln() / (1.0 / self.scale_factor).ln();
        let max_levels = max_levels.floor().max(1.0) as usize;
        self.pyramid_levels.min(max_levels)
    }
}

/// Energy after each warp at the finest pyramid level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowLog {
    pub finest_energies: Vec<f64>,
    pub levels_used: usize,
}

pub fn estimate_flow(a: &GrayImage, b: &GrayImage, params: &TvL1Params) -> Result<FlowField> {
    estimate_flow_logged(a, b, params).map(|(flow, _)| flow)
}

/// TV-L1 flow from `a` to `b`, i.e. `a(x) ~ b(x + flow(x))`.
pub fn estimate_flow_logged(
    a: &GrayImage,
    b: &GrayImage,
    params: &TvL1Params,
) -> Result<(FlowField, FlowLog)> {
    params.validate()?;
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Input(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.data().iter().chain(b.data()).any(|v| !v.is_finite()) {
        return Err(Error::Input("frames contain non-finite pixels".into()));
    }

    let levels = params.effective_levels(a.width(), a.height());
    let mut pyr0 = vec![prepare(a)];
    let mut pyr1 = vec![prepare(b)];
    let sigma = 0.6 * (1.0 / (params.scale_factor * params.scale_factor) - 1.0).sqrt();
    for _ in 1..levels {
        let prev = pyr0.last().unwrap();
        let w = ((prev.width() as f32 * params.scale_factor) + 0.5) as usize;
        let h = ((prev.height() as f32 * params.scale_factor) + 0.5) as usize;
        let (w, h) = (w.max(1), h.max(1));
        let next0 = prev.gaussian_blur(sigma).resize(w, h);
        let next1 = pyr1.last().unwrap().gaussian_blur(sigma).resize(w, h);
        pyr0.push(next0);
        pyr1.push(next1);
    }

    let coarsest = pyr0.last().unwrap();
    let mut flow = FlowField::zeros(coarsest.width(), coarsest.height());
    let mut log = FlowLog {
        finest_energies: Vec::new(),
        levels_used: levels,
    };
    for level in (0..levels).rev() {
        let energies = if level == 0 {
            Some(&mut log.finest_energies)
        } else {
            None
        };
        flow = solve_level(&pyr0[level], &pyr1[level], flow, params, energies);
        if level > 0 {
            let finer = &pyr0[level - 1];
            flow = flow.resize(finer.width(), finer.height());
        }
    }
    Ok((flow, log))
}

fn solve_level(
    i0: &GrayImage,
    i1: &GrayImage,
    init: FlowField,
    params: &TvL1Params,
    mut energies: Option<&mut Vec<f64>>,
) -> FlowField {
    let (w, h) = (i0.width(), i0.height());
    let n = w * h;
    let (i1x, i1y) = i1.gradient();
    let FlowField { mut u, mut v, .. } = init;
    let mut p = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    let (mut i1w, mut i1wx, mut i1wy) = (vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]);
    let mut grad_sq = vec![0.0f32; n];
    let mut rho_c = vec![0.0f32; n];
    let (mut div_u, mut div_v) = (vec![0.0f32; n], vec![0.0f32; n]);
    let (mut ux, mut uy, mut vx, mut vy) = (
        vec![0.0f32; n],
        vec![0.0f32; n],
        vec![0.0f32; n],
        vec![0.0f32; n],
    );

    let l_t = params.lambda * params.theta;
    let taut = params.tau / params.theta;
    let stop = params.stop_epsilon * params.stop_epsilon;

    let mut best = energy_scaled(i0, i1, &u, &v, params.lambda);
    for _ in 0..params.warps_per_level {
        let (prev_u, prev_v) = (u.clone(), v.clone());
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f32 + u[i], y as f32 + v[i]);
                i1w[i] = i1.sample(sx, sy);
                i1wx[i] = i1x.sample(sx, sy);
                i1wy[i] = i1y.sample(sx, sy);
                // Warps leaving the frame carry no data term.
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f32 || sy > (h - 1) as f32 {
                    i1w[i] = i0.data()[i];
                    i1wx[i] = 0.0;
                    i1wy[i] = 0.0;
                }
                grad_sq[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u[i] - i1wy[i] * v[i] - i0.data()[i];
            }
        }

        let mut iteration = 0;
        let mut error = f32::INFINITY;
        while error > stop && iteration < params.iterations_per_warp {
            iteration += 1;
            divergence(&p[0], &p[1], w, h, &mut div_u);
            divergence(&p[2], &p[3], w, h, &mut div_v);
            let mut change = 0.0f64;
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u[i] + i1wy[i] * v[i];
                let g = grad_sq[i];
                let (du, dv) = if rho < -l_t * g {
                    (l_t * i1wx[i], l_t * i1wy[i])
                } else if rho > l_t * g {
                    (-l_t * i1wx[i], -l_t * i1wy[i])
                } else if g > GRAD_IS_ZERO {
                    let f = -rho / g;
                    (f * i1wx[i], f * i1wy[i])
                } else {
                    (0.0, 0.0)
                };
                let new_u = u[i] + du + params.theta * div_u[i];
                let new_v = v[i] + dv + params.theta * div_v[i];
                change += ((new_u - u[i]).powi(2) + (new_v - v[i]).powi(2)) as f64;
                u[i] = new_u;
                v[i] = new_v;
            }
            error = (change / n as f64) as f32;

            forward_gradient(&u, w, h, &mut ux, &mut uy);
            forward_gradient(&v, w, h, &mut vx, &mut vy);
            for i in 0..n {
                let gu = 1.0 + taut * (ux[i] * ux[i] + uy[i] * uy[i]).sqrt();
                let gv = 1.0 + taut * (vx[i] * vx[i] + vy[i] * vy[i]).sqrt();
                p[0][i] = (p[0][i] + taut * ux[i]) / gu;
                p[1][i] = (p[1][i] + taut * uy[i]) / gu;
                p[2][i] = (p[2][i] + taut * vx[i]) / gv;
                p[3][i] = (p[3][i] + taut * vy[i]) / gv;
            }
        }

        // A warp that raises the energy is undone and the level stops there.
        let energy = energy_scaled(i0, i1, &u, &v, params.lambda);
        let rejected = energy > best;
        if rejected {
            u = prev_u;
            v = prev_v;
        } else {
            best = energy;
        }
        if let Some(log) = energies.as_deref_mut() {
            log.push(best);
        }
        if rejected {
            break;
        }
    }
    FlowField {
        width: w,
        height: h,
        u,
        v,
    }
}

/// Forward differences with a zero last row/column.
fn forward_gradient(f: &[f32], w: usize, h: usize, fx: &mut [f32], fy: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            fx[i] = if x + 1 < w { f[i + 1] - f[i] } else { 0.0 };
            fy[i] = if y + 1 < h { f[i + w] - f[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`forward_gradient`].
fn divergence(p1: &[f32], p2: &[f32], w: usize, h: usize, out: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let a = if x + 1 < w { p1[i] } else { 0.0 } - if x > 0 { p1[i - 1] } else { 0.0 };
            let b = if y + 1 < h { p2[i] } else { 0.0 } - if y > 0 { p2[i - w] } else { 0.0 };
            out[i] = a + b;
        }
    }
}

fn energy_scaled(i0: &GrayImage, i1: &GrayImage, u: &[f32], v: &[f32], lambda: f32) -> f64 {
    let (w, h) = (i0.width(), i0.height());
    let n = w * h;
    let (mut ux, mut uy, mut vx, mut vy) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    forward_gradient(u, w, h, &mut ux, &mut uy);
    forward_gradient(v, w, h, &mut vx, &mut vy);
    let mut e = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let tv = (ux[i] * ux[i] + uy[i] * uy[i]).sqrt() + (vx[i] * vx[i] + vy[i] * vy[i]).sqrt();
            let residual = i1.sample(x as f32 + u[i], y as f32 + v[i]) - i0.data()[i];
            e += tv as f64 + (lambda * residual.abs()) as f64;
        }
    }
    e
}

fn prepare(img: &GrayImage) -> GrayImage {
    let scaled = img.data().iter().map(|v| v * INTENSITY_RANGE).collect();
    GrayImage::from_parts(img.width(), img.height(), scaled).gaussian_blur(PRESMOOTHING_SIGMA)
}

/// TV-L1 energy of `flow` for the frame pair, measured on the frames as the
/// solver sees them at the finest level (rescaled and pre-smoothed).
pub fn tvl1_energy(a: &GrayImage, b: &GrayImage, flow: &FlowField, lambda: f32) -> f64 {
    energy_scaled(&prepare(a), &prepare(b), flow.u(), flow.v(), lambda)
}
