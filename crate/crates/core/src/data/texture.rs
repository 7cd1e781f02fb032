//! Periodic band-limited textures, evaluable at any real coordinate.

use rand::Rng;

#[derive(Clone, Debug)]
struct Wave {
    kx: f32,
    ky: f32,
    phase: f32,
    amplitude: f32,
}

/// Sum of random sinusoids that tiles exactly with the given periods, so a
/// translated copy can be rendered without interpolation error.
#[derive(Clone, Debug)]
pub struct Texture {
    period_x: f32,
    period_y: f32,
    waves: Vec<Wave>,
    norm: f32,
}

impl Texture {
    /// `max_cycles` bounds the integer wave numbers along each axis.
    pub fn random(
        rng: &mut impl Rng,
        period_x: f32,
        period_y: f32,
        waves: usize,
        max_cycles: i32,
    ) -> Self {
        let waves: Vec<Wave> = (0..waves.max(1))
            .map(|_| {
                let (cx, cy) = loop {
                    let cx = rng.gen_range(0..=max_cycles);
                    let cy = rng.gen_range(-max_cycles..=max_cycles);
                    if cx != 0 || cy != 0 {
                        break (cx, cy);
                    }
                };
                let k = ((cx * cx + cy * cy) as f32).sqrt();
                Wave {
                    kx: std::f32::consts::TAU * cx as f32 / period_x,
                    ky: std::f32::consts::TAU * cy as f32 / period_y,
                    phase: rng.gen_range(0.0..std::f32::consts::TAU),
                    amplitude: 1.0 / k.sqrt(),
                }
            })
            .collect();
        let norm = waves.iter().map(|w| w.amplitude).sum::<f32>();
        Self {
            period_x,
            period_y,
            waves,
            norm,
        }
    }

    pub fn period(&self) -> (f32, f32) {
        (self.period_x, self.period_y)
    }

    /// Value in [0, 1]; contrast is stretched so typical values span most
    /// of the range.
    pub fn value(&self, x: f32, y: f32) -> f32 {
        let s: f32 = self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
            .sum();
        (0.5 + 1.2 * s / self.norm).clamp(0.0, 1.0)
    }
}
