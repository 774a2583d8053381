//! Analytic textures for synthetic motion data.
//!
//! A texture is a smooth function of continuous coordinates, so shifted
//! copies are exact and the ground-truth displacement is known.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{frame_file_name, TrainingExample};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Clone, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    /// Sum of random oblique sinusoids with periods between 5 and 28 px.
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(6..10);
        let waves = (0..n)
            .map(|_| {
                let period: f64 = rng.random_range(5.0..28.0);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / period;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [
                        rng.random_range(0.02..0.09),
                        rng.random_range(0.02..0.09),
                        rng.random_range(0.02..0.09),
                    ],
                }
            })
            .collect();
        Self {
            base: [
                rng.random_range(0.35..0.65),
                rng.random_range(0.35..0.65),
                rng.random_range(0.35..0.65),
            ],
            waves,
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let mut v = self.base;
        for w in &self.waves {
            let s = (w.kx * x + w.ky * y + w.phase).sin();
            for (c, vc) in v.iter_mut().enumerate() {
                *vc += w.amp[c] * s;
            }
        }
        v.map(|c| c.clamp(0.0, 1.0) as f32)
    }

    /// Frame whose content is the texture moved by `(dx, dy)`:
    /// `frame(x, y) = T(x − dx, y − dy)`.
    pub fn render(&self, h: usize, w: usize, dx: f64, dy: f64) -> Frame {
        Frame::from_fn(h, w, |y, x| self.sample(x as f64 - dx, y as f64 - dy))
    }
}

/// `len` frames of a texture moving at constant `(vx, vy)` px/frame.
pub fn translating_sequence(tex: &Texture, h: usize, w: usize, len: usize, v: (f64, f64)) -> Vec<Frame> {
    (0..len)
        .map(|k| tex.render(h, w, v.0 * k as f64, v.1 * k as f64))
        .collect()
}

/// `n` training septuplets (frames 0, 2, 4, 6 → 3) of textures moving at
/// a speed in `[speed/2, speed)` px/frame along each axis, random sign.
pub fn translating_septuplets(n: usize, size: usize, speed: f64, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let tex = Texture::random(&mut rng);
            let mut axis = || {
                let s: f64 = rng.random_range(speed / 2.0..speed);
                if rng.random() { s } else { -s }
            };
            let v = (axis(), axis());
            let f = translating_sequence(&tex, size, size, 7, v);
            TrainingExample {
                inputs: [f[0].clone(), f[2].clone(), f[4].clone(), f[6].clone()],
                target: f[3].clone(),
                sequence: format!("seq{i:03}"),
                start: 0,
            }
        })
        .collect()
}

/// Writes `sequences` translating-texture clips of `len` frames as
/// `root/seqNNN/frame_%04d.png`. Speeds are drawn up to `max_speed`
/// px/frame per axis.
pub fn write_translating_dataset(
    root: &Path,
    sequences: usize,
    len: usize,
    (h, w): (usize, usize),
    max_speed: f64,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..sequences {
        let tex = Texture::random(&mut rng);
        let v = (
            rng.random_range(-max_speed..=max_speed),
            rng.random_range(-max_speed..=max_speed),
        );
        let dir = root.join(format!("seq{s:03}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, f) in translating_sequence(&tex, h, w, len, v).iter().enumerate() {
            f.save_png(&dir.join(frame_file_name(i)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_render_is_exact_translation() {
        let t = Texture::random(&mut ChaCha8Rng::seed_from_u64(1));
        let a = t.render(8, 8, 0.0, 0.0);
        let b = t.render(8, 8, 2.0, 1.0);
        for y in 1..8 {
            for x in 2..8 {
                assert_eq!(b.get(y, x, 0), a.get(y - 1, x - 2, 0));
            }
        }
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
