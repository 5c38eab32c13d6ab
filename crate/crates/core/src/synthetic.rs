//! Procedural "portraits" with a two-parameter style family.
//!
//! Every image shares one face layout. Identity is a seeded jitter of the
//! layout geometry; style is a hue `θ ∈ [0, 1]` and a stripe frequency
//! `s ∈ {1, …, 8}` applied across the whole canvas.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::Raster;
use crate::{Error, Result};

pub const MAX_STRIPES: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub hue: f64,
    pub stripes: u8,
}

impl StyleParams {
    pub fn new(hue: f64, stripes: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&hue) || !(1..=MAX_STRIPES).contains(&stripes) {
            return Err(Error::input(format!("style (hue {hue}, stripes {stripes}) out of range")));
        }
        Ok(StyleParams { hue, stripes })
    }
}

/// Geometry of one face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub eye_spacing: f64,
    pub eye_height: f64,
    pub mouth_width: f64,
}

impl Identity {
    /// Layout for a canvas of side 1; `draw` scales it to pixels.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Identity {
            center: (0.5 + rng.random_range(-0.08..0.08), 0.52 + rng.random_range(-0.06..0.06)),
            radii: (rng.random_range(0.22..0.32), rng.random_range(0.28..0.38)),
            eye_spacing: rng.random_range(0.08..0.14),
            eye_height: rng.random_range(0.06..0.12),
            mouth_width: rng.random_range(0.06..0.14),
        }
    }
}

/// HSV to RGB.
fn hue_rgb(h: f64, saturation: f64, value: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let f = |n: f64| {
        let k = (n + h6) % 6.0;
        value - value * saturation * (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Renders a portrait at `size × size` pixels.
pub fn draw(size: usize, style: StyleParams, id: &Identity) -> Raster {
    let n = size as f64;
    let base = hue_rgb(style.hue, 0.85, 0.9);
    let accent = hue_rgb(style.hue + 0.5, 0.6, 0.95);
    let skin = [0.93, 0.80, 0.68];
    let freq = style.stripes as f64;
    let mut pixels = Array3::<f32>::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
            let phase = (2.0 * std::f64::consts::PI * freq * (u + v) / 2.0).sin();
            let stripe = 0.5 + 0.5 * phase;
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = base[c] * (1.0 - stripe) + accent[c] * stripe;
            }
            let (dx, dy) = ((u - id.center.0) / id.radii.0, (v - id.center.1) / id.radii.1);
            if dx * dx + dy * dy <= 1.0 {
                for c in 0..3 {
                    rgb[c] = 0.65 * skin[c] + 0.35 * rgb[c];
                }
                let eye_y = id.center.1 - id.eye_height;
                let eye_r = 0.045;
                for side in [-1.0, 1.0] {
                    let ex = id.center.0 + side * id.eye_spacing;
                    if (u - ex).powi(2) + (v - eye_y).powi(2) <= eye_r * eye_r {
                        rgb = [0.08, 0.06, 0.08];
                    }
                }
                let mouth_y = id.center.1 + 0.45 * id.radii.1;
                if (u - id.center.0).abs() <= id.mouth_width && (v - mouth_y).abs() <= 0.025 {
                    rgb = [0.55, 0.1, 0.12];
                }
            }
            for c in 0..3 {
                pixels[[c, y, x]] = rgb[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Raster::new(pixels).expect("three channels in the unit range")
}

/// One generated image with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub id: String,
    pub style: StyleParams,
    pub identity: Identity,
    pub image: Raster,
}

/// Deterministic dataset of `count` portraits; sample `i` depends only on
/// `(seed, i)`.
pub fn dataset(count: usize, size: usize, seed: u64) -> Vec<SyntheticSample> {
    (0..count).map(|i| sample(i, size, seed)).collect()
}

pub fn sample(index: usize, size: usize, seed: u64) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let style = StyleParams {
        hue: rng.random_range(0.0..1.0),
        stripes: rng.random_range(1..=MAX_STRIPES),
    };
    let identity = Identity::sample(&mut rng);
    SyntheticSample {
        id: format!("synth-{index:05}"),
        style,
        identity,
        image: draw(size, style, &identity),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let a = sample(7, 16, 3);
        let b = dataset(8, 16, 3).pop().unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!(a.image.pixels(), b.image.pixels());
        assert_ne!(sample(6, 16, 3).image.pixels(), a.image.pixels());
    }

    #[test]
    fn pixels_in_unit_range() {
        for s in dataset(20, 32, 1) {
            assert!(s.image.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((1..=MAX_STRIPES).contains(&s.style.stripes));
        }
    }

    #[test]
    fn style_changes_the_background() {
        let id = Identity::sample(&mut ChaCha8Rng::seed_from_u64(0));
        let a = draw(32, StyleParams::new(0.1, 2).unwrap(), &id);
        let b = draw(32, StyleParams::new(0.6, 2).unwrap(), &id);
        let c = draw(32, StyleParams::new(0.1, 7).unwrap(), &id);
        assert_ne!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), c.pixels());
        assert!(StyleParams::new(1.5, 2).is_err());
        assert!(StyleParams::new(0.5, 0).is_err());
    }

    #[test]
    fn primary_hues() {
        let red = hue_rgb(0.0, 1.0, 1.0);
        assert_eq!(red, [1.0, 0.0, 0.0]);
        let green = hue_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((green[1] - 1.0).abs() < 1e-12 && green[0].abs() < 1e-12);
    }
}
