//! Procedurally rendered shape corpus used as the default source domain.
//!
//! Each class is a filled or outlined geometric shape with random position,
//! size, rotation and a warm foreground colour over a dark tinted background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Image, LabeledDataset};
use crate::error::{Error, Result};

pub const SHAPE_CLASSES: [&str; 5] = ["circle", "cross", "ring", "square", "triangle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub resolution: usize,
    pub channels: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Foreground hue range in degrees.
    pub hue_min: f32,
    pub hue_max: f32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            resolution: 32,
            channels: 3,
            train_per_class: 400,
            test_per_class: 60,
            hue_min: 0.0,
            hue_max: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ShapeParams {
    cx: f32,
    cy: f32,
    radius: f32,
    angle: f32,
    fg: [f32; 3],
    bg: [f32; 3],
    gradient: [f32; 2],
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl ShapeParams {
    fn sample<R: Rng>(rng: &mut R, res: f32, cfg: &CorpusConfig) -> Self {
        let hue = rng.random_range(cfg.hue_min..=cfg.hue_max);
        let fg = hsv_to_rgb(hue, rng.random_range(0.6..1.0), rng.random_range(0.8..1.0));
        let bg_hue = rng.random_range(180.0..260.0);
        let bg = hsv_to_rgb(bg_hue, rng.random_range(0.3..0.7), rng.random_range(0.08..0.25));
        ShapeParams {
            cx: res / 2.0 + rng.random_range(-0.12..0.12) * res,
            cy: res / 2.0 + rng.random_range(-0.12..0.12) * res,
            radius: rng.random_range(0.22..0.32) * res,
            angle: rng.random_range(0.0..std::f32::consts::TAU),
            fg,
            bg,
            gradient: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
        }
    }
}

fn inside(class: usize, u: f32, v: f32, r: f32) -> bool {
    match SHAPE_CLASSES[class] {
        "circle" => u * u + v * v <= r * r,
        "ring" => {
            let d2 = u * u + v * v;
            d2 <= r * r && d2 >= (0.6 * r) * (0.6 * r)
        }
        "square" => u.abs().max(v.abs()) <= 0.8 * r,
        "cross" => {
            let t = 0.3 * r;
            (u.abs() <= r && v.abs() <= t) || (v.abs() <= r && u.abs() <= t)
        }
        "triangle" => {
            // equilateral, circumradius r, edges at distance r/2 from the centre
            (0..3).all(|k| {
                let a = std::f32::consts::FRAC_PI_2 + k as f32 * std::f32::consts::TAU / 3.0;
                u * a.cos() + v * a.sin() >= -0.5 * r
            })
        }
        _ => unreachable!("class index within SHAPE_CLASSES"),
    }
}

fn render(class: usize, p: &ShapeParams, res: usize, channels: usize) -> Image {
    const SS: usize = 3;
    let (sin, cos) = p.angle.sin_cos();
    let mut px = Vec::with_capacity(res * res * channels);
    for y in 0..res {
        for x in 0..res {
            let mut hits = 0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let fx = x as f32 + (sx as f32 + 0.5) / SS as f32 - p.cx;
                    let fy = y as f32 + (sy as f32 + 0.5) / SS as f32 - p.cy;
                    let u = cos * fx + sin * fy;
                    let v = -sin * fx + cos * fy;
                    hits += inside(class, u, v, p.radius) as usize;
                }
            }
            let a = hits as f32 / (SS * SS) as f32;
            let shade = p.gradient[0] * (x as f32 / res as f32 - 0.5) + p.gradient[1] * (y as f32 / res as f32 - 0.5);
            let rgb: [f32; 3] = std::array::from_fn(|c| {
                let bg = (p.bg[c] + shade).clamp(0.0, 1.0);
                (bg * (1.0 - a) + p.fg[c] * a) * 2.0 - 1.0
            });
            if channels == 1 {
                px.push(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
            } else {
                px.extend_from_slice(&rgb);
            }
        }
    }
    Image::from_clipped(res, res, channels, px).expect("rendered shape")
}

/// Renders `per_class` images of every class, interleaved by class, fully
/// determined by `seed`.
pub fn generate(cfg: &CorpusConfig, per_class: usize, seed: u64, domain_tag: &str) -> Result<LabeledDataset> {
    if cfg.resolution == 0 || cfg.resolution % 32 != 0 {
        return Err(Error::Invalid(format!(
            "resolution {} must be a positive multiple of 32",
            cfg.resolution
        )));
    }
    if cfg.channels != 1 && cfg.channels != 3 {
        return Err(Error::Invalid(format!("channels must be 1 or 3, got {}", cfg.channels)));
    }
    let n_classes = SHAPE_CLASSES.len();
    let items: Vec<(Image, usize)> = (0..per_class * n_classes)
        .into_par_iter()
        .map(|i| {
            let class = i % n_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let p = ShapeParams::sample(&mut rng, cfg.resolution as f32, cfg);
            (render(class, &p, cfg.resolution, cfg.channels), class)
        })
        .collect();
    LabeledDataset::new(items, SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(), domain_tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_balanced_deterministic_corpus() {
        let cfg = CorpusConfig::default();
        let a = generate(&cfg, 4, 7, "source").unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.class_counts(), vec![4; 5]);
        assert_eq!(a, generate(&cfg, 4, 7, "source").unwrap());
        assert_ne!(a, generate(&cfg, 4, 8, "source").unwrap());
    }

    #[test]
    fn classes_differ_in_coverage() {
        let cfg = CorpusConfig::default();
        let ds = generate(&cfg, 1, 3, "s").unwrap();
        // foreground is much brighter than the background
        for (img, _) in &ds.items {
            let bright = img.pixels().chunks(3).filter(|p| p[0] > 0.0).count();
            assert!(bright > 30 && bright < 32 * 32 / 2, "{bright}");
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        let cfg = CorpusConfig {
            resolution: 40,
            ..CorpusConfig::default()
        };
        assert!(generate(&cfg, 1, 0, "s").is_err());
    }
}
