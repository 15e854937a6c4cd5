use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Image, LabeledDataset};
use crate::edge::reflect_index;
use crate::error::{Error, Result};

/// Photometric perturbation standing in for a change of camera.
///
/// Applied in order hue, channel gain, contrast, brightness, blur, noise;
/// the result is clipped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    /// Hue rotation in degrees (HSV space).
    #[serde(default)]
    pub hue_rotation: f32,
    /// Multiplies pixel values in `[-1, 1]` space.
    #[serde(default = "one")]
    pub brightness_scale: f32,
    /// Blend factor against the mean luminance: `c*x + (1-c)*mean`.
    #[serde(default = "one")]
    pub contrast_scale: f32,
    #[serde(default = "ones3")]
    pub channel_gain: [f32; 3],
    #[serde(default)]
    pub noise_sigma: f32,
    #[serde(default)]
    pub blur_sigma: f32,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f32 {
    1.0
}

fn ones3() -> [f32; 3] {
    [1.0; 3]
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig::identity()
    }
}

impl ShiftConfig {
    pub fn identity() -> Self {
        ShiftConfig {
            hue_rotation: 0.0,
            brightness_scale: 1.0,
            contrast_scale: 1.0,
            channel_gain: [1.0; 3],
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [self.brightness_scale, self.contrast_scale];
        let positive = scales.iter().chain(&self.channel_gain).all(|s| *s > 0.0 && s.is_finite());
        if !positive {
            return Err(Error::Invalid(format!("shift scales must be positive: {self:?}")));
        }
        if !(self.noise_sigma >= 0.0 && self.blur_sigma >= 0.0 && self.hue_rotation.is_finite()) {
            return Err(Error::Invalid(format!("shift sigmas must be non-negative: {self:?}")));
        }
        Ok(())
    }

    /// Transforms one image; `index` selects the noise stream.
    pub fn apply(&self, img: &Image, index: u64) -> Image {
        let (h, w, c) = img.shape();
        let mut px = img.pixels().to_vec();
        if c == 3 && self.hue_rotation.rem_euclid(360.0) != 0.0 {
            for rgb in px.chunks_exact_mut(3) {
                rotate_hue(rgb, self.hue_rotation);
            }
        }
        if self.channel_gain != [1.0; 3] {
            for (i, v) in px.iter_mut().enumerate() {
                *v *= self.channel_gain[(i % c).min(2)];
            }
        }
        if self.contrast_scale != 1.0 {
            let mean = mean_luminance(&px, c);
            let k = self.contrast_scale;
            for v in &mut px {
                *v = k * *v + (1.0 - k) * mean;
            }
        }
        if self.brightness_scale != 1.0 {
            for v in &mut px {
                *v *= self.brightness_scale;
            }
        }
        if self.blur_sigma > 0.0 {
            px = gaussian_blur(&px, h, w, c, self.blur_sigma);
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(index);
            let normal = Normal::new(0.0f32, self.noise_sigma).expect("validated sigma");
            for v in &mut px {
                *v += normal.sample(&mut rng);
            }
        }
        Image::from_clipped(h, w, c, px).expect("shape preserved")
    }
}

/// Applies `cfg` to every image; labels, order and count are preserved.
pub fn apply_shift(ds: &LabeledDataset, cfg: &ShiftConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let items = ds
        .items
        .par_iter()
        .enumerate()
        .map(|(i, (img, label))| (cfg.apply(img, i as u64), *label))
        .collect();
    Ok(LabeledDataset {
        items,
        num_classes: ds.num_classes,
        class_names: ds.class_names.clone(),
        domain_tag: format!("{}-shifted", ds.domain_tag),
    })
}

fn mean_luminance(px: &[f32], c: usize) -> f32 {
    let n = px.len() / c;
    let sum: f64 = if c == 3 {
        px.chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .sum()
    } else {
        px.iter().map(|v| *v as f64).sum::<f64>() / c as f64
    };
    (sum / n as f64) as f32
}

/// Rotates the hue of one `[-1, 1]` RGB triple through HSV space.
fn rotate_hue(rgb: &mut [f32], degrees: f32) {
    let [r, g, b] = [0, 1, 2].map(|i| ((rgb[i] + 1.0) * 0.5).clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return;
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let hue = (hue + degrees).rem_euclid(360.0);
    let sat = delta / max;
    let val = max;
    let chroma = val * sat;
    let hp = hue / 60.0;
    let x = chroma * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = val - chroma;
    for (dst, v) in rgb.iter_mut().zip([r1, g1, b1]) {
        *dst = (v + m) * 2.0 - 1.0;
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur on an `(H, W, C)` buffer with reflect padding.
fn gaussian_blur(px: &[f32], h: usize, w: usize, c: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; px.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect_index(x as isize + t as isize - r, w);
                    acc += kv * px[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; px.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect_index(y as isize + t as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Image {
        let px = (0..h * w * 3).map(|i| ((i * 37) % 200) as f32 / 100.0 - 1.0).collect();
        Image::new(h, w, 3, px).unwrap()
    }

    fn one_item(img: Image) -> LabeledDataset {
        let other = Image::constant(img.height(), img.width(), img.channels(), 0.0).unwrap();
        LabeledDataset::new(vec![(img, 0), (other, 1)], vec!["a".into(), "b".into()], "src").unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let ds = one_item(ramp(8, 8));
        let out = apply_shift(&ds, &ShiftConfig::identity()).unwrap();
        assert_eq!(out.items, ds.items);
        assert_ne!(out.domain_tag, ds.domain_tag);
    }

    #[test]
    fn brightness_on_constant() {
        let ds = one_item(Image::constant(4, 4, 3, 0.5).unwrap());
        let cfg = ShiftConfig {
            brightness_scale: 1.3,
            ..ShiftConfig::identity()
        };
        let out = apply_shift(&ds, &cfg).unwrap();
        for v in out.items[0].0.pixels() {
            assert!((v - 0.65).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn seeded_noise_is_bitwise_repeatable() {
        let ds = one_item(ramp(8, 8));
        let cfg = ShiftConfig {
            noise_sigma: 0.2,
            blur_sigma: 0.8,
            hue_rotation: 45.0,
            seed: 9,
            ..ShiftConfig::identity()
        };
        let a = apply_shift(&ds, &cfg).unwrap();
        let b = apply_shift(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let c = apply_shift(&ds, &ShiftConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn hue_full_turn_is_near_identity() {
        let mut rgb = [0.6, -0.2, -0.9];
        rotate_hue(&mut rgb, 360.0);
        for (a, b) in rgb.iter().zip([0.6, -0.2, -0.9]) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut red = [1.0, -1.0, -1.0];
        rotate_hue(&mut red, 120.0);
        assert!((red[0] + 1.0).abs() < 1e-6 && (red[1] - 1.0).abs() < 1e-6 && (red[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ShiftConfig {
            contrast_scale: 0.0,
            ..ShiftConfig::identity()
        };
        assert!(cfg.validate().is_err());
        let cfg = ShiftConfig {
            noise_sigma: -1.0,
            ..ShiftConfig::identity()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn shifted_images_stay_in_range_and_keep_labels(
            hue in -360.0f32..360.0,
            bright in 0.2f32..3.0,
            contrast in 0.2f32..3.0,
            g0 in 0.2f32..3.0, g1 in 0.2f32..3.0, g2 in 0.2f32..3.0,
            noise in 0.0f32..1.0,
            blur in 0.0f32..2.0,
            seed in 0u64..1000,
        ) {
            let ds = one_item(ramp(8, 8));
            let cfg = ShiftConfig { hue_rotation: hue, brightness_scale: bright, contrast_scale: contrast,
                channel_gain: [g0, g1, g2], noise_sigma: noise, blur_sigma: blur, seed };
            let out = apply_shift(&ds, &cfg).unwrap();
            prop_assert_eq!(out.labels(), ds.labels());
            prop_assert_eq!(out.len(), ds.len());
            for img in out.images() {
                prop_assert!(img.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
