//! Windowed structural similarity, its luminance/contrast/structure terms,
//! and the search losses (`1 - SSIM`, MSE, MAE) with analytic gradients.
//!
//! Local statistics use a normalised Gaussian window over every position where
//! the window fits inside the image ("valid" placement). Multi-channel images
//! are handled per channel and averaged.

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values; 2 for `[-1, 1]` data.
    pub dynamic_range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub color: ColorMode,
}

/// How multi-channel images are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// SSIM per channel, averaged.
    #[default]
    Channels,
    /// SSIM of the luma plane: BT.601 weights for three channels, the
    /// channel mean otherwise.
    Luma,
}

fn luma_weights(channels: usize) -> Vec<f64> {
    if channels == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / channels as f64; channels]
    }
}

fn luma(p: &Planar, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.height * p.width];
    for (c, wc) in weights.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(p.plane(c)) {
            *o += wc * v;
        }
    }
    out
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            color: ColorMode::Channels,
        }
    }
}

impl SsimConfig {
    pub fn with_window(window_size: usize) -> Self {
        SsimConfig {
            window_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::Invalid(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        let positive = [self.window_sigma, self.dynamic_range, self.alpha, self.beta, self.gamma, self.k1, self.k2];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("SSIM constants must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as isize;
        let s2 = 2.0 * self.window_sigma * self.window_sigma;
        let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect();
        let sum: f64 = k.iter().sum();
        k.into_iter().map(|v| v / sum).collect()
    }

    /// With `beta == gamma` the contrast and structure terms merge into the
    /// smooth form `(2 cov + C2) / (var_x + var_y + C2)`.
    fn merged_contrast_structure(&self) -> bool {
        self.beta == self.gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ssim,
    Mse,
    Mae,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Ssim => "ssim",
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssim" => Ok(LossKind::Ssim),
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::Invalid(format!("unknown loss kind '{other}'"))),
        }
    }
}

/// Separable "valid" Gaussian filtering of one plane.
struct Window {
    k: Vec<f64>,
    h: usize,
    w: usize,
}

impl Window {
    fn out_hw(&self) -> (usize, usize) {
        let n = self.k.len();
        (self.h + 1 - n, self.w + 1 - n)
    }

    fn filter(&self, plane: &[f64]) -> Vec<f64> {
        let n = self.k.len();
        let (ho, wo) = self.out_hw();
        let mut tmp = vec![0.0; self.h * wo];
        for y in 0..self.h {
            let row = &plane[y * self.w..(y + 1) * self.w];
            for x in 0..wo {
                tmp[y * wo + x] = self.k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ho * wo];
        for y in 0..ho {
            for (t, kv) in self.k.iter().enumerate() {
                let src = &tmp[(y + t) * wo..(y + t + 1) * wo];
                for (o, s) in out[y * wo..(y + 1) * wo].iter_mut().zip(src) {
                    *o += kv * s;
                }
            }
        }
        out
    }

    /// Transpose of [`Window::filter`].
    fn adjoint(&self, map: &[f64]) -> Vec<f64> {
        let n = self.k.len();
        let (ho, wo) = self.out_hw();
        let mut tmp = vec![0.0; self.h * wo];
        for y in 0..ho {
            for (t, kv) in self.k.iter().enumerate() {
                let dst = &mut tmp[(y + t) * wo..(y + t + 1) * wo];
                for (d, m) in dst.iter_mut().zip(&map[y * wo..(y + 1) * wo]) {
                    *d += kv * m;
                }
            }
        }
        let mut out = vec![0.0; self.h * self.w];
        for y in 0..self.h {
            let row = &mut out[y * self.w..(y + 1) * self.w];
            for x in 0..wo {
                let g = tmp[y * wo + x];
                for (r, kv) in row[x..x + n].iter_mut().zip(&self.k) {
                    *r += kv * g;
                }
            }
        }
        out
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(e)
    }
}

fn signed_pow_deriv(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        1.0
    } else {
        e * v.abs().powf(e - 1.0)
    }
}

/// Local statistics of one channel pair at every window position. Variances
/// are left unclamped; paths that take square roots clamp them at zero.
struct LocalStats {
    mx: Vec<f64>,
    my: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    cxy: Vec<f64>,
}

fn local_stats(win: &Window, x: &[f64], y: &[f64]) -> LocalStats {
    let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = win.filter(x);
    let my = win.filter(y);
    let exx = win.filter(&sq(x, x));
    let eyy = win.filter(&sq(y, y));
    let exy = win.filter(&sq(x, y));
    let n = mx.len();
    let mut vx = vec![0.0; n];
    let mut vy = vec![0.0; n];
    let mut cxy = vec![0.0; n];
    for i in 0..n {
        vx[i] = exx[i] - mx[i] * mx[i];
        vy[i] = eyy[i] - my[i] * my[i];
        cxy[i] = exy[i] - mx[i] * my[i];
    }
    LocalStats { mx, my, vx, vy, cxy }
}

/// Per-position index value and its partials w.r.t. `(mu_y, var_y, cov_xy)`.
fn position_value(cfg: &SsimConfig, mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> (f64, [f64; 3]) {
    let (c1, c2, c3) = (cfg.c1(), cfg.c2(), cfg.c3());
    let ln = 2.0 * mx * my + c1;
    let ld = mx * mx + my * my + c1;
    let l = ln / ld;
    let dl_dmy = (2.0 * mx * ld - ln * 2.0 * my) / (ld * ld);
    let pl = signed_pow(l, cfg.alpha);
    let dpl = signed_pow_deriv(l, cfg.alpha);

    if cfg.merged_contrast_structure() && c3 == c2 / 2.0 {
        let den = vx + vy + c2;
        let cs = (2.0 * cxy + c2) / den;
        let pcs = signed_pow(cs, cfg.beta);
        let dpcs = signed_pow_deriv(cs, cfg.beta);
        let dcs_dvy = -(2.0 * cxy + c2) / (den * den);
        let dcs_dcxy = 2.0 / den;
        let value = pl * pcs;
        return (value, [dpl * dl_dmy * pcs, pl * dpcs * dcs_dvy, pl * dpcs * dcs_dcxy]);
    }

    let (vx, vy) = (vx.max(0.0), vy.max(0.0));
    let sxsy = (vx * vy).sqrt();
    let dsxsy_dvy = if sxsy > 0.0 { vx / (2.0 * sxsy) } else { 0.0 };
    let cden = vx + vy + c2;
    let c = (2.0 * sxsy + c2) / cden;
    let dc_dvy = (2.0 * dsxsy_dvy * cden - (2.0 * sxsy + c2)) / (cden * cden);
    let sden = sxsy + c3;
    let s = (cxy + c3) / sden;
    let ds_dvy = -(cxy + c3) * dsxsy_dvy / (sden * sden);
    let ds_dcxy = 1.0 / sden;
    let (pc, dpc) = (signed_pow(c, cfg.beta), signed_pow_deriv(c, cfg.beta));
    let (ps, dps) = (signed_pow(s, cfg.gamma), signed_pow_deriv(s, cfg.gamma));
    let value = pl * pc * ps;
    (
        value,
        [
            dpl * dl_dmy * pc * ps,
            pl * (dpc * dc_dvy * ps + pc * dps * ds_dvy),
            pl * pc * dps * ds_dcxy,
        ],
    )
}

/// Channel-major image pair in `f64`, the representation the losses work on.
#[derive(Clone, Copy, Debug)]
pub struct Planar<'a> {
    pub data: &'a [f64],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl<'a> Planar<'a> {
    pub fn new(data: &'a [f64], height: usize, width: usize, channels: usize) -> Self {
        Planar {
            data,
            height,
            width,
            channels,
        }
    }

    fn plane(&self, c: usize) -> &'a [f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

fn check_pair(x: &Planar, y: &Planar, cfg: &SsimConfig) -> Result<Window> {
    if (x.height, x.width, x.channels) != (y.height, y.width, y.channels) {
        return Err(Error::shape(
            format!("{}x{}x{}", x.height, x.width, x.channels),
            format!("{}x{}x{}", y.height, y.width, y.channels),
        ));
    }
    if x.data.len() != x.height * x.width * x.channels || y.data.len() != x.data.len() {
        return Err(Error::shape(x.height * x.width * x.channels, y.data.len()));
    }
    cfg.validate()?;
    if x.height < cfg.window_size || x.width < cfg.window_size {
        return Err(Error::Invalid(format!(
            "image {}x{} smaller than SSIM window {}",
            x.height, x.width, cfg.window_size
        )));
    }
    Ok(Window {
        k: cfg.kernel(),
        h: x.height,
        w: x.width,
    })
}

/// Mean luminance, contrast and structure terms.
pub fn components_planar(x: Planar, y: Planar, cfg: &SsimConfig) -> Result<(f64, f64, f64)> {
    let win = check_pair(&x, &y, cfg)?;
    if cfg.color == ColorMode::Luma && x.channels > 1 {
        let w = luma_weights(x.channels);
        let (lx, ly) = (luma(&x, &w), luma(&y, &w));
        return components_planar(Planar::new(&lx, x.height, x.width, 1), Planar::new(&ly, x.height, x.width, 1), cfg);
    }
    let (c1, c2, c3) = (cfg.c1(), cfg.c2(), cfg.c3());
    let (mut ls, mut cs, mut ss, mut count) = (0.0, 0.0, 0.0, 0usize);
    for ch in 0..x.channels {
        let st = local_stats(&win, x.plane(ch), y.plane(ch));
        for i in 0..st.mx.len() {
            let (mx, my, cxy) = (st.mx[i], st.my[i], st.cxy[i]);
            let (vx, vy) = (st.vx[i].max(0.0), st.vy[i].max(0.0));
            let sxsy = (vx * vy).sqrt();
            ls += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            cs += (2.0 * sxsy + c2) / (vx + vy + c2);
            ss += (cxy + c3) / (sxsy + c3);
            count += 1;
        }
    }
    let n = count as f64;
    Ok((ls / n, cs / n, ss / n))
}

/// Loss value and, when requested, its gradient w.r.t. `y` (channel-major).
pub fn loss_planar(x: Planar, y: Planar, kind: LossKind, cfg: &SsimConfig, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    match kind {
        LossKind::Ssim => {
            let (s, g) = ssim_planar(x, y, cfg, want_grad)?;
            Ok((1.0 - s, g.map(|g| g.into_iter().map(|v| -v).collect())))
        }
        LossKind::Mse | LossKind::Mae => {
            if x.data.len() != y.data.len() {
                return Err(Error::shape(x.data.len(), y.data.len()));
            }
            let n = x.data.len() as f64;
            let mut total = 0.0;
            let mut grad = want_grad.then(|| vec![0.0; x.data.len()]);
            for (i, (a, b)) in x.data.iter().zip(y.data).enumerate() {
                let d = b - a;
                let (v, g) = if kind == LossKind::Mse {
                    (d * d, 2.0 * d / n)
                } else {
                    (d.abs(), d.signum() * (d != 0.0) as u8 as f64 / n)
                };
                total += v;
                if let Some(gr) = grad.as_mut() {
                    gr[i] = g;
                }
            }
            Ok((total / n, grad))
        }
    }
}

/// Mean SSIM and optionally its gradient w.r.t. `y` (channel-major).
pub fn ssim_planar(x: Planar, y: Planar, cfg: &SsimConfig, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let win = check_pair(&x, &y, cfg)?;
    if cfg.color == ColorMode::Luma && x.channels > 1 {
        let w = luma_weights(x.channels);
        let (lx, ly) = (luma(&x, &w), luma(&y, &w));
        let (s, g) = ssim_planar(Planar::new(&lx, x.height, x.width, 1), Planar::new(&ly, x.height, x.width, 1), cfg, want_grad)?;
        let g = g.map(|g| w.iter().flat_map(|wc| g.iter().map(move |v| v * wc)).collect());
        return Ok((s, g));
    }
    let (ho, wo) = win.out_hw();
    let positions = ho * wo;
    let scale = 1.0 / (positions * x.channels) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; y.data.len()]);
    let plane_len = x.height * x.width;
    for ch in 0..x.channels {
        let (xp, yp) = (x.plane(ch), y.plane(ch));
        let st = local_stats(&win, xp, yp);
        let mut d_my = vec![0.0; positions];
        let mut d_eyy = vec![0.0; positions];
        let mut d_exy = vec![0.0; positions];
        for i in 0..positions {
            let (v, [g_my, g_vy, g_cxy]) = position_value(cfg, st.mx[i], st.my[i], st.vx[i], st.vy[i], st.cxy[i]);
            total += v;
            // var_y = E[y^2] - mu_y^2, cov = E[xy] - mu_x mu_y
            d_my[i] = (g_my - 2.0 * st.my[i] * g_vy - st.mx[i] * g_cxy) * scale;
            d_eyy[i] = g_vy * scale;
            d_exy[i] = g_cxy * scale;
        }
        if let Some(g) = grad.as_mut() {
            let a = win.adjoint(&d_my);
            let b = win.adjoint(&d_eyy);
            let c = win.adjoint(&d_exy);
            let dst = &mut g[ch * plane_len..(ch + 1) * plane_len];
            for q in 0..plane_len {
                dst[q] = a[q] + 2.0 * yp[q] * b[q] + xp[q] * c[q];
            }
        }
    }
    Ok((total * scale, grad))
}

fn planar(img: &Image) -> Vec<f64> {
    img.to_chw().into_iter().map(f64::from).collect()
}

fn pair<'a>(x: &Image, xs: &'a [f64], ys: &'a [f64]) -> (Planar<'a>, Planar<'a>) {
    let (h, w, c) = x.shape();
    (Planar::new(xs, h, w, c), Planar::new(ys, h, w, c))
}

fn same_shape(x: &Image, y: &Image) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!("{:?}", x.shape()), format!("{:?}", y.shape())));
    }
    Ok(())
}

/// `(l, c, s)` averaged over window positions and channels.
pub fn ssim_components(x: &Image, y: &Image, cfg: &SsimConfig) -> Result<(f64, f64, f64)> {
    same_shape(x, y)?;
    let (xs, ys) = (planar(x), planar(y));
    let (px, py) = pair(x, &xs, &ys);
    components_planar(px, py, cfg)
}

pub fn ssim(x: &Image, y: &Image, cfg: &SsimConfig) -> Result<f64> {
    same_shape(x, y)?;
    let (xs, ys) = (planar(x), planar(y));
    let (px, py) = pair(x, &xs, &ys);
    Ok(ssim_planar(px, py, cfg, false)?.0)
}

pub fn search_loss(x: &Image, y: &Image, kind: LossKind, cfg: &SsimConfig) -> Result<f64> {
    same_shape(x, y)?;
    let (xs, ys) = (planar(x), planar(y));
    let (px, py) = pair(x, &xs, &ys);
    Ok(loss_planar(px, py, kind, cfg, false)?.0)
}

/// Loss and its gradient w.r.t. `y`, in `y`'s `(H, W, C)` pixel order.
pub fn search_loss_grad(x: &Image, y: &Image, kind: LossKind, cfg: &SsimConfig) -> Result<(f64, Vec<f64>)> {
    same_shape(x, y)?;
    let (xs, ys) = (planar(x), planar(y));
    let (px, py) = pair(x, &xs, &ys);
    let (loss, g) = loss_planar(px, py, kind, cfg, true)?;
    let g = g.expect("gradient requested");
    let (h, w, c) = x.shape();
    let plane = h * w;
    let mut hwc = vec![0.0; g.len()];
    for ch in 0..c {
        for p in 0..plane {
            hwc[p * c + ch] = g[ch * plane + p];
        }
    }
    Ok((loss, hwc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_planar(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-0.9..0.9)).collect()
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let px: Vec<f32> = (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Image::new(32, 32, 3, px).unwrap();
        let cfg = SsimConfig::default();
        assert_eq!(ssim(&x, &x, &cfg).unwrap(), 1.0);
        assert_eq!(ssim_components(&x, &x, &cfg).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(search_loss(&x, &x, LossKind::Ssim, &cfg).unwrap(), 0.0);
        assert_eq!(search_loss(&x, &x, LossKind::Mse, &cfg).unwrap(), 0.0);
        assert_eq!(search_loss(&x, &x, LossKind::Mae, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn constant_pair_closed_form() {
        let a = Image::constant(16, 16, 1, 0.0).unwrap();
        let b = Image::constant(16, 16, 1, 1.0).unwrap();
        let cfg = SsimConfig::default();
        let c1 = (0.01f64 * 2.0).powi(2);
        let expected = c1 / (1.0 + c1);
        let (l, c, s) = ssim_components(&a, &b, &cfg).unwrap();
        assert!((l - expected).abs() <= 1e-6 * expected);
        assert!((c - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let v = ssim(&a, &b, &cfg).unwrap();
        assert!((v - expected).abs() <= 1e-6 * expected, "{v}");
        assert_eq!(search_loss(&a, &b, LossKind::Mse, &cfg).unwrap(), 1.0);
        assert_eq!(search_loss(&a, &b, LossKind::Mae, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn tiny_noise_keeps_components_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f32> = (0..24 * 24).map(|_| rng.random_range(-0.8..0.8)).collect();
        let normal = rand_distr::Normal::new(0.0f32, 1e-4).unwrap();
        let y: Vec<f32> = x.iter().map(|v| v + rand_distr::Distribution::sample(&normal, &mut rng)).collect();
        let xi = Image::new(24, 24, 1, x).unwrap();
        let yi = Image::new(24, 24, 1, y).unwrap();
        let (l, c, s) = ssim_components(&xi, &yi, &SsimConfig::default()).unwrap();
        for v in [l, c, s] {
            assert!((1.0 - 1e-3..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SsimConfig::default();
        for _ in 0..10 {
            let a = random_planar(&mut rng, 3 * 16 * 16);
            let b = random_planar(&mut rng, 3 * 16 * 16);
            let ab = ssim_planar(Planar::new(&a, 16, 16, 3), Planar::new(&b, 16, 16, 3), &cfg, false).unwrap().0;
            let ba = ssim_planar(Planar::new(&b, 16, 16, 3), Planar::new(&a, 16, 16, 3), &cfg, false).unwrap().0;
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn window_adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let win = Window {
            k: SsimConfig::with_window(5).kernel(),
            h: 9,
            w: 7,
        };
        let u = random_planar(&mut rng, 9 * 7);
        let (ho, wo) = win.out_hw();
        let v = random_planar(&mut rng, ho * wo);
        let lhs: f64 = win.filter(&u).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(win.adjoint(&v)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn fd_check(kind: LossKind, cfg: &SsimConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = (16, 16, 2);
        let x = random_planar(&mut rng, h * w * c);
        let y = random_planar(&mut rng, h * w * c);
        let (_, g) = loss_planar(Planar::new(&x, h, w, c), Planar::new(&y, h, w, c), kind, cfg, true).unwrap();
        let g = g.unwrap();
        let eps = 1e-6;
        let mut fd = vec![0.0; y.len()];
        for i in 0..y.len() {
            let mut yp = y.clone();
            yp[i] += eps;
            let mut ym = y.clone();
            ym[i] -= eps;
            let fp = loss_planar(Planar::new(&x, h, w, c), Planar::new(&yp, h, w, c), kind, cfg, false).unwrap().0;
            let fm = loss_planar(Planar::new(&x, h, w, c), Planar::new(&ym, h, w, c), kind, cfg, false).unwrap().0;
            fd[i] = (fp - fm) / (2.0 * eps);
        }
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * norm, "{kind:?} rel err {}", diff / norm);
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(LossKind::Ssim, &SsimConfig::default(), 1);
        fd_check(LossKind::Ssim, &SsimConfig::with_window(7), 2);
        fd_check(LossKind::Mse, &SsimConfig::default(), 3);
        fd_check(LossKind::Mae, &SsimConfig::default(), 4);
        let general = SsimConfig {
            alpha: 1.5,
            beta: 0.8,
            gamma: 1.2,
            ..SsimConfig::default()
        };
        fd_check(LossKind::Ssim, &general, 5);
        let luma = SsimConfig {
            color: ColorMode::Luma,
            ..SsimConfig::default()
        };
        fd_check(LossKind::Ssim, &luma, 6);
    }

    #[test]
    fn rejects_mismatched_shapes_and_bad_config() {
        let a = Image::constant(16, 16, 1, 0.0).unwrap();
        let b = Image::constant(16, 16, 3, 0.0).unwrap();
        assert!(ssim(&a, &b, &SsimConfig::default()).is_err());
        assert!(ssim(&a, &a, &SsimConfig::with_window(4)).is_err());
        assert!(ssim(&a, &a, &SsimConfig::with_window(17)).is_err());
    }
}
