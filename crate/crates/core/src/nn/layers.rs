use rand::Rng;

use super::{gemm, Params, Slot, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution, weights laid out `[cout, cin, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Slot,
    pub b: Slot,
}

/// Transposed 2-D convolution, weights laid out `[cin, cout, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub w: Slot,
    pub b: Slot,
}

/// Fully connected layer, weights laid out `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Slot,
    pub b: Slot,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    Dense(Dense),
    LeakyRelu(f32),
    Tanh,
    /// `(n, c, h, w)` to `(n, c*h*w, 1, 1)`.
    Flatten,
    /// `(n, c*h*w, 1, 1)` to `(n, c, h, w)`.
    Unflatten([usize; 3]),
    GlobalAvgPool,
}

/// Saved forward state needed by [`Layer::backward`].
#[derive(Clone, Debug)]
pub enum Cache {
    Cols { cols: Vec<f32>, in_shape: [usize; 4] },
    Input(Tensor),
    Output(Tensor),
    Shape([usize; 4]),
}

fn leaky_gain(slope: f32) -> f32 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let w = params.alloc(format!("{name}.weight"), &[cout, cin, k, k]);
        let b = params.alloc(format!("{name}.bias"), &[cout]);
        let bound = leaky_gain(0.2) * (3.0 / (cin * k * k) as f32).sqrt();
        params.init_uniform(w, bound, rng);
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            w,
            b,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        rng: &mut R,
    ) -> Self {
        let w = params.alloc(format!("{name}.weight"), &[cin, cout, k, k]);
        let b = params.alloc(format!("{name}.bias"), &[cout]);
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        let bound = leaky_gain(0.2) * (3.0 / fan_in as f32).sqrt();
        params.init_uniform(w, bound, rng);
        ConvTranspose2d {
            cin,
            cout,
            k,
            stride,
            pad,
            out_pad,
            w,
            b,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
            (w - 1) * self.stride + self.k + self.out_pad - 2 * self.pad,
        )
    }
}

impl Dense {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f32,
        rng: &mut R,
    ) -> Self {
        let w = params.alloc(format!("{name}.weight"), &[fan_out, fan_in]);
        let b = params.alloc(format!("{name}.bias"), &[fan_out]);
        let bound = gain * (3.0 / fan_in as f32).sqrt();
        params.init_uniform(w, bound, rng);
        Dense {
            fan_in,
            fan_out,
            w,
            b,
        }
    }
}

/// Unfolds one `(c, h, w)` sample into `[c*k*k, ho*wo]` patch columns.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, ho: usize, wo: usize, out: &mut [f32]) {
    let plane = ho * wo;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut out[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kj, p, s, w, wo);
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let start = lo * s + kj - p;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&srow[start..start + hi - lo]);
                    } else {
                        for (v, sv) in line[lo..hi].iter_mut().zip(srow[start..].iter().step_by(s)) {
                            *v = *sv;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose tap `kj` lands inside a row of width `w`.
fn valid_range(kj: usize, p: usize, s: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
    let hi = if w + p > kj { ((w - 1 + p - kj) / s + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

/// Adjoint of [`im2col`]: accumulates patch columns back into a sample.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, ho: usize, wo: usize, out: &mut [f32]) {
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kj, p, s, w, wo);
                if lo >= hi {
                    continue;
                }
                let start = lo * s + kj - p;
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * wo + lo..oy * wo + hi];
                    if s == 1 {
                        for (d, v) in drow[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in drow[start..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

impl Layer {
    /// Output `(c, h, w)` for an input `(c, h, w)`.
    pub fn out_chw(&self, chw: [usize; 3]) -> [usize; 3] {
        let [c, h, w] = chw;
        match self {
            Layer::Conv(l) => {
                let (ho, wo) = l.out_hw(h, w);
                [l.cout, ho, wo]
            }
            Layer::Deconv(l) => {
                let (ho, wo) = l.out_hw(h, w);
                [l.cout, ho, wo]
            }
            Layer::Dense(l) => [l.fan_out, 1, 1],
            Layer::Flatten => [c * h * w, 1, 1],
            Layer::Unflatten(s) => *s,
            Layer::GlobalAvgPool => [c, 1, 1],
            Layer::LeakyRelu(_) | Layer::Tanh => chw,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let ok = match self {
            Layer::Conv(l) => c == l.cin && h + 2 * l.pad >= l.k && w + 2 * l.pad >= l.k,
            Layer::Deconv(l) => c == l.cin,
            Layer::Dense(l) => c * h * w == l.fan_in,
            Layer::Unflatten(s) => c * h * w == s[0] * s[1] * s[2],
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("{self:?}"), format!("{:?}", x.shape())))
        }
    }

    /// Runs the layer; when `keep` is set, also returns the state `backward` needs.
    pub fn forward(&self, params: &[f32], x: Tensor, keep: bool) -> Result<(Tensor, Option<Cache>)> {
        self.check_input(&x)?;
        let [n, c, h, w] = x.shape();
        match self {
            Layer::Conv(l) => {
                let (ho, wo) = l.out_hw(h, w);
                let kk = c * l.k * l.k;
                let plane = ho * wo;
                let wt = l.w.get(params);
                let bias = l.b.get(params);
                let mut out = Tensor::zeros([n, l.cout, ho, wo]);
                let mut cols = vec![0.0; n * kk * plane];
                for i in 0..n {
                    let col = &mut cols[i * kk * plane..(i + 1) * kk * plane];
                    im2col(x.sample(i), c, h, w, l.k, l.stride, l.pad, ho, wo, col);
                    let y = out.sample_mut(i);
                    for (co, b) in bias.iter().enumerate() {
                        y[co * plane..(co + 1) * plane].fill(*b);
                    }
                    gemm(l.cout, kk, plane, 1.0, wt, (kk, 1), col, (plane, 1), 1.0, y, (plane, 1));
                }
                let cache = keep.then(|| Cache::Cols {
                    cols,
                    in_shape: [n, c, h, w],
                });
                Ok((out, cache))
            }
            Layer::Deconv(l) => {
                let (ho, wo) = l.out_hw(h, w);
                let kk = l.cout * l.k * l.k;
                let plane_in = h * w;
                let plane_out = ho * wo;
                let wt = l.w.get(params);
                let bias = l.b.get(params);
                let mut out = Tensor::zeros([n, l.cout, ho, wo]);
                let mut col = vec![0.0; kk * plane_in];
                for i in 0..n {
                    // cols = W^T x
                    gemm(kk, c, plane_in, 1.0, wt, (1, kk), x.sample(i), (plane_in, 1), 0.0, &mut col, (plane_in, 1));
                    let y = out.sample_mut(i);
                    col2im(&col, l.cout, ho, wo, l.k, l.stride, l.pad, h, w, y);
                    for (co, b) in bias.iter().enumerate() {
                        for v in &mut y[co * plane_out..(co + 1) * plane_out] {
                            *v += b;
                        }
                    }
                }
                Ok((out, keep.then_some(Cache::Input(x))))
            }
            Layer::Dense(l) => {
                let wt = l.w.get(params);
                let bias = l.b.get(params);
                let mut out = Tensor::zeros([n, l.fan_out, 1, 1]);
                for i in 0..n {
                    out.sample_mut(i).copy_from_slice(bias);
                }
                gemm(n, l.fan_in, l.fan_out, 1.0, x.data(), (l.fan_in, 1), wt, (1, l.fan_in), 1.0, out.data_mut(), (l.fan_out, 1));
                Ok((out, keep.then_some(Cache::Input(x))))
            }
            Layer::LeakyRelu(slope) => {
                let mut out = x.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
                Ok((out, keep.then_some(Cache::Input(x))))
            }
            Layer::Tanh => {
                let mut out = x;
                for v in out.data_mut() {
                    *v = v.tanh();
                }
                let cache = keep.then(|| Cache::Output(out.clone()));
                Ok((out, cache))
            }
            Layer::Flatten => Ok((x.reshape([n, c * h * w, 1, 1])?, keep.then_some(Cache::Shape([n, c, h, w])))),
            Layer::Unflatten(s) => Ok((x.reshape([n, s[0], s[1], s[2]])?, keep.then_some(Cache::Shape([n, c, h, w])))),
            Layer::GlobalAvgPool => {
                let plane = h * w;
                let mut out = Tensor::zeros([n, c, 1, 1]);
                for i in 0..n {
                    let src = x.sample(i);
                    for (ci, o) in out.sample_mut(i).iter_mut().enumerate() {
                        *o = src[ci * plane..(ci + 1) * plane].iter().sum::<f32>() / plane as f32;
                    }
                }
                Ok((out, keep.then_some(Cache::Shape([n, c, h, w]))))
            }
        }
    }

    /// Back-propagates `dy`. Parameter gradients are accumulated into `grads`
    /// when given; the input gradient is returned when `need_dx` is set.
    pub fn backward(
        &self,
        params: &[f32],
        cache: &Cache,
        dy: Tensor,
        grads: Option<&mut [f32]>,
        need_dx: bool,
    ) -> Option<Tensor> {
        match (self, cache) {
            (Layer::Conv(l), Cache::Cols { cols, in_shape }) => {
                let [n, c, h, w] = *in_shape;
                let [_, _, ho, wo] = dy.shape();
                let kk = c * l.k * l.k;
                let plane = ho * wo;
                let wt = l.w.get(params);
                if let Some(g) = grads {
                    for i in 0..n {
                        let dyi = dy.sample(i);
                        let col = &cols[i * kk * plane..(i + 1) * kk * plane];
                        gemm(l.cout, plane, kk, 1.0, dyi, (plane, 1), col, (1, plane), 1.0, l.w.get_mut(g), (kk, 1));
                        for (co, gb) in l.b.get_mut(g).iter_mut().enumerate() {
                            *gb += dyi[co * plane..(co + 1) * plane].iter().sum::<f32>();
                        }
                    }
                }
                if !need_dx {
                    return None;
                }
                let mut dx = Tensor::zeros([n, c, h, w]);
                let mut dcol = vec![0.0; kk * plane];
                for i in 0..n {
                    gemm(kk, l.cout, plane, 1.0, wt, (1, kk), dy.sample(i), (plane, 1), 0.0, &mut dcol, (plane, 1));
                    col2im(&dcol, c, h, w, l.k, l.stride, l.pad, ho, wo, dx.sample_mut(i));
                }
                Some(dx)
            }
            (Layer::Deconv(l), Cache::Input(x)) => {
                let [n, c, h, w] = x.shape();
                let [_, _, ho, wo] = dy.shape();
                let kk = l.cout * l.k * l.k;
                let plane_in = h * w;
                let plane_out = ho * wo;
                let wt = l.w.get(params);
                let mut dx = need_dx.then(|| Tensor::zeros([n, c, h, w]));
                let mut dcol = vec![0.0; kk * plane_in];
                let mut grads = grads;
                for i in 0..n {
                    let dyi = dy.sample(i);
                    im2col(dyi, l.cout, ho, wo, l.k, l.stride, l.pad, h, w, &mut dcol);
                    if let Some(g) = grads.as_deref_mut() {
                        gemm(c, plane_in, kk, 1.0, x.sample(i), (plane_in, 1), &dcol, (1, plane_in), 1.0, l.w.get_mut(g), (kk, 1));
                        for (co, gb) in l.b.get_mut(g).iter_mut().enumerate() {
                            *gb += dyi[co * plane_out..(co + 1) * plane_out].iter().sum::<f32>();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(c, kk, plane_in, 1.0, wt, (kk, 1), &dcol, (plane_in, 1), 0.0, dx.sample_mut(i), (plane_in, 1));
                    }
                }
                dx
            }
            (Layer::Dense(l), Cache::Input(x)) => {
                let n = x.n();
                let wt = l.w.get(params);
                if let Some(g) = grads {
                    gemm(l.fan_out, n, l.fan_in, 1.0, dy.data(), (1, l.fan_out), x.data(), (l.fan_in, 1), 1.0, l.w.get_mut(g), (l.fan_in, 1));
                    let gb = l.b.get_mut(g);
                    for i in 0..n {
                        for (b, d) in gb.iter_mut().zip(dy.sample(i)) {
                            *b += d;
                        }
                    }
                }
                need_dx.then(|| {
                    let mut dx = Tensor::zeros(x.shape());
                    gemm(n, l.fan_out, l.fan_in, 1.0, dy.data(), (l.fan_out, 1), wt, (l.fan_in, 1), 0.0, dx.data_mut(), (l.fan_in, 1));
                    dx
                })
            }
            (Layer::LeakyRelu(slope), Cache::Input(x)) => need_dx.then(|| {
                let mut dx = dy;
                for (d, v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if *v < 0.0 {
                        *d *= slope;
                    }
                }
                dx
            }),
            (Layer::Tanh, Cache::Output(y)) => need_dx.then(|| {
                let mut dx = dy;
                for (d, t) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d *= 1.0 - t * t;
                }
                dx
            }),
            (Layer::Flatten | Layer::Unflatten(_), Cache::Shape(s)) => {
                need_dx.then(|| dy.reshape(*s).expect("cached shape"))
            }
            (Layer::GlobalAvgPool, Cache::Shape(s)) => need_dx.then(|| {
                let [n, c, h, w] = *s;
                let plane = h * w;
                let mut dx = Tensor::zeros(*s);
                for i in 0..n {
                    let g = dy.sample(i).to_vec();
                    let dst = dx.sample_mut(i);
                    for ci in 0..c {
                        dst[ci * plane..(ci + 1) * plane].fill(g[ci] / plane as f32);
                    }
                }
                dx
            }),
            _ => panic!("cache does not belong to layer {self:?}"),
        }
    }
}

/// A chain of layers sharing one parameter buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn out_chw(&self, chw: [usize; 3]) -> [usize; 3] {
        self.layers.iter().fold(chw, |s, l| l.out_chw(s))
    }

    pub fn forward(&self, params: &[f32], x: Tensor) -> Result<Tensor> {
        self.forward_prefix(params, x, self.layers.len())
    }

    /// Runs only the first `upto` layers.
    pub fn forward_prefix(&self, params: &[f32], mut x: Tensor, upto: usize) -> Result<Tensor> {
        for layer in &self.layers[..upto] {
            x = layer.forward(params, x, false)?.0;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, params: &[f32], x: Tensor) -> Result<(Tensor, Vec<Cache>)> {
        self.forward_prefix_cached(params, x, self.layers.len())
    }

    pub fn forward_prefix_cached(&self, params: &[f32], mut x: Tensor, upto: usize) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(upto);
        for layer in &self.layers[..upto] {
            let (y, c) = layer.forward(params, x, true)?;
            caches.push(c.expect("cache requested"));
            x = y;
        }
        Ok((x, caches))
    }

    /// Back-propagates through the layers that produced `caches`.
    pub fn backward(
        &self,
        params: &[f32],
        caches: &[Cache],
        mut dy: Tensor,
        mut grads: Option<&mut [f32]>,
        need_dx: bool,
    ) -> Option<Tensor> {
        let depth = caches.len();
        for (idx, (layer, cache)) in self.layers[..depth].iter().zip(caches).enumerate().rev() {
            let want = need_dx || idx > 0;
            match layer.backward(params, cache, dy, grads.as_deref_mut(), want) {
                Some(d) => dy = d,
                None => return None,
            }
        }
        Some(dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    }

    /// Scalar objective `sum(r * f(x))` checked against central differences
    /// in both the input and a handful of parameters.
    fn check_layer(net: &Sequential, params: &mut Params, x: Tensor, rng: &mut ChaCha8Rng) {
        let (y, caches) = net.forward_cached(&params.data, x.clone()).unwrap();
        let r = rand_tensor(y.shape(), rng);
        let obj = |p: &[f32], x: &Tensor| -> f64 {
            let y = net.forward(p, x.clone()).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let mut grads = params.zeros_like();
        let dx = net.backward(&params.data, &caches, r.clone(), Some(&mut grads), true).unwrap();
        let h = 1e-2f32;
        for idx in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (obj(&params.data, &xp) - obj(&params.data, &xm)) / (2.0 * h as f64);
            let an = dx.data()[idx] as f64;
            assert!((fd - an).abs() <= 2e-2 * (1.0 + fd.abs()), "dx[{idx}] fd={fd} an={an}");
        }
        for idx in (0..params.len()).step_by(5) {
            let orig = params.data[idx];
            params.data[idx] = orig + h;
            let fp = obj(&params.data, &x);
            params.data[idx] = orig - h;
            let fm = obj(&params.data, &x);
            params.data[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            let an = grads[idx] as f64;
            assert!((fd - an).abs() <= 2e-2 * (1.0 + fd.abs()), "dp[{idx}] fd={fd} an={an}");
        }
    }

    #[test]
    fn conv_stack_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(&mut params, "c1", 2, 3, 3, 1, 1, &mut rng)),
            Layer::Tanh,
            Layer::Conv(Conv2d::new(&mut params, "c2", 3, 4, 3, 2, 1, &mut rng)),
            Layer::GlobalAvgPool,
        ]);
        let x = rand_tensor([2, 2, 6, 6], &mut rng);
        check_layer(&net, &mut params, x, &mut rng);
    }

    #[test]
    fn deconv_dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::new();
        let net = Sequential::new(vec![
            Layer::Dense(Dense::new(&mut params, "fc", 5, 12, 1.0, &mut rng)),
            Layer::Tanh,
            Layer::Unflatten([3, 2, 2]),
            Layer::Deconv(ConvTranspose2d::new(&mut params, "d1", 3, 2, 3, 2, 1, 1, &mut rng)),
            Layer::Tanh,
            Layer::Flatten,
        ]);
        let x = rand_tensor([3, 5, 1, 1], &mut rng);
        check_layer(&net, &mut params, x, &mut rng);
    }

    #[test]
    fn deconv_doubles_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        let l = ConvTranspose2d::new(&mut params, "d", 4, 2, 3, 2, 1, 1, &mut rng);
        assert_eq!(l.out_hw(4, 4), (8, 8));
        let c = Conv2d::new(&mut params, "c", 4, 2, 3, 2, 1, &mut rng);
        assert_eq!(c.out_hw(8, 8), (4, 4));
    }

    #[test]
    fn leaky_relu_scales_negatives() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let (y, _) = Layer::LeakyRelu(0.2).forward(&[], x, false).unwrap();
        assert_eq!(y.data(), &[-0.2, 2.0]);
    }
}
