//! Sobel edge maps used to condition the decoder.

use crate::data::Image;

/// Per-channel horizontal and vertical Sobel responses in `[-1, 1]`, stored
/// `(H, W, 2C)` with channels interleaved `h0, v0, h1, v1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    height: usize,
    width: usize,
    channels: usize,
    responses: Vec<f32>,
}

const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Mirror index without repeating the border sample (`-1 -> 1`, `n -> n-2`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

impl EdgeMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn responses(&self) -> &[f32] {
        &self.responses
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.responses[(y * self.width + x) * self.channels + c]
    }

    /// Channel-major copy, ready to concatenate with decoder features.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.responses.len()];
        for p in 0..plane {
            for c in 0..self.channels {
                out[c * plane + p] = self.responses[p * self.channels + c];
            }
        }
        out
    }
}

/// Sobel responses of every channel, divided by 4 and clipped to `[-1, 1]`.
pub fn sobel_edges(img: &Image) -> EdgeMap {
    let (h, w, c) = img.shape();
    let mut responses = vec![0.0; h * w * 2 * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let (mut gx, mut gy) = (0.0f32, 0.0f32);
                for (a, row) in SOBEL_X.iter().enumerate() {
                    let yy = reflect_index(y as isize + a as isize - 1, h);
                    for (b, kx) in row.iter().enumerate() {
                        let xx = reflect_index(x as isize + b as isize - 1, w);
                        let v = img.get(yy, xx, ch);
                        gx += kx * v;
                        // vertical kernel is the transpose
                        gy += SOBEL_X[b][a] * v;
                    }
                }
                let base = (y * w + x) * 2 * c + 2 * ch;
                responses[base] = (gx / 4.0).clamp(-1.0, 1.0);
                responses[base + 1] = (gy / 4.0).clamp(-1.0, 1.0);
            }
        }
    }
    EdgeMap {
        height: h,
        width: w,
        channels: 2 * c,
        responses,
    }
}
