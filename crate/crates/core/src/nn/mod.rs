//! Minimal CPU neural-network engine with hand-written backward passes.
//!
//! Tensors are dense `f32` buffers in NCHW order. Dense activations use the
//! shape `(n, features, 1, 1)`. All parameters of a network live in a single
//! flat [`Params`] buffer so optimizers and checkpoints see one vector.

mod layers;
pub mod optim;

pub use layers::{Cache, Conv2d, ConvTranspose2d, Dense, Layer, Sequential};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                format!("{expected} elements for {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(mut self, shape: [usize; 4]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("{:?}", self.shape), format!("{shape:?}")));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Stacks samples of identical shape `(c, h, w)` into one batch.
    pub fn stack(samples: &[&[f32]], chw: [usize; 3]) -> Result<Self> {
        let len = chw[0] * chw[1] * chw[2];
        let mut data = Vec::with_capacity(len * samples.len());
        for s in samples {
            if s.len() != len {
                return Err(Error::shape(len, s.len()));
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor {
            shape: [samples.len(), chw[0], chw[1], chw[2]],
            data,
        })
    }

    /// Concatenates two batches along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Self> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if n != nb || h != hb || w != wb {
            return Err(Error::shape(format!("{:?}", a.shape), format!("{:?}", b.shape)));
        }
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Ok(Tensor {
            shape: [n, ca + cb, h, w],
            data,
        })
    }

    /// Splits off the first `c` channels; inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, c: usize) -> (Tensor, Tensor) {
        let [n, ct, h, w] = self.shape;
        let plane = h * w;
        let mut a = Vec::with_capacity(n * c * plane);
        let mut b = Vec::with_capacity(n * (ct - c) * plane);
        for i in 0..n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..c * plane]);
            b.extend_from_slice(&s[c * plane..]);
        }
        (
            Tensor {
                shape: [n, c, h, w],
                data: a,
            },
            Tensor {
                shape: [n, ct - c, h, w],
                data: b,
            },
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named parameter tensor inside a [`Params`] buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn get<'a>(&self, buf: &'a [f32]) -> &'a [f32] {
        &buf[self.offset..self.offset + self.len]
    }

    pub fn get_mut<'a>(&self, buf: &'a mut [f32]) -> &'a mut [f32] {
        &mut buf[self.offset..self.offset + self.len]
    }
}

/// Flat parameter storage with a name table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    specs: Vec<ParamSpec>,
    pub data: Vec<f32>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves a zero-initialized tensor.
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> Slot {
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        self.data.resize(offset + len, 0.0);
        Slot { offset, len }
    }

    /// Fills a slot with `U(-bound, bound)`.
    pub fn init_uniform<R: Rng>(&mut self, slot: Slot, bound: f32, rng: &mut R) {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in slot.get_mut(&mut self.data) {
            *v = dist.sample(rng);
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f32> {
        vec![0.0; self.data.len()]
    }

    /// Overwrites values from `(name, shape, data)` triples, checking every
    /// tensor is present with the expected shape.
    pub fn load_named<'a, I>(&mut self, tensors: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], Vec<f32>)>,
    {
        let mut seen = vec![false; self.specs.len()];
        for (name, shape, values) in tensors {
            let Some(idx) = self.specs.iter().position(|s| s.name == name) else {
                continue;
            };
            let spec = &self.specs[idx];
            if spec.shape != shape || values.len() != spec.len() {
                return Err(Error::shape(
                    format!("{} {:?}", spec.name, spec.shape),
                    format!("{shape:?}"),
                ));
            }
            self.data[spec.offset..spec.offset + spec.len()].copy_from_slice(&values);
            seen[idx] = true;
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!(
                "tensor '{}' missing from archive",
                self.specs[idx].name
            )));
        }
        Ok(())
    }
}

/// Row-major sgemm: `C = alpha * A * B + beta * C` with explicit strides.
///
/// `A` is `m×k`, `B` is `k×n`, `C` is `m×n`; strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    sa: (usize, usize),
    b: &[f32],
    sb: (usize, usize),
    beta: f32,
    c: &mut [f32],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, s: (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s.0 + (cols - 1) * s.1 + 1
        }
    };
    assert!(a.len() >= span(m, k, sa), "gemm: A too short");
    assert!(b.len() >= span(k, n, sb), "gemm: B too short");
    assert!(c.len() >= span(m, n, sc), "gemm: C too short");
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // A^T via strides: treat `a` as 3x2 column-major
        let mut d = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a, (1, 2), &b, (2, 1), 0.0, &mut d, (2, 1));
        assert_eq!(d, [1.0 * 7.0 + 3.0 * 9.0 + 5.0 * 11.0, 1.0 * 8.0 + 3.0 * 10.0 + 5.0 * 12.0, 2.0 * 7.0 + 4.0 * 9.0 + 6.0 * 11.0, 2.0 * 8.0 + 4.0 * 10.0 + 6.0 * 12.0]);
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let ab = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), [2, 3, 1, 2]);
        let (a2, b2) = ab.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn load_named_rejects_wrong_shape() {
        let mut p = Params::new();
        p.alloc("w", &[2, 2]);
        let err = p.load_named([("w", &[4usize][..], vec![0.0; 4])]);
        assert!(err.is_err());
        p.load_named([("w", &[2usize, 2][..], vec![1.0; 4])]).unwrap();
        assert_eq!(p.data, vec![1.0; 4]);
    }
}
