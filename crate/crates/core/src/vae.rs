//! Edge-conditioned variational autoencoder and its training loop.
//!
//! The encoder maps an image to a diagonal Gaussian posterior. The decoder
//! turns a latent code into a coarse tanh image, concatenates the Sobel map
//! of a conditioning image along channels and refines the result with three
//! convolutions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, HasParams};
use crate::data::{Image, LabeledDataset};
use crate::edge::{sobel_edges, EdgeMap};
use crate::error::{Error, Result};
use crate::nn::optim::RmsProp;
use crate::nn::{Cache, Conv2d, ConvTranspose2d, Dense, Layer, Params, Sequential, Tensor};
use crate::perceptual::{batch_tensor, SourceClassifier};

pub const LOG_SIGMA_MIN: f32 = -6.0;
pub const LOG_SIGMA_MAX: f32 = 6.0;

const SLOPE: f32 = 0.2;

/// Scale descriptor. Depth follows the resolution: one stride-1 conv, then
/// stride-2 convs down to 4x4; the decoder mirrors it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeArch {
    pub resolution: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub conv_width: usize,
    pub fc_width: usize,
    pub refine_width: usize,
    /// Concatenate the conditioning edge map before the refinement convs.
    pub edges: bool,
}

impl VaeArch {
    pub fn desk(resolution: usize, channels: usize) -> Self {
        VaeArch {
            resolution,
            channels,
            latent_dim: 64,
            conv_width: 32,
            fc_width: 256,
            refine_width: 16,
            edges: true,
        }
    }

    /// Full-size network for 128x128 inputs.
    pub fn full(channels: usize) -> Self {
        VaeArch {
            resolution: 128,
            channels,
            latent_dim: 64,
            conv_width: 128,
            fc_width: 1024,
            refine_width: 128,
            edges: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r == 0 || r % 32 != 0 || !(r / 4).is_power_of_two() {
            return Err(Error::Invalid(format!(
                "resolution {r} must be a multiple of 32 that halves down to 4"
            )));
        }
        if self.channels == 0 || self.latent_dim == 0 || self.conv_width == 0 || self.fc_width == 0 || self.refine_width == 0 {
            return Err(Error::Invalid(format!("degenerate VAE arch {self:?}")));
        }
        Ok(())
    }

    fn downsamplings(&self) -> usize {
        (self.resolution / 4).trailing_zeros() as usize
    }

    pub fn edge_channels(&self) -> usize {
        if self.edges {
            2 * self.channels
        } else {
            0
        }
    }

    /// Shape of the tensor entering the refinement convs.
    pub fn refine_input_chw(&self) -> [usize; 3] {
        [self.channels + self.edge_channels(), self.resolution, self.resolution]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorParams {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct VaeLossBreakdown {
    pub l_r: f64,
    pub l_p: f64,
    pub kl: f64,
    pub total_encoder: f64,
    pub total_decoder: f64,
}

/// Term weights; all 1 for the standard objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub perceptual: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            perceptual: 1.0,
            kl: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for VaeHyper {
    fn default() -> Self {
        VaeHyper {
            epochs: 100,
            batch_size: 64,
            lr: 1e-4,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub l_r: f64,
    pub l_p: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    arch: VaeArch,
    encoder: Sequential,
    head: Sequential,
    refine: Sequential,
    params: Params,
    /// Encoder parameters occupy `params.data[..encoder_len]`.
    encoder_len: usize,
}

impl HasParams for VaeModel {
    fn set_params(&mut self, params: Params) {
        self.params = params;
    }
}

/// Saved state of one decoder pass.
pub struct DecodeCache {
    head: Vec<Cache>,
    refine: Vec<Cache>,
}

pub(crate) fn edge_tensor(edges: &[&EdgeMap]) -> Result<Tensor> {
    let first = edges.first().ok_or_else(|| Error::Invalid("empty edge batch".into()))?;
    let (h, w, c) = first.shape();
    let chw: Vec<Vec<f32>> = edges.iter().map(|e| e.to_chw()).collect();
    let refs: Vec<&[f32]> = chw.iter().map(|v| v.as_slice()).collect();
    Tensor::stack(&refs, [c, h, w])
}

pub fn kl_closed_form(mu: f64, sigma: f64) -> f64 {
    0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * sigma.ln())
}

impl VaeModel {
    pub fn new(arch: VaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let (c, w, dz) = (arch.channels, arch.conv_width, arch.latent_dim);
        let down = arch.downsamplings();

        let mut enc = vec![
            Layer::Conv(Conv2d::new(&mut params, "encoder.conv1", c, w, 3, 1, 1, &mut rng)),
            Layer::LeakyRelu(SLOPE),
        ];
        for i in 0..down {
            enc.push(Layer::Conv(Conv2d::new(&mut params, &format!("encoder.conv{}", i + 2), w, w, 3, 2, 1, &mut rng)));
            enc.push(Layer::LeakyRelu(SLOPE));
        }
        enc.push(Layer::Flatten);
        enc.push(Layer::Dense(Dense::new(&mut params, "encoder.fc1", w * 16, arch.fc_width, 1.0, &mut rng)));
        enc.push(Layer::LeakyRelu(SLOPE));
        enc.push(Layer::Dense(Dense::new(&mut params, "encoder.z", arch.fc_width, 2 * dz, 0.1, &mut rng)));
        let encoder_len = params.len();

        let mut head = vec![
            Layer::Dense(Dense::new(&mut params, "decoder.fc2", dz, arch.fc_width, 1.0, &mut rng)),
            Layer::LeakyRelu(SLOPE),
            Layer::Dense(Dense::new(&mut params, "decoder.fc3", arch.fc_width, w * 16, 1.0, &mut rng)),
            Layer::LeakyRelu(SLOPE),
            Layer::Unflatten([w, 4, 4]),
            Layer::Deconv(ConvTranspose2d::new(&mut params, "decoder.deconv1", w, w, 3, 1, 1, 0, &mut rng)),
            Layer::LeakyRelu(SLOPE),
        ];
        for i in 0..down {
            let last = i + 1 == down;
            let cout = if last { c } else { w };
            head.push(Layer::Deconv(ConvTranspose2d::new(
                &mut params,
                &format!("decoder.deconv{}", i + 2),
                w,
                cout,
                3,
                2,
                1,
                1,
                &mut rng,
            )));
            head.push(if last { Layer::Tanh } else { Layer::LeakyRelu(SLOPE) });
        }

        let [cin, _, _] = arch.refine_input_chw();
        let r = arch.refine_width;
        let refine = vec![
            Layer::Conv(Conv2d::new(&mut params, "decoder.conv7", cin, r, 3, 1, 1, &mut rng)),
            Layer::LeakyRelu(SLOPE),
            Layer::Conv(Conv2d::new(&mut params, "decoder.conv8", r, r, 3, 1, 1, &mut rng)),
            Layer::LeakyRelu(SLOPE),
            Layer::Conv(Conv2d::new(&mut params, "decoder.conv9", r, c, 3, 1, 1, &mut rng)),
            Layer::Tanh,
        ];
        Ok(VaeModel {
            arch,
            encoder: Sequential::new(enc),
            head: Sequential::new(head),
            refine: Sequential::new(refine),
            params,
            encoder_len,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Decoder parameters, the part latent search must leave untouched.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Loss terms of a batch and the gradient of `total_encoder` over the
    /// flat parameter buffer.
    pub fn loss_and_gradient(
        &self,
        batch: &[&Image],
        perceptual: Option<&SourceClassifier>,
        weights: &LossWeights,
        noise_seed: u64,
    ) -> Result<(VaeLossBreakdown, Vec<f32>)> {
        let (b, g) = self.loss_grad(batch, perceptual, weights, noise_seed, true)?;
        Ok((b, g.expect("gradient requested")))
    }

    pub fn decoder_params(&self) -> &[f32] {
        &self.params.data[self.encoder_len..]
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.arch.resolution, self.arch.resolution, self.arch.channels)
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.shape() != self.image_shape() {
            return Err(Error::shape(format!("{:?}", self.image_shape()), format!("{:?}", img.shape())));
        }
        Ok(())
    }

    fn check_edges(&self, e: &EdgeMap) -> Result<()> {
        let want = (self.arch.resolution, self.arch.resolution, 2 * self.arch.channels);
        if e.shape() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", e.shape())));
        }
        Ok(())
    }

    fn split_posterior(&self, out: &Tensor) -> Vec<PosteriorParams> {
        let dz = self.arch.latent_dim;
        (0..out.n())
            .map(|i| {
                let s = out.sample(i);
                PosteriorParams {
                    mu: s[..dz].to_vec(),
                    sigma: s[dz..].iter().map(|l| l.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp()).collect(),
                }
            })
            .collect()
    }

    pub fn encode(&self, x: &Image) -> Result<PosteriorParams> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<PosteriorParams>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            for img in chunk {
                self.check_image(img)?;
            }
            let t = self.encoder.forward(&self.params.data, batch_tensor(chunk)?)?;
            out.extend(self.split_posterior(&t));
        }
        Ok(out)
    }

    pub fn decode(&self, z: &LatentCode, e: &EdgeMap) -> Result<Image> {
        Ok(self.decode_batch(&[z.0.as_slice()], &[e])?.remove(0))
    }

    pub fn decode_batch(&self, zs: &[&[f32]], edges: &[&EdgeMap]) -> Result<Vec<Image>> {
        if zs.len() != edges.len() {
            return Err(Error::shape(format!("{} edge maps", zs.len()), format!("{}", edges.len())));
        }
        let mut out = Vec::with_capacity(zs.len());
        for (zc, ec) in zs.chunks(64).zip(edges.chunks(64)) {
            let z = self.latent_tensor(zc)?;
            let e = self.edge_input(ec)?;
            let (x, _) = self.decode_tensor(z, e.as_ref(), false)?;
            out.extend(self.to_images(&x)?);
        }
        Ok(out)
    }

    pub(crate) fn latent_tensor(&self, zs: &[&[f32]]) -> Result<Tensor> {
        let dz = self.arch.latent_dim;
        if let Some(bad) = zs.iter().find(|z| z.len() != dz) {
            return Err(Error::shape(format!("latent of dim {dz}"), format!("dim {}", bad.len())));
        }
        Tensor::stack(zs, [dz, 1, 1])
    }

    /// Edge tensor for the decoder, `None` when the architecture ignores edges.
    pub(crate) fn edge_input(&self, edges: &[&EdgeMap]) -> Result<Option<Tensor>> {
        for e in edges {
            self.check_edges(e)?;
        }
        if self.arch.edges {
            edge_tensor(edges).map(Some)
        } else {
            Ok(None)
        }
    }

    pub(crate) fn to_images(&self, x: &Tensor) -> Result<Vec<Image>> {
        let (h, w, c) = self.image_shape();
        (0..x.n()).map(|i| Image::from_chw(h, w, c, x.sample(i))).collect()
    }

    /// Decoder pass on `[n, d_z, 1, 1]` codes.
    pub(crate) fn decode_tensor(&self, z: Tensor, edges: Option<&Tensor>, keep: bool) -> Result<(Tensor, Option<DecodeCache>)> {
        let p = &self.params.data;
        let (coarse, head) = if keep {
            let (y, c) = self.head.forward_cached(p, z)?;
            (y, Some(c))
        } else {
            (self.head.forward(p, z)?, None)
        };
        let joined = match edges {
            Some(e) => Tensor::concat_channels(&coarse, e)?,
            None => coarse,
        };
        if keep {
            let (y, refine) = self.refine.forward_cached(p, joined)?;
            Ok((
                y,
                Some(DecodeCache {
                    head: head.expect("cached head"),
                    refine,
                }),
            ))
        } else {
            Ok((self.refine.forward(p, joined)?, None))
        }
    }

    /// Back-propagates an output gradient to the latent codes, accumulating
    /// decoder parameter gradients when `grads` is given.
    pub(crate) fn decode_backward(&self, cache: &DecodeCache, dy: Tensor, mut grads: Option<&mut [f32]>) -> Tensor {
        let p = &self.params.data;
        let djoined = self
            .refine
            .backward(p, &cache.refine, dy, grads.as_deref_mut(), true)
            .expect("input gradient requested");
        let dcoarse = if self.arch.edges {
            djoined.split_channels(self.arch.channels).0
        } else {
            djoined
        };
        self.head
            .backward(p, &cache.head, dcoarse, grads, true)
            .expect("input gradient requested")
    }

    /// Loss terms of one batch and, optionally, the gradient of
    /// `total_encoder` with respect to all parameters. The decoder does not
    /// see the KL term, so this single gradient holds the encoder update on
    /// `total_encoder` and the decoder update on `total_decoder` at once.
    pub(crate) fn loss_grad(
        &self,
        batch: &[&Image],
        perceptual: Option<&SourceClassifier>,
        weights: &LossWeights,
        noise_seed: u64,
        want_grad: bool,
    ) -> Result<(VaeLossBreakdown, Option<Vec<f32>>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        for img in batch {
            self.check_image(img)?;
        }
        let p = &self.params.data;
        let n = batch.len();
        let dz = self.arch.latent_dim;
        let x = batch_tensor(batch)?;
        let (enc_out, enc_caches) = self.encoder.forward_cached(p, x.clone())?;

        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut eps = vec![0.0f32; n * dz];
        let mut sigma = vec![0.0f32; n * dz];
        let mut z = vec![0.0f32; n * dz];
        let mut kl = 0.0f64;
        for i in 0..n {
            let s = enc_out.sample(i);
            for j in 0..dz {
                let ls = s[dz + j].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
                let sg = ls.exp();
                let e: f32 = StandardNormal.sample(&mut rng);
                let k = i * dz + j;
                eps[k] = e;
                sigma[k] = sg;
                z[k] = s[j] + sg * e;
                kl += 0.5 * ((s[j] as f64).powi(2) + (sg as f64).powi(2) - 1.0 - 2.0 * ls as f64);
            }
        }
        let edge_maps: Vec<EdgeMap> = batch.iter().map(|i| sobel_edges(i)).collect();
        let edge_refs: Vec<&EdgeMap> = edge_maps.iter().collect();
        let edges = self.edge_input(&edge_refs)?;
        let (xhat, dec_cache) = self.decode_tensor(Tensor::from_vec([n, dz, 1, 1], z)?, edges.as_ref(), want_grad)?;

        let mut l_r = 0.0f64;
        let mut dxhat = Tensor::zeros(xhat.shape());
        for ((a, b), d) in x.data().iter().zip(xhat.data()).zip(dxhat.data_mut()) {
            let diff = (*a - *b) as f64;
            l_r += diff * diff;
            *d = (-2.0 * weights.reconstruction * diff) as f32;
        }

        let mut l_p = 0.0f64;
        if let Some(clf) = perceptual.filter(|_| weights.perceptual != 0.0) {
            let fx = clf.features_tensor(x)?;
            let (fh, fcache) = clf.features_cached(xhat.clone())?;
            let mut dfeat = Tensor::zeros(fh.shape());
            for ((a, b), d) in fx.data().iter().zip(fh.data()).zip(dfeat.data_mut()) {
                let diff = (*a - *b) as f64;
                l_p += diff * diff;
                *d = (-2.0 * weights.perceptual * diff) as f32;
            }
            if want_grad {
                let back = clf.features_backward(&fcache, dfeat);
                for (d, g) in dxhat.data_mut().iter_mut().zip(back.data()) {
                    *d += g;
                }
            }
        }

        for (term, v) in [("l_r", l_r), ("l_p", l_p), ("kl", kl)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: term.into() });
            }
        }
        let total_decoder = weights.reconstruction * l_r + weights.perceptual * l_p;
        let breakdown = VaeLossBreakdown {
            l_r,
            l_p,
            kl,
            total_encoder: total_decoder + weights.kl * kl,
            total_decoder,
        };
        if !want_grad {
            return Ok((breakdown, None));
        }

        let mut grads = self.params.zeros_like();
        let dzt = self.decode_backward(dec_cache.as_ref().expect("cached decode"), dxhat, Some(&mut grads));
        let mut denc = Tensor::zeros(enc_out.shape());
        for i in 0..n {
            let s = enc_out.sample(i);
            let dzs = dzt.sample(i);
            let d = denc.sample_mut(i);
            for j in 0..dz {
                let k = i * dz + j;
                d[j] = dzs[j] + (weights.kl * s[j] as f64) as f32;
                let raw = s[dz + j];
                if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw) {
                    let sg = sigma[k] as f64;
                    d[dz + j] = dzs[j] * eps[k] * sigma[k] + (weights.kl * (sg * sg - 1.0)) as f32;
                }
            }
        }
        self.encoder.backward(p, &enc_caches, denc, Some(&mut grads), false);
        Ok((breakdown, Some(grads)))
    }

    /// Mean posterior code of every image, then decoded with its own edges.
    pub fn reconstruct(&self, images: &[&Image]) -> Result<Vec<Image>> {
        let post = self.encode_batch(images)?;
        let edges: Vec<EdgeMap> = images.iter().map(|i| sobel_edges(i)).collect();
        let zs: Vec<&[f32]> = post.iter().map(|p| p.mu.as_slice()).collect();
        self.decode_batch(&zs, &edges.iter().collect::<Vec<_>>())
    }

    /// Stores the parameters with the architecture and, when given, the
    /// training settings that produced them.
    pub fn save(&self, path: &Path, training: Option<&VaeHyper>) -> Result<()> {
        let desc = VaeDescriptor {
            arch: self.arch.clone(),
            training: training.cloned(),
        };
        checkpoint::save(path, &self.params, &desc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::load_with_descriptor(path)?.0)
    }

    pub fn load_with_descriptor(path: &Path) -> Result<(Self, VaeDescriptor)> {
        let (model, desc) = checkpoint::load(path, |desc: VaeDescriptor| {
            let model = VaeModel::new(desc.arch.clone(), 0)?;
            let params = model.params.clone();
            Ok(((model, desc), params))
        })?;
        Ok((model, desc))
    }
}

/// Checkpoint metadata of a VAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeDescriptor {
    pub arch: VaeArch,
    pub training: Option<VaeHyper>,
}

impl HasParams for (VaeModel, VaeDescriptor) {
    fn set_params(&mut self, params: Params) {
        self.0.set_params(params);
    }
}

pub fn reparameterize(p: &PosteriorParams, noise_seed: u64) -> LatentCode {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    LatentCode(
        p.mu
            .iter()
            .zip(&p.sigma)
            .map(|(m, s)| {
                let e: f32 = StandardNormal.sample(&mut rng);
                m + s * e
            })
            .collect(),
    )
}

/// Unweighted loss terms of a batch, summed over its images.
pub fn vae_losses(m: &VaeModel, batch: &[&Image], perceptual: &SourceClassifier, seed: u64) -> Result<VaeLossBreakdown> {
    Ok(m.loss_grad(batch, Some(perceptual), &LossWeights::default(), seed, false)?.0)
}

/// RMSprop training on source images; labels are ignored. Pass `None` as
/// the classifier to drop the perceptual term. Returns the final model and
/// the per-epoch mean loss terms per image.
pub fn train_vae(
    source: &LabeledDataset,
    perceptual: Option<&SourceClassifier>,
    arch: VaeArch,
    hyper: &VaeHyper,
) -> Result<(VaeModel, Vec<VaeEpoch>)> {
    if source.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = VaeModel::new(arch, hyper.seed)?;
    let mut opt = RmsProp::new(model.params.len(), hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x7ae);
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut last = VaeLossBreakdown::default();
    let mut step = 0u64;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let images: Vec<&Image> = batch.iter().map(|i| &source.items[*i].0).collect();
            let noise_seed = hyper.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step);
            step += 1;
            let (b, grads) = match model.loss_grad(&images, perceptual, &hyper.weights, noise_seed, true) {
                Ok(r) => r,
                Err(Error::NonFinite { term }) => {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite {term}; last finite breakdown {last:?}"),
                    })
                }
                Err(e) => return Err(e),
            };
            let grads = grads.expect("gradient requested");
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("non-finite gradient; last finite breakdown {last:?}"),
                });
            }
            let enc = 0..model.encoder_len;
            let dec = model.encoder_len..model.params.len();
            opt.step_range(&mut model.params.data, &grads, enc);
            opt.step_range(&mut model.params.data, &grads, dec);
            sums[0] += b.l_r;
            sums[1] += b.l_p;
            sums[2] += b.kl;
            last = b;
        }
        let n = source.len() as f64;
        let entry = VaeEpoch {
            epoch,
            l_r: sums[0] / n,
            l_p: sums[1] / n,
            kl: sums[2] / n,
        };
        log::info!("vae epoch {epoch}: l_r {:.3} l_p {:.3} kl {:.3}", entry.l_r, entry.l_p, entry.kl);
        log.push(entry);
    }
    Ok((model, log))
}

/// Writes the per-epoch log as CSV with columns epoch, l_r, l_p, kl.
pub fn write_log(path: &Path, log: &[VaeEpoch]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perceptual::ClassifierArch;

    pub(crate) fn tiny_arch() -> VaeArch {
        VaeArch {
            resolution: 32,
            channels: 3,
            latent_dim: 4,
            conv_width: 4,
            fc_width: 8,
            refine_width: 4,
            edges: true,
        }
    }

    fn tiny_classifier() -> SourceClassifier {
        let mut arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into()]);
        arch.widths = vec![4, 4, 4, 4];
        SourceClassifier::new(arch, 5).unwrap()
    }

    fn images(n: usize, seed: u64) -> Vec<Image> {
        crate::data::corpus::generate(&Default::default(), n.div_ceil(5), seed, "s")
            .unwrap()
            .items
            .into_iter()
            .take(n)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn encoder_outputs_latent_dim_and_sane_sigma() {
        let m = VaeModel::new(VaeArch::desk(32, 3), 1).unwrap();
        let imgs = images(3, 1);
        for img in &imgs {
            let p = m.encode(img).unwrap();
            assert_eq!(p.mu.len(), 64);
            assert_eq!(p.sigma.len(), 64);
            assert!(p.sigma.iter().all(|s| *s > 0.1 && *s < 10.0));
            assert_eq!(p, m.encode(img).unwrap());
        }
    }

    #[test]
    fn decode_range_shape_and_determinism() {
        let m = VaeModel::new(VaeArch::desk(32, 3), 2).unwrap();
        let img = &images(1, 2)[0];
        let e = sobel_edges(img);
        let z = LatentCode((0..64).map(|i| (i as f32 * 0.37).sin() * 3.0).collect());
        let out = m.decode(&z, &e).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(out, m.decode(&z, &e).unwrap());
        assert!(m.decode(&LatentCode(vec![0.0; 3]), &e).is_err());
    }

    #[test]
    fn full_scale_concat_has_nine_channels() {
        let arch = VaeArch::full(3);
        assert_eq!(arch.refine_input_chw(), [9, 128, 128]);
        let m = VaeModel::new(arch, 0).unwrap();
        let img = Image::constant(128, 128, 3, 0.1).unwrap();
        let out = m.decode(&LatentCode(vec![0.5; 64]), &sobel_edges(&img)).unwrap();
        assert_eq!(out.shape(), (128, 128, 3));
    }

    #[test]
    fn resolution_must_halve_to_four() {
        for r in [32, 64, 128] {
            assert!(VaeArch::desk(r, 3).validate().is_ok());
        }
        for r in [0, 48, 96] {
            assert!(VaeArch::desk(r, 3).validate().is_err());
        }
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(kl_closed_form(0.0, 1.0), 0.0);
        assert!((kl_closed_form(1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_statistics() {
        let p = PosteriorParams {
            mu: vec![0.3, -1.0],
            sigma: vec![2.0, 0.5],
        };
        assert_eq!(reparameterize(&p, 4), reparameterize(&p, 4));
        let n = 100_000;
        let mut mean = [0.0f64; 2];
        for s in 0..n {
            let z = reparameterize(&p, s);
            mean[0] += z.0[0] as f64 / n as f64;
            mean[1] += z.0[1] as f64 / n as f64;
        }
        for j in 0..2 {
            let se = p.sigma[j] as f64 / (n as f64).sqrt();
            assert!((mean[j] - p.mu[j] as f64).abs() < 3.0 * se, "{mean:?}");
        }
        let tight = PosteriorParams {
            mu: vec![0.7],
            sigma: vec![LOG_SIGMA_MIN.exp()],
        };
        assert!((reparameterize(&tight, 1).0[0] - 0.7).abs() < 0.02);
    }

    #[test]
    fn breakdown_totals_differ_by_kl() {
        let m = VaeModel::new(tiny_arch(), 3).unwrap();
        let imgs = images(4, 3);
        let refs: Vec<&Image> = imgs.iter().collect();
        let b = vae_losses(&m, &refs, &tiny_classifier(), 9).unwrap();
        assert!(b.l_r > 0.0 && b.l_p >= 0.0 && b.kl >= 0.0);
        assert!((b.total_encoder - b.total_decoder - b.kl).abs() <= 1e-12 * b.total_encoder);
        assert_eq!(b, vae_losses(&m, &refs, &tiny_classifier(), 9).unwrap());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = VaeModel::new(tiny_arch(), 4).unwrap();
        let clf = tiny_classifier();
        let imgs = images(2, 4);
        let refs: Vec<&Image> = imgs.iter().collect();
        let w = LossWeights::default();
        let (_, g) = m.loss_grad(&refs, Some(&clf), &w, 17, true).unwrap();
        let g = g.unwrap();
        let h = 1e-2f32;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for spec in m.params.specs() {
            for k in (0..spec.len()).step_by((spec.len() / 3).max(1)) {
                let idx = spec.offset + k;
                let mut mp = m.clone();
                mp.params.data[idx] += h;
                let mut mm = m.clone();
                mm.params.data[idx] -= h;
                let fp = mp.loss_grad(&refs, Some(&clf), &w, 17, false).unwrap().0.total_encoder;
                let fm = mm.loss_grad(&refs, Some(&clf), &w, 17, false).unwrap().0.total_encoder;
                let fd = (fp - fm) / (2.0 * h as f64);
                num += (fd - g[idx] as f64).powi(2);
                den += fd.powi(2);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-2, "relative gradient error {rel}");
    }

    #[test]
    fn zero_epochs_return_the_initial_model() {
        let ds = crate::data::corpus::generate(&Default::default(), 2, 1, "s").unwrap();
        let hyper = VaeHyper {
            epochs: 0,
            seed: 6,
            ..VaeHyper::default()
        };
        let (m, log) = train_vae(&ds, None, tiny_arch(), &hyper).unwrap();
        assert!(log.is_empty());
        assert_eq!(m, VaeModel::new(tiny_arch(), 6).unwrap());
    }

    #[test]
    fn training_reduces_loss_and_checkpoints_round_trip() {
        let ds = crate::data::corpus::generate(&Default::default(), 8, 1, "s").unwrap();
        let hyper = VaeHyper {
            epochs: 5,
            batch_size: 8,
            lr: 1e-3,
            seed: 2,
            ..VaeHyper::default()
        };
        let (m, log) = train_vae(&ds, Some(&tiny_classifier()), tiny_arch(), &hyper).unwrap();
        let total = |e: &VaeEpoch| e.l_r + e.l_p + e.kl;
        assert!(total(&log[4]) < total(&log[0]));
        let dir = tempfile::tempdir().unwrap();
        m.save(&dir.path().join("vae.ckpt"), Some(&hyper)).unwrap();
        assert_eq!(VaeModel::load_with_descriptor(&dir.path().join("vae.ckpt")).unwrap().1.training, Some(hyper.clone()));
        assert_eq!(VaeModel::load(&dir.path().join("vae.ckpt")).unwrap(), m);
        write_log(&dir.path().join("log.csv"), &log).unwrap();
        let text = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert!(text.starts_with("epoch,l_r,l_p,kl\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
