//! Source-domain classifier, also used as the frozen perceptual feature
//! extractor for VAE training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, HasParams};
use crate::data::{Image, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::optim::Adam;
use crate::nn::{Cache, Conv2d, Dense, Layer, Params, Sequential, Tensor};

/// Conv-block classifier description; enough to rebuild the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub resolution: usize,
    pub channels: usize,
    /// Output width of each conv block; block 0 keeps resolution, later
    /// blocks halve it.
    pub widths: Vec<usize>,
    pub num_classes: usize,
    /// Index into [`ClassifierArch::layer_names`] whose output is the
    /// perceptual feature map.
    pub feature_layer_index: usize,
    pub class_names: Vec<String>,
}

impl ClassifierArch {
    /// Four conv blocks; features from the penultimate block's activation.
    pub fn desk(resolution: usize, channels: usize, class_names: Vec<String>) -> Self {
        ClassifierArch {
            resolution,
            channels,
            widths: vec![16, 32, 64, 64],
            num_classes: class_names.len(),
            feature_layer_index: 5,
            class_names,
        }
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.widths.len() {
            names.push(format!("block{}.conv", b + 1));
            names.push(format!("block{}.act", b + 1));
        }
        names.push("pool".into());
        names.push("head".into());
        names
    }

    fn build(&self, seed: u64) -> Result<(Sequential, Params)> {
        if self.widths.is_empty() || self.num_classes < 2 {
            return Err(Error::Invalid(format!("degenerate classifier arch {self:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut layers = Vec::new();
        let mut cin = self.channels;
        for (b, &w) in self.widths.iter().enumerate() {
            let stride = if b == 0 { 1 } else { 2 };
            layers.push(Layer::Conv(Conv2d::new(&mut params, &format!("block{}.conv", b + 1), cin, w, 3, stride, 1, &mut rng)));
            layers.push(Layer::LeakyRelu(0.2));
            cin = w;
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Dense(Dense::new(&mut params, "head", cin, self.num_classes, 1.0, &mut rng)));
        let net = Sequential::new(layers);
        let spatial = self.feature_layer_index < net.layers.len() && {
            let chw = Sequential::new(net.layers[..=self.feature_layer_index].to_vec())
                .out_chw([self.channels, self.resolution, self.resolution]);
            chw[1] > 1 && chw[2] > 1
        };
        if !spatial {
            return Err(Error::Invalid(format!(
                "feature layer {} is not a spatial activation of {:?}",
                self.feature_layer_index,
                self.layer_names()
            )));
        }
        Ok((net, params))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Set from the experiment seed rather than the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            epochs: 25,
            batch_size: 32,
            lr: 1e-3,
            patience: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceClassifier {
    arch: ClassifierArch,
    net: Sequential,
    params: Params,
}

impl HasParams for SourceClassifier {
    fn set_params(&mut self, params: Params) {
        self.params = params;
    }
}

/// Stacks images into an NCHW batch.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (h, w, c) = first.shape();
    let chw: Vec<Vec<f32>> = images
        .iter()
        .map(|i| {
            if i.shape() != (h, w, c) {
                Err(Error::shape(format!("{:?}", (h, w, c)), format!("{:?}", i.shape())))
            } else {
                Ok(i.to_chw())
            }
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f32]> = chw.iter().map(|v| v.as_slice()).collect();
    Tensor::stack(&refs, [c, h, w])
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
    let exps: Vec<f64> = logits.iter().map(|v| (*v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) })
        .0
}

impl SourceClassifier {
    pub fn new(arch: ClassifierArch, seed: u64) -> Result<Self> {
        let (net, params) = arch.build(seed)?;
        Ok(SourceClassifier { arch, net, params })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Flattened size of the perceptual feature layer.
    pub fn feature_dim(&self) -> usize {
        let chw = self.feature_chw();
        chw[0] * chw[1] * chw[2]
    }

    pub fn feature_chw(&self) -> [usize; 3] {
        Sequential::new(self.net.layers[..=self.arch.feature_layer_index].to_vec())
            .out_chw([self.arch.channels, self.arch.resolution, self.arch.resolution])
    }

    /// Size of the pooled embedding feeding the classification head.
    pub fn embedding_dim(&self) -> usize {
        *self.arch.widths.last().expect("non-empty widths")
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let want = (self.arch.resolution, self.arch.resolution, self.arch.channels);
        if img.shape() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", img.shape())));
        }
        Ok(())
    }

    fn head_index(&self) -> usize {
        self.net.layers.len()
    }

    pub fn logits(&self, x: Tensor) -> Result<Tensor> {
        self.net.forward(&self.params.data, x)
    }

    /// Class id and class probabilities.
    pub fn predict(&self, img: &Image) -> Result<(usize, Vec<f64>)> {
        Ok(self.predict_batch(&[img])?.remove(0))
    }

    pub fn predict_batch(&self, images: &[&Image]) -> Result<Vec<(usize, Vec<f64>)>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            self.check_image(img)?;
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let logits = self.logits(batch_tensor(chunk)?)?;
            for i in 0..chunk.len() {
                let p = softmax(logits.sample(i));
                out.push((argmax(&p), p));
            }
        }
        Ok(out)
    }

    /// Flattened activations of the feature layer.
    pub fn features(&self, img: &Image) -> Result<Vec<f32>> {
        self.check_image(img)?;
        let t = self.features_tensor(batch_tensor(&[img])?)?;
        Ok(t.into_data())
    }

    pub fn features_tensor(&self, x: Tensor) -> Result<Tensor> {
        self.net.forward_prefix(&self.params.data, x, self.arch.feature_layer_index + 1)
    }

    /// Pooled pre-head embedding of each image.
    pub fn embeddings(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            for img in chunk {
                self.check_image(img)?;
            }
            let t = self.net.forward_prefix(&self.params.data, batch_tensor(chunk)?, self.head_index() - 1)?;
            out.extend((0..chunk.len()).map(|i| t.sample(i).to_vec()));
        }
        Ok(out)
    }

    /// Feature forward pass keeping the state for [`Self::features_backward`].
    pub fn features_cached(&self, x: Tensor) -> Result<(Tensor, Vec<Cache>)> {
        self.net.forward_prefix_cached(&self.params.data, x, self.arch.feature_layer_index + 1)
    }

    /// Input gradient of the feature map; the classifier stays frozen.
    pub fn features_backward(&self, caches: &[Cache], dfeat: Tensor) -> Tensor {
        self.net
            .backward(&self.params.data, caches, dfeat, None, true)
            .expect("input gradient requested")
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::Invalid("accuracy of an empty dataset".into()));
        }
        let images: Vec<&Image> = ds.images().collect();
        let preds = self.predict_batch(&images)?;
        let hits = preds.iter().zip(&ds.items).filter(|((p, _), (_, y))| p == y).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.arch)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, |arch: ClassifierArch| {
            let model = SourceClassifier::new(arch, 0)?;
            let params = model.params.clone();
            Ok((model, params))
        })
    }
}

/// Cross-entropy training with Adam; returns the checkpoint with the best
/// validation accuracy and the per-epoch log.
pub fn train_classifier(
    train: &LabeledDataset,
    val: &LabeledDataset,
    hyper: &ClassifierHyper,
) -> Result<(SourceClassifier, Vec<ClassifierEpoch>)> {
    if train.num_classes != val.num_classes {
        return Err(Error::Invalid(format!(
            "train has {} classes, val has {}",
            train.num_classes, val.num_classes
        )));
    }
    let present = train.class_counts().iter().filter(|c| **c > 0).count();
    if present < 2 {
        return Err(Error::Invalid("training labels cover fewer than 2 classes".into()));
    }
    if val.is_empty() {
        return Err(Error::Invalid("empty validation set".into()));
    }
    let (h, w, c) = train.image_shape().expect("non-empty train set");
    if h != w {
        return Err(Error::Invalid(format!("classifier expects square images, got {h}x{w}")));
    }
    let arch = ClassifierArch::desk(h, c, train.class_names.clone());
    let mut model = SourceClassifier::new(arch, hyper.seed)?;
    let mut opt = Adam::new(model.params.len(), hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut since_best = 0;
    let mut log = Vec::new();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let images: Vec<&Image> = batch.iter().map(|i| &train.items[*i].0).collect();
            let (logits, caches) = model.net.forward_cached(&model.params.data, batch_tensor(&images)?)?;
            let mut dlogits = Tensor::zeros(logits.shape());
            let scale = 1.0 / batch.len() as f64;
            for (j, idx) in batch.iter().enumerate() {
                let label = train.items[*idx].1;
                let p = softmax(logits.sample(j));
                loss_sum -= p[label].max(1e-300).ln();
                hits += (argmax(&p) == label) as usize;
                for (k, d) in dlogits.sample_mut(j).iter_mut().enumerate() {
                    *d = ((p[k] - (k == label) as u8 as f64) * scale) as f32;
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite cross-entropy".into(),
                });
            }
            let mut grads = model.params.zeros_like();
            model.net.backward(&model.params.data, &caches, dlogits, Some(&mut grads), false);
            opt.step(&mut model.params.data, &grads);
        }
        let val_accuracy = model.accuracy(val)?;
        let entry = ClassifierEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy,
        };
        log::info!(
            "classifier epoch {epoch}: loss {:.4} train acc {:.3} val acc {:.3}",
            entry.loss,
            entry.train_accuracy,
            val_accuracy
        );
        log.push(entry);
        if val_accuracy > best.0 {
            best = (val_accuracy, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two classes separated by mean brightness; trivially separable.
    fn blobs(n: usize, seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..2 * n)
            .map(|i| {
                let class = i % 2;
                let centre = if class == 0 { -0.5 } else { 0.5 };
                let px = (0..32 * 32 * 3).map(|_| centre + rng.random_range(-0.3..0.3)).collect();
                (Image::new(32, 32, 3, px).unwrap(), class)
            })
            .collect();
        LabeledDataset::new(items, vec!["dark".into(), "light".into()], "blobs").unwrap()
    }

    fn quick() -> ClassifierHyper {
        ClassifierHyper {
            epochs: 3,
            batch_size: 16,
            ..ClassifierHyper::default()
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (clf, log) = train_classifier(&blobs(40, 1), &blobs(20, 2), &quick()).unwrap();
        assert!(!log.is_empty());
        assert!(clf.accuracy(&blobs(20, 3)).unwrap() >= 0.99);
        // memorised training sample
        let train = blobs(40, 1);
        assert_eq!(clf.predict(&train.items[0].0).unwrap().0, train.items[0].1);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let mut ds = blobs(5, 1);
        ds.items.retain(|(_, c)| *c == 0);
        assert!(train_classifier(&ds, &blobs(5, 2), &quick()).is_err());
    }

    #[test]
    fn predictions_form_a_simplex_and_are_deterministic() {
        let arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into(), "c".into()]);
        let clf = SourceClassifier::new(arch, 3).unwrap();
        let img = blobs(1, 9).items[0].0.clone();
        let (k, p) = clf.predict(&img).unwrap();
        assert!(p.iter().all(|v| *v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(k, argmax(&p));
        assert_eq!(clf.predict(&img).unwrap(), (k, p));
    }

    #[test]
    fn feature_dimension_matches_descriptor() {
        let arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into()]);
        let clf = SourceClassifier::new(arch, 3).unwrap();
        let img = blobs(1, 9).items[0].0.clone();
        let f = clf.features(&img).unwrap();
        assert_eq!(f.len(), clf.feature_dim());
        assert_eq!(clf.feature_chw(), [64, 8, 8]);
        assert_eq!(f, clf.features(&img).unwrap());
        let wrong = Image::constant(64, 64, 3, 0.0).unwrap();
        assert!(clf.predict(&wrong).is_err());
    }

    #[test]
    fn invalid_feature_layer_is_rejected() {
        let mut arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into()]);
        arch.feature_layer_index = 9;
        assert!(SourceClassifier::new(arch.clone(), 0).is_err());
        arch.feature_layer_index = 42;
        assert!(SourceClassifier::new(arch, 0).is_err());
    }

    #[test]
    fn features_are_continuous() {
        let arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into()]);
        let clf = SourceClassifier::new(arch, 4).unwrap();
        let img = blobs(1, 5).items[0].0.clone();
        let base = clf.features(&img).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-1f32, 1e-2, 1e-3, 1e-4] {
            let moved = Image::from_clipped(32, 32, 3, img.pixels().iter().map(|v| v + delta).collect()).unwrap();
            let f = clf.features(&moved).unwrap();
            let dist = base.iter().zip(&f).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
            assert!(dist < prev, "feature distance must shrink with the perturbation");
            prev = dist;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ClassifierArch::desk(32, 3, vec!["a".into(), "b".into()]);
        let clf = SourceClassifier::new(arch, 11).unwrap();
        let path = dir.path().join("classifier.ckpt");
        clf.save(&path).unwrap();
        let back = SourceClassifier::load(&path).unwrap();
        assert_eq!(back, clf);
        assert!(matches!(
            SourceClassifier::load(&dir.path().join("missing.ckpt")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
