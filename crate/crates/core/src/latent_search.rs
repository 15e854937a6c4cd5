//! Closest-clone search: gradient descent over the latent code of a frozen
//! decoder, then classification of the clone.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Image, LabeledDataset};
use crate::edge::sobel_edges;
use crate::error::{Error, Result};
use crate::nn::optim::Nesterov;
use crate::nn::Tensor;
use crate::perceptual::SourceClassifier;
use crate::ssim::{loss_planar, LossKind, Planar, SsimConfig};
use crate::vae::{DecodeCache, LatentCode, VaeModel};

/// Where the search starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchInit {
    /// A draw from N(0, I).
    #[default]
    Prior,
    /// The encoder's posterior mean of the target.
    Encoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub loss_kind: LossKind,
    pub init_seed: u64,
    /// Stop once consecutive losses differ by less than this; 0 runs all
    /// iterations.
    pub convergence_tol: f64,
    pub restarts: usize,
    pub init: SearchInit,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 600,
            step_size: 0.05,
            momentum: 0.5,
            loss_kind: LossKind::Ssim,
            init_seed: 0,
            convergence_tol: 0.0,
            restarts: 1,
            init: SearchInit::Prior,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Invalid("search iterations must be at least 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Invalid(format!("step size {} must be finite and >= 0", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.restarts == 0 || !(self.convergence_tol >= 0.0) {
            return Err(Error::Invalid("restarts must be >= 1 and convergence_tol >= 0".into()));
        }
        Ok(())
    }
}

/// A differentiable map from latent codes to channel-major images.
pub trait Generator {
    type State;

    fn latent_dim(&self) -> usize;

    /// Output `(height, width, channels)`.
    fn output_shape(&self) -> (usize, usize, usize);

    fn forward(&self, z: &[f32]) -> Result<(Vec<f32>, Self::State)>;

    /// Vector-Jacobian product with the output gradient.
    fn backward(&self, state: Self::State, dy: &[f32]) -> Vec<f32>;
}

/// The VAE decoder with a fixed conditioning edge map.
pub struct ConditionedDecoder<'a> {
    model: &'a VaeModel,
    edges: Option<Tensor>,
}

impl<'a> ConditionedDecoder<'a> {
    pub fn new(model: &'a VaeModel, condition: &Image) -> Result<Self> {
        let e = sobel_edges(condition);
        Ok(ConditionedDecoder {
            model,
            edges: model.edge_input(&[&e])?,
        })
    }
}

impl Generator for ConditionedDecoder<'_> {
    type State = DecodeCache;

    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn output_shape(&self) -> (usize, usize, usize) {
        self.model.image_shape()
    }

    fn forward(&self, z: &[f32]) -> Result<(Vec<f32>, DecodeCache)> {
        let zt = self.model.latent_tensor(&[z])?;
        let (y, cache) = self.model.decode_tensor(zt, self.edges.as_ref(), true)?;
        Ok((y.into_data(), cache.expect("cached decode")))
    }

    fn backward(&self, state: DecodeCache, dy: &[f32]) -> Vec<f32> {
        let (h, w, c) = self.output_shape();
        let dy = Tensor::from_vec([1, c, h, w], dy.to_vec()).expect("output-shaped gradient");
        self.model.decode_backward(&state, dy, None).into_data()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub z: LatentCode,
    /// Channel-major generator output at `z`.
    pub output: Vec<f32>,
    /// Loss at every evaluated iterate of the winning run.
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

impl SearchOutcome {
    pub fn iterations_used(&self) -> usize {
        self.loss_trace.len()
    }
}

const RETRIES_PER_RUN: u64 = 3;

enum RunEnd {
    Finished(SearchOutcome),
    NonFinite,
}

fn run_once<G: Generator>(
    g: &G,
    target: &[f64],
    z0: Vec<f64>,
    cfg: &SearchConfig,
    ssim: &SsimConfig,
) -> Result<RunEnd> {
    let (h, w, c) = g.output_shape();
    let mut z = z0;
    let mut opt = Nesterov::new(z.len(), cfg.step_size, cfg.momentum);
    let mut best: Option<(f64, Vec<f32>, Vec<f32>)> = None;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let zf: Vec<f32> = z.iter().map(|v| *v as f32).collect();
        let (y, state) = g.forward(&zf)?;
        let y64: Vec<f64> = y.iter().map(|v| *v as f64).collect();
        let last = it + 1 == cfg.iterations;
        let (loss, grad) = loss_planar(
            Planar::new(target, h, w, c),
            Planar::new(&y64, h, w, c),
            cfg.loss_kind,
            ssim,
            !last,
        )?;
        if !loss.is_finite() {
            return Ok(RunEnd::NonFinite);
        }
        let prev = trace.last().copied();
        trace.push(loss);
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, zf, y));
        }
        if last || prev.is_some_and(|p: f64| cfg.convergence_tol > 0.0 && (p - loss).abs() < cfg.convergence_tol) {
            break;
        }
        let dy: Vec<f32> = grad.expect("gradient requested").iter().map(|v| *v as f32).collect();
        let dz: Vec<f64> = g.backward(state, &dy).iter().map(|v| *v as f64).collect();
        if dz.iter().any(|v| !v.is_finite()) {
            return Ok(RunEnd::NonFinite);
        }
        opt.step(&mut z, &dz);
    }
    let (final_loss, zf, output) = best.expect("at least one iteration");
    Ok(RunEnd::Finished(SearchOutcome {
        z: LatentCode(zf),
        output,
        loss_trace: trace,
        final_loss,
    }))
}

/// Nesterov descent on `loss(target, g(z))` from `restarts` starting
/// points; returns the lowest-loss iterate seen. `init` supplies a fixed
/// start, otherwise starts are drawn from N(0, I) seeded by `seed`.
pub fn search<G: Generator>(
    g: &G,
    target: &[f32],
    init: Option<&[f32]>,
    seed: u64,
    cfg: &SearchConfig,
    ssim: &SsimConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let (h, w, c) = g.output_shape();
    if target.len() != h * w * c {
        return Err(Error::shape(h * w * c, target.len()));
    }
    let dz = g.latent_dim();
    if let Some(z) = init {
        if z.len() != dz {
            return Err(Error::shape(format!("latent of dim {dz}"), format!("dim {}", z.len())));
        }
    }
    let target: Vec<f64> = target.iter().map(|v| *v as f64).collect();
    let mut best: Option<SearchOutcome> = None;
    for run in 0..cfg.restarts as u64 {
        for attempt in 0..RETRIES_PER_RUN {
            let stream = run * RETRIES_PER_RUN + attempt;
            let z0: Vec<f64> = match init {
                Some(z) if stream == 0 => z.iter().map(|v| *v as f64).collect(),
                _ => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stream);
                    (0..dz).map(|_| StandardNormal.sample(&mut rng)).collect()
                }
            };
            match run_once(g, &target, z0, cfg, ssim)? {
                RunEnd::Finished(out) => {
                    if best.as_ref().is_none_or(|b| out.final_loss < b.final_loss) {
                        best = Some(out);
                    }
                    break;
                }
                RunEnd::NonFinite => log::warn!("non-finite search loss (run {run}, attempt {attempt}); restarting"),
            }
        }
    }
    best.ok_or_else(|| Error::NonFinite {
        term: "search loss in every restart".into(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationResult {
    pub image_id: usize,
    pub true_class: usize,
    pub source_only_pred: usize,
    pub target: Image,
    pub clone: Image,
    pub z_final: LatentCode,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub predicted_class: usize,
    pub class_probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationReport {
    pub results: Vec<AdaptationResult>,
    /// Images whose search failed, with the reason.
    pub failures: Vec<(usize, String)>,
    pub source_only_accuracy: f64,
    pub adapted_accuracy: f64,
}

/// Searches the closest clone of one image. The decoder is conditioned on
/// the target's own edges and initialised per [`SearchConfig::init`].
pub fn latent_search(m: &VaeModel, target: &Image, seed: u64, cfg: &SearchConfig, ssim: &SsimConfig) -> Result<(SearchOutcome, Image)> {
    let g = ConditionedDecoder::new(m, target)?;
    let init = match cfg.init {
        SearchInit::Prior => None,
        SearchInit::Encoder => Some(m.encode(target)?.mu),
    };
    let out = search(&g, &target.to_chw(), init.as_deref(), seed, cfg, ssim)?;
    let (h, w, c) = target.shape();
    let clone = Image::from_chw(h, w, c, &out.output)?;
    Ok((out, clone))
}

pub fn image_seed(base: u64, image_id: usize) -> u64 {
    base.wrapping_add((image_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Replaces each target by its closest clone before classifying it. Labels
/// only enter the accuracy. `jobs` caps the worker threads (0 = all).
pub fn adapt_and_classify(
    m: &VaeModel,
    clf: &SourceClassifier,
    targets: &LabeledDataset,
    cfg: &SearchConfig,
    ssim: &SsimConfig,
    jobs: usize,
) -> Result<AdaptationReport> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::Invalid("no target images".into()));
    }
    let images: Vec<&Image> = targets.images().collect();
    let direct = clf.predict_batch(&images)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let searched: Vec<Result<(SearchOutcome, Image)>> = pool.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| latent_search(m, img, image_seed(cfg.init_seed, i), cfg, ssim))
            .collect()
    });
    let mut results = Vec::with_capacity(images.len());
    let mut failures = Vec::new();
    for (i, r) in searched.into_iter().enumerate() {
        match r {
            Ok((out, clone)) => {
                let (pred, probs) = clf.predict(&clone)?;
                results.push(AdaptationResult {
                    image_id: i,
                    true_class: targets.items[i].1,
                    source_only_pred: direct[i].0,
                    target: images[i].clone(),
                    clone,
                    z_final: out.z,
                    final_loss: out.final_loss,
                    loss_trace: out.loss_trace,
                    predicted_class: pred,
                    class_probabilities: probs,
                });
            }
            Err(e) => {
                log::warn!("search failed for image {i}: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if results.is_empty() {
        return Err(Error::Invalid("latent search failed for every target".into()));
    }
    let hits = |f: fn(&AdaptationResult) -> usize| results.iter().filter(|r| f(r) == r.true_class).count() as f64 / results.len() as f64;
    Ok(AdaptationReport {
        source_only_accuracy: hits(|r| r.source_only_pred),
        adapted_accuracy: hits(|r| r.predicted_class),
        results,
        failures,
    })
}

#[derive(Serialize)]
struct ReportRow {
    image_id: usize,
    true_class: usize,
    source_only_pred: usize,
    adapted_pred: usize,
    final_loss: f64,
    iterations_used: usize,
}

impl AdaptationReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.results {
            w.serialize(ReportRow {
                image_id: r.image_id,
                true_class: r.true_class,
                source_only_pred: r.source_only_pred,
                adapted_pred: r.predicted_class,
                final_loss: r.final_loss,
                iterations_used: r.loss_trace.len(),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `<id>_target.png` and `<id>_clone.png` for every result.
    pub fn dump_clones(&self, dir: &Path) -> Result<()> {
        for r in &self.results {
            r.target.save_png(&dir.join(format!("{:05}_target.png", r.image_id)))?;
            r.clone.save_png(&dir.join(format!("{:05}_clone.png", r.image_id)))?;
        }
        Ok(())
    }

    pub fn mean_final_loss(&self) -> f64 {
        self.results.iter().map(|r| r.final_loss).sum::<f64>() / self.results.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeArch;

    /// g(z) = z laid out as a 1x2 single-channel image.
    struct Identity;

    impl Generator for Identity {
        type State = ();

        fn latent_dim(&self) -> usize {
            2
        }

        fn output_shape(&self) -> (usize, usize, usize) {
            (1, 2, 1)
        }

        fn forward(&self, z: &[f32]) -> Result<(Vec<f32>, ())> {
            Ok((z.to_vec(), ()))
        }

        fn backward(&self, _: (), dy: &[f32]) -> Vec<f32> {
            dy.to_vec()
        }
    }

    #[test]
    fn identity_decoder_recovers_target_with_mse() {
        let cfg = SearchConfig {
            loss_kind: LossKind::Mse,
            ..SearchConfig::default()
        };
        for (seed, target) in [(0, [0.3f32, -0.7]), (5, [-0.95, 0.05]), (9, [0.0, 0.9])] {
            let out = search(&Identity, &target, None, seed, &cfg, &SsimConfig::default()).unwrap();
            let err = out.z.0.iter().zip(target).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-3, "{err}");
            assert!(out.loss_trace.len() <= 600);
        }
    }

    #[test]
    fn trace_minimum_is_returned() {
        let m = VaeModel::new(VaeArch::desk(32, 3), 0).unwrap();
        let target = crate::data::corpus::generate(&Default::default(), 1, 3, "s").unwrap().items[0].0.clone();
        let cfg = SearchConfig {
            iterations: 30,
            ..SearchConfig::default()
        };
        let (out, clone) = latent_search(&m, &target, 4, &cfg, &SsimConfig::default()).unwrap();
        assert_eq!(out.loss_trace.len(), 30);
        let min = out.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.final_loss, min);
        assert!(out.final_loss <= out.loss_trace[..10].iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(clone, m.decode(&out.z, &sobel_edges(&target)).unwrap());
    }

    #[test]
    fn zero_step_keeps_initial_code() {
        let m = VaeModel::new(VaeArch::desk(32, 3), 0).unwrap();
        let target = crate::data::corpus::generate(&Default::default(), 1, 3, "s").unwrap().items[1].0.clone();
        let cfg = SearchConfig {
            iterations: 1,
            step_size: 0.0,
            ..SearchConfig::default()
        };
        let (out, clone) = latent_search(&m, &target, 8, &cfg, &SsimConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        rng.set_stream(0);
        let z0: Vec<f32> = (0..64).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v as f32).collect();
        assert_eq!(out.z.0, z0);
        assert_eq!(clone, m.decode(&LatentCode(z0), &sobel_edges(&target)).unwrap());
    }

    #[test]
    fn decoder_is_untouched_and_results_repeat() {
        let m = VaeModel::new(VaeArch::desk(32, 3), 1).unwrap();
        let before = m.decoder_params().to_vec();
        let ds = crate::data::corpus::generate(&Default::default(), 1, 3, "s").unwrap();
        let mut arch = crate::perceptual::ClassifierArch::desk(32, 3, ds.class_names.clone());
        arch.widths = vec![4, 4, 4, 4];
        let clf = SourceClassifier::new(arch, 0).unwrap();
        let cfg = SearchConfig {
            iterations: 5,
            ..SearchConfig::default()
        };
        let a = adapt_and_classify(&m, &clf, &ds, &cfg, &SsimConfig::default(), 1).unwrap();
        assert_eq!(m.decoder_params(), before.as_slice());
        let b = adapt_and_classify(&m, &clf, &ds, &cfg, &SsimConfig::default(), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.results.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        a.write_csv(&dir.path().join("r.csv")).unwrap();
        let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("image_id,true_class,source_only_pred,adapted_pred,final_loss,iterations_used\n"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SearchConfig {
                iterations: 0,
                ..SearchConfig::default()
            },
            SearchConfig {
                momentum: 1.0,
                ..SearchConfig::default()
            },
            SearchConfig {
                step_size: -0.1,
                ..SearchConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
