//! Evaluation metrics: proxy A-distance, Fréchet distance between feature
//! sets, latent embedding export and the nearest-neighbour convergence demo.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Image, LabeledDataset};
use crate::error::{Error, Result};
use crate::latent_search::{latent_search, SearchConfig};
use crate::ssim::SsimConfig;
use crate::vae::VaeModel;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    vectors: Vec<Vec<f64>>,
    pub domain_tag: String,
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, domain_tag: impl Into<String>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).ok_or_else(|| Error::Invalid("empty feature set".into()))?;
        if dim == 0 {
            return Err(Error::Invalid("zero-dimensional features".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::shape(dim, bad.len()));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { term: "feature vector".into() });
        }
        Ok(FeatureSet {
            vectors,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn from_f32(vectors: &[Vec<f32>], domain_tag: impl Into<String>) -> Result<Self> {
        Self::new(vectors.iter().map(|v| v.iter().map(|x| *x as f64).collect()).collect(), domain_tag)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// `2 (1 - 2 err)` with the error clamped to `[0, 0.5]`.
pub fn a_distance_from_error(err: f64) -> f64 {
    2.0 * (1.0 - 2.0 * err.clamp(0.0, 0.5))
}

const SVM_LAMBDA: f64 = 1e-3;
const SVM_STEPS: usize = 300;

/// L2-regularised squared-hinge linear classifier fitted by gradient
/// descent; returns weights with the bias last.
fn fit_linear(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = x[0].len() + 1;
    let n = x.len() as f64;
    let mean_sq = x.iter().map(|v| 1.0 + v.iter().map(|a| a * a).sum::<f64>()).sum::<f64>() / n;
    let step = 1.0 / (2.0 * mean_sq + 2.0 * SVM_LAMBDA);
    let mut w = vec![0.0; d];
    let mut g = vec![0.0; d];
    for _ in 0..SVM_STEPS {
        g.iter_mut().zip(&w).for_each(|(gi, wi)| *gi = 2.0 * SVM_LAMBDA * wi);
        g[d - 1] = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let margin = yi * (score(&w, xi));
            if margin < 1.0 {
                let c = -2.0 * (1.0 - margin) * yi / n;
                for (gj, xj) in g.iter_mut().zip(xi) {
                    *gj += c * xj;
                }
                g[d - 1] += c;
            }
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= step * gi);
    }
    w
}

fn score(w: &[f64], x: &[f64]) -> f64 {
    w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
}

/// Per-coordinate standardisation fitted on `train`.
fn standardiser(train: &[&Vec<f64>]) -> impl Fn(&[f64]) -> Vec<f64> {
    let d = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for v in train {
        mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x / n);
    }
    let mut sd = vec![0.0; d];
    for v in train {
        sd.iter_mut().zip(v.iter().zip(&mean)).for_each(|(s, (x, m))| *s += (x - m).powi(2) / n);
    }
    let sd: Vec<f64> = sd.into_iter().map(|s| if s > 1e-12 { s.sqrt() } else { 1.0 }).collect();
    move |v: &[f64]| v.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect()
}

/// Proxy A-distance: cross-validated error of a linear max-margin
/// discriminator between the two sets.
pub fn a_distance(a: &FeatureSet, b: &FeatureSet, folds: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    if folds < 2 || a.len() < 2 * folds || b.len() < 2 * folds {
        return Err(Error::Invalid(format!(
            "{folds}-fold A-distance needs folds >= 2 and at least {} samples per set",
            2 * folds
        )));
    }
    // Stratified fold assignment after a fixed shuffle.
    let mut rng = ChaCha8Rng::seed_from_u64(0xad);
    let mut samples: Vec<(&Vec<f64>, f64, usize)> = Vec::with_capacity(a.len() + b.len());
    for (set, label) in [(a, 1.0), (b, -1.0)] {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut rng);
        samples.extend(idx.into_iter().enumerate().map(|(k, i)| (&set.vectors[i], label, k % folds)));
    }
    let mut wrong = 0usize;
    for f in 0..folds {
        let train: Vec<_> = samples.iter().filter(|s| s.2 != f).collect();
        let norm = standardiser(&train.iter().map(|s| s.0).collect::<Vec<_>>());
        let x: Vec<Vec<f64>> = train.iter().map(|s| norm(s.0)).collect();
        let y: Vec<f64> = train.iter().map(|s| s.1).collect();
        let w = fit_linear(&x, &y);
        wrong += samples
            .iter()
            .filter(|s| s.2 == f)
            .filter(|s| (score(&w, &norm(s.0)) >= 0.0) != (s.1 > 0.0))
            .count();
    }
    Ok(a_distance_from_error(wrong as f64 / samples.len() as f64))
}

fn moments(set: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let d = set.dim();
    let n = set.len() as f64;
    let mut mean = DVector::zeros(d);
    for v in &set.vectors {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in &set.vectors {
        let c = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})` between Gaussian
/// fits of the two sets.
pub fn frechet_feature_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    let d = a.dim();
    if a.len() < 2 || b.len() < 2 || d == 0 {
        return Err(Error::Invalid("Fréchet distance needs two or more samples per set".into()));
    }
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    let ra = psd_sqrt(&sa);
    let inner = &ra * &sb * &ra;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = (&ma - &mb).norm_squared() + sa.trace() + sb.trace() - 2.0 * cross;
    if !dist.is_finite() {
        return Err(Error::NonFinite { term: "Fréchet distance".into() });
    }
    Ok(dist.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Posterior means.
    Encode,
    /// Latent codes found by the closest-clone search.
    Search,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode" => Ok(EmbeddingMode::Encode),
            "search" => Ok(EmbeddingMode::Search),
            other => Err(Error::Invalid(format!("unknown embedding mode '{other}'"))),
        }
    }
}

/// Latent code of every image under the given mode; search seeds follow
/// the image index the same way adaptation does.
pub fn latent_embeddings(
    m: &VaeModel,
    images: &[&Image],
    mode: EmbeddingMode,
    search: &SearchConfig,
    ssim: &SsimConfig,
) -> Result<Vec<Vec<f32>>> {
    match mode {
        EmbeddingMode::Encode => Ok(m.encode_batch(images)?.into_iter().map(|p| p.mu).collect()),
        EmbeddingMode::Search => images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let seed = crate::latent_search::image_seed(search.init_seed, i);
                latent_search(m, img, seed, search, ssim).map(|(o, _)| o.z.0)
            })
            .collect(),
    }
}

/// CSV with columns `z0..z{d-1}, class_id, domain_tag`, one row per image.
pub fn export_embeddings(
    m: &VaeModel,
    ds: &LabeledDataset,
    mode: EmbeddingMode,
    path: &Path,
    search: &SearchConfig,
    ssim: &SsimConfig,
) -> Result<Vec<Vec<f32>>> {
    let images: Vec<&Image> = ds.images().collect();
    let codes = latent_embeddings(m, &images, mode, search, ssim)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..m.latent_dim()).map(|i| format!("z{i}")).collect();
    header.push("class_id".into());
    header.push("domain_tag".into());
    w.write_record(&header)?;
    for (z, (_, label)) in codes.iter().zip(&ds.items) {
        let mut row: Vec<String> = z.iter().map(|v| v.to_string()).collect();
        row.push(label.to_string());
        row.push(ds.domain_tag.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(codes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Row {
    pub n: usize,
    pub mean_nn_distance: f64,
    pub std: f64,
}

/// Mean Euclidean distance from a uniform target point to the nearest of
/// `n` uniform samples in the unit cube, for every `n` in the grid.
pub fn lemma1_demo(dim: usize, n_grid: &[usize], trials: usize, seed: u64) -> Result<Vec<Lemma1Row>> {
    if dim == 0 || trials == 0 || n_grid.is_empty() {
        return Err(Error::Invalid("lemma1 demo needs dim, trials and grid to be non-empty".into()));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::Invalid(format!("n grid {n_grid:?} must be positive and strictly increasing")));
    }
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(gi, &n)| {
            let dists: Vec<f64> = (0..trials)
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((gi as u64) << 32) | t as u64);
                    let target: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
                    let mut best = f64::INFINITY;
                    for _ in 0..n {
                        let d2: f64 = target.iter().map(|x| (x - rng.random::<f64>()).powi(2)).sum();
                        best = best.min(d2);
                    }
                    best.sqrt()
                })
                .collect();
            let mean = dists.iter().sum::<f64>() / trials as f64;
            let var = if trials > 1 {
                dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
            } else {
                0.0
            };
            Lemma1Row {
                n,
                mean_nn_distance: mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, dim: usize, mean: f64, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(mean, 1.0).unwrap();
        FeatureSet::new((0..n).map(|_| (0..dim).map(|_| nd.sample(&mut rng)).collect()).collect(), "g").unwrap()
    }

    #[test]
    fn a_distance_formula_endpoints() {
        assert_eq!(a_distance_from_error(0.5), 0.0);
        assert_eq!(a_distance_from_error(0.0), 2.0);
        assert_eq!(a_distance_from_error(0.7), 0.0);
    }

    #[test]
    fn same_distribution_gives_small_a_distance() {
        let d = a_distance(&gaussian(500, 8, 0.0, 1), &gaussian(500, 8, 0.0, 2), 5).unwrap();
        assert!(d <= 0.3, "{d}");
    }

    #[test]
    fn separated_sets_give_large_a_distance() {
        let d = a_distance(&gaussian(200, 4, 0.0, 1), &gaussian(200, 4, 5.0, 2), 5).unwrap();
        assert!(d > 1.9, "{d}");
        assert!(a_distance(&gaussian(5, 4, 0.0, 1), &gaussian(200, 4, 0.0, 2), 5).is_err());
    }

    #[test]
    fn frechet_closed_forms() {
        let a = gaussian(10_000, 1, 0.0, 3);
        let b = gaussian(10_000, 1, 1.0, 4);
        let d = frechet_feature_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        let swapped = frechet_feature_distance(&b, &a).unwrap();
        assert!((d - swapped).abs() < 1e-9);
        let c = gaussian(300, 6, 0.0, 5);
        assert!(frechet_feature_distance(&c, &c).unwrap() < 1e-6);
        assert!(frechet_feature_distance(&gaussian(1, 6, 0.0, 1), &c).is_err());
        assert!(frechet_feature_distance(&gaussian(4, 6, 0.0, 1), &c).unwrap().is_finite());
    }

    #[test]
    fn lemma1_distances_shrink_with_n() {
        let rows = lemma1_demo(2, &[10, 100, 1000], 50, 7).unwrap();
        assert!(rows.windows(2).all(|w| w[1].mean_nn_distance < w[0].mean_nn_distance));
        assert_eq!(rows, lemma1_demo(2, &[10, 100, 1000], 50, 7).unwrap());
        assert!(lemma1_demo(2, &[100, 10], 5, 0).is_err());
    }

    #[test]
    fn lemma1_single_uniform_pair_moments() {
        // E|U - V| = 1/3 and Var|U - V| = 1/18 for independent uniforms.
        let trials = 20_000;
        let row = &lemma1_demo(1, &[1], trials, 11).unwrap()[0];
        let se = (1.0f64 / 18.0).sqrt() / (trials as f64).sqrt();
        assert!((row.mean_nn_distance - 1.0 / 3.0).abs() < 3.0 * se);
        assert!((row.std.powi(2) - 1.0 / 18.0).abs() < 0.003);
    }

    #[test]
    fn feature_set_rejects_ragged_input() {
        assert!(FeatureSet::new(vec![vec![1.0, 2.0], vec![1.0]], "x").is_err());
        assert!(FeatureSet::new(vec![], "x").is_err());
    }
}
