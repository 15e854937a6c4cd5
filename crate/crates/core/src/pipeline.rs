//! Experiment stages behind the command-line interface. Every stage reads
//! its inputs from the output directory and fails fast when an upstream
//! artifact is missing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::corpus::generate;
use crate::data::{apply_shift, load_dataset, split_dataset, Image, LabeledDataset, Split};
use crate::edge::sobel_edges;
use crate::error::{Error, Result};
use crate::latent_search::{adapt_and_classify, AdaptationReport, SearchConfig};
use crate::metrics::{a_distance, frechet_feature_distance, lemma1_demo, write_csv, FeatureSet, Lemma1Row};
use crate::perceptual::{train_classifier, ClassifierEpoch, SourceClassifier};
use crate::ssim::{LossKind, SsimConfig};
use crate::vae::{train_vae, write_log, VaeHyper, VaeModel};

/// Name under which the untouched source test split is addressed as a target.
pub const SOURCE_TARGET: &str = "source";

/// Fixed file layout below the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn source_dir(&self) -> PathBuf {
        self.root.join("data").join(SOURCE_TARGET)
    }

    pub fn target_dir(&self, preset: &str) -> PathBuf {
        self.root.join("data").join(preset)
    }

    pub fn classifier_ckpt(&self) -> PathBuf {
        self.root.join("classifier.ckpt")
    }

    pub fn classifier_log(&self) -> PathBuf {
        self.root.join("logs").join("classifier.csv")
    }

    pub fn vae_ckpt(&self) -> PathBuf {
        self.root.join("vae.ckpt")
    }

    pub fn vae_log(&self) -> PathBuf {
        self.root.join("logs").join("vae.csv")
    }

    pub fn adapt_csv(&self, target: &str) -> PathBuf {
        self.root.join("adapt").join(format!("{target}.csv"))
    }

    pub fn adapt_latents(&self, target: &str) -> PathBuf {
        self.root.join("adapt").join(format!("{target}_latents.csv"))
    }

    pub fn adapt_clone_encodings(&self, target: &str) -> PathBuf {
        self.root.join("adapt").join(format!("{target}_clone_encodings.csv"))
    }

    pub fn clones_dir(&self, target: &str) -> PathBuf {
        self.root.join("adapt").join(format!("{target}_clones"))
    }

    pub fn eval_csv(&self, target: &str) -> PathBuf {
        self.root.join("eval").join(format!("{target}.csv"))
    }

    pub fn eval_txt(&self, target: &str) -> PathBuf {
        self.root.join("eval").join(format!("{target}.txt"))
    }

    pub fn ablate_summary(&self) -> PathBuf {
        self.root.join("ablate").join("summary.csv")
    }

    pub fn ablate_vae(&self, edges: bool, perceptual: bool) -> PathBuf {
        let on = |b: bool| if b { "on" } else { "off" };
        self.root
            .join("ablate")
            .join(format!("vae_edges-{}_perceptual-{}.ckpt", on(edges), on(perceptual)))
    }

    pub fn lemma1_csv(&self) -> PathBuf {
        self.root.join("lemma1").join("lemma1.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report").join("long.csv")
    }
}

pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.output_dir)
}

/// Renders (or copies) the source splits and writes one shifted copy of the
/// source test split per preset.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let lay = layout(cfg);
    let d = &cfg.data;
    let (train, test) = if d.source_root.is_empty() {
        let corpus = d.corpus();
        (
            generate(&corpus, d.train_per_class, cfg.stage_seed("corpus-train"), SOURCE_TARGET)?,
            generate(&corpus, d.test_per_class, cfg.stage_seed("corpus-test"), SOURCE_TARGET)?,
        )
    } else {
        let root = Path::new(&d.source_root);
        let load = |s| load_dataset(root, s, d.resolution, d.resolution, d.channels);
        (load(Split::Train)?, load(Split::Test)?)
    };
    let src = lay.source_dir();
    if src.exists() {
        fs::remove_dir_all(&src).map_err(|e| Error::io(&src, e))?;
    }
    train.save(&src.join(Split::Train.as_str()))?;
    test.save(&src.join(Split::Test.as_str()))?;
    for (name, preset) in &d.presets {
        let dir = lay.target_dir(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        apply_shift(&test, preset)?.save(&dir.join(Split::Test.as_str()))?;
    }
    log::info!("wrote {} train / {} test source images and {} presets", train.len(), test.len(), d.presets.len());
    Ok(())
}

fn load_split(cfg: &ExperimentConfig, dir: &Path, split: Split, tag: &str) -> Result<LabeledDataset> {
    require(&dir.join(split.as_str()))?;
    let d = &cfg.data;
    let mut ds = load_dataset(dir, split, d.resolution, d.resolution, d.channels)?;
    ds.domain_tag = tag.to_string();
    Ok(ds)
}

pub fn load_source(cfg: &ExperimentConfig, split: Split) -> Result<LabeledDataset> {
    load_split(cfg, &layout(cfg).source_dir(), split, SOURCE_TARGET)
}

/// Test images of a shift preset, or the source test split for `"source"`.
pub fn load_target(cfg: &ExperimentConfig, target: &str) -> Result<LabeledDataset> {
    if target == SOURCE_TARGET {
        return load_source(cfg, Split::Test);
    }
    cfg.data.preset(target)?;
    load_split(cfg, &layout(cfg).target_dir(target), Split::Test, target)
}

pub fn train_classifier_stage(cfg: &ExperimentConfig) -> Result<(SourceClassifier, Vec<ClassifierEpoch>)> {
    let lay = layout(cfg);
    let source = load_source(cfg, Split::Train)?;
    let (train, val) = split_dataset(&source, 1.0 - cfg.data.val_fraction, cfg.stage_seed("val-split"))?;
    let mut hyper = cfg.classifier.clone();
    hyper.seed = cfg.stage_seed("classifier");
    let (clf, log) = train_classifier(&train, &val, &hyper)?;
    clf.save(&lay.classifier_ckpt())?;
    write_csv(&lay.classifier_log(), &log)?;
    Ok((clf, log))
}

pub fn load_classifier(cfg: &ExperimentConfig) -> Result<SourceClassifier> {
    SourceClassifier::load(&layout(cfg).classifier_ckpt())
}

pub fn load_vae(cfg: &ExperimentConfig) -> Result<VaeModel> {
    VaeModel::load(&layout(cfg).vae_ckpt())
}

/// VAE training settings for the given component switches.
pub fn vae_hyper(cfg: &ExperimentConfig, perceptual: bool) -> VaeHyper {
    let mut weights = cfg.vae.weights;
    if !perceptual {
        weights.perceptual = 0.0;
    }
    VaeHyper {
        epochs: cfg.vae.epochs,
        batch_size: cfg.vae.batch_size,
        lr: cfg.vae.lr,
        seed: cfg.stage_seed("vae"),
        weights,
    }
}

/// Trains a VAE into `path`, or loads it when the checkpoint there was
/// produced by identical settings.
pub fn obtain_vae(
    cfg: &ExperimentConfig,
    path: &Path,
    edges: bool,
    perceptual: bool,
    source: &LabeledDataset,
    clf: Option<&SourceClassifier>,
) -> Result<VaeModel> {
    let mut arch = cfg.vae.arch(cfg.data.resolution, cfg.data.channels);
    arch.edges = edges;
    let hyper = vae_hyper(cfg, perceptual);
    let main = layout(cfg).vae_ckpt();
    for candidate in [path, main.as_path()] {
        if let Ok((m, desc)) = VaeModel::load_with_descriptor(candidate) {
            if desc.arch == arch && desc.training.as_ref() == Some(&hyper) {
                log::info!("reusing {}", candidate.display());
                if candidate != path {
                    m.save(path, Some(&hyper))?;
                }
                return Ok(m);
            }
        }
    }
    let uses_clf = hyper.weights.perceptual != 0.0;
    let clf = if uses_clf {
        Some(clf.ok_or_else(|| Error::Invalid("perceptual loss needs the source classifier".into()))?)
    } else {
        None
    };
    let (m, log) = train_vae(source, clf, arch, &hyper)?;
    m.save(path, Some(&hyper))?;
    let log_path = path.with_extension("log.csv");
    write_log(&log_path, &log)?;
    Ok(m)
}

pub fn train_vae_stage(cfg: &ExperimentConfig) -> Result<VaeModel> {
    let lay = layout(cfg);
    let perceptual = cfg.vae.weights.perceptual != 0.0;
    let clf = if perceptual { Some(load_classifier(cfg)?) } else { None };
    let source = load_source(cfg, Split::Train)?;
    let mut arch = cfg.vae.arch(cfg.data.resolution, cfg.data.channels);
    arch.edges = cfg.vae.edges;
    let hyper = vae_hyper(cfg, perceptual);
    let (m, log) = train_vae(&source, clf.as_ref(), arch, &hyper)?;
    m.save(&lay.vae_ckpt(), Some(&hyper))?;
    write_log(&lay.vae_log(), &log)?;
    Ok(m)
}

/// Search settings with the initial seed tied to the experiment seed.
pub fn search_config(cfg: &ExperimentConfig) -> SearchConfig {
    SearchConfig {
        init_seed: cfg.search.init_seed ^ cfg.stage_seed("search"),
        ..cfg.search.clone()
    }
}

pub fn adapt_targets(cfg: &ExperimentConfig, target: &str) -> Result<LabeledDataset> {
    Ok(load_target(cfg, target)?.take_per_class(cfg.data.adapt_per_class))
}

pub fn adapt_stage(cfg: &ExperimentConfig, target: &str, dump_clones: bool) -> Result<AdaptationReport> {
    let lay = layout(cfg);
    let clf = load_classifier(cfg)?;
    let m = load_vae(cfg)?;
    let targets = adapt_targets(cfg, target)?;
    let report = adapt_and_classify(&m, &clf, &targets, &search_config(cfg), &cfg.ssim, cfg.jobs)?;
    report.write_csv(&lay.adapt_csv(target))?;
    let rows = |z: Vec<Vec<f32>>| report.results.iter().zip(z).map(|(r, z)| (r.image_id, z, r.true_class)).collect::<Vec<_>>();
    write_latents(&lay.adapt_latents(target), &rows(report.results.iter().map(|r| r.z_final.0.clone()).collect()), m.latent_dim())?;
    let clones: Vec<&Image> = report.results.iter().map(|r| &r.clone).collect();
    let encoded = m.encode_batch(&clones)?.into_iter().map(|p| p.mu).collect();
    write_latents(&lay.adapt_clone_encodings(target), &rows(encoded), m.latent_dim())?;
    if dump_clones {
        report.dump_clones(&lay.clones_dir(target))?;
    }
    log::info!(
        "{target}: source-only {:.3}, adapted {:.3} over {} images",
        report.source_only_accuracy,
        report.adapted_accuracy,
        report.results.len()
    );
    Ok(report)
}

fn write_latents(path: &Path, rows: &[(usize, Vec<f32>, usize)], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["image_id".into()];
    header.extend((0..dim).map(|i| format!("z{i}")));
    header.push("class_id".into());
    w.write_record(&header)?;
    for (id, z, class) in rows {
        let mut row = vec![id.to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        row.push(class.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_latents(path: &Path) -> Result<Vec<Vec<f64>>> {
    require(path)?;
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .take(rec.len().saturating_sub(2))
            .map(|v| v.parse::<f64>().map_err(|e| Error::Invalid(format!("{}: {e}", path.display()))))
            .collect::<Result<_>>()?;
        out.push(vals);
    }
    Ok(out)
}

fn read_adapt_accuracy(path: &Path) -> Result<(f64, f64, usize)> {
    require(path)?;
    let mut rd = csv::Reader::from_path(path)?;
    let (mut direct, mut adapted, mut n) = (0usize, 0usize, 0usize);
    for rec in rd.deserialize::<BTreeMap<String, String>>() {
        let rec = rec?;
        let get = |k: &str| rec.get(k).cloned().unwrap_or_default();
        direct += (get("source_only_pred") == get("true_class")) as usize;
        adapted += (get("adapted_pred") == get("true_class")) as usize;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Invalid(format!("{} has no rows", path.display())));
    }
    Ok((direct as f64 / n as f64, adapted as f64 / n as f64, n))
}

/// Prior samples decoded with the edges of random training images.
pub fn vae_samples(m: &VaeModel, edge_sources: &LabeledDataset, n: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dz = m.latent_dim();
    let picks: Vec<(Vec<f32>, usize)> = (0..n)
        .map(|_| {
            let z = (0..dz).map(|_| StandardNormal.sample(&mut rng)).collect();
            (z, rng.random_range(0..edge_sources.len()))
        })
        .collect();
    let edges: Vec<_> = picks.iter().map(|(_, i)| sobel_edges(&edge_sources.items[*i].0)).collect();
    let zs: Vec<&[f32]> = picks.iter().map(|(z, _)| z.as_slice()).collect();
    m.decode_batch(&zs, &edges.iter().collect::<Vec<_>>())
}

/// Fréchet distance between classifier embeddings of VAE samples and of
/// held-out source images.
pub fn sample_frechet(
    m: &VaeModel,
    clf: &SourceClassifier,
    edge_sources: &LabeledDataset,
    held_out: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let samples = vae_samples(m, edge_sources, n, seed)?;
    let a = FeatureSet::from_f32(&clf.embeddings(&samples.iter().collect::<Vec<_>>())?, "vae")?;
    let b = FeatureSet::from_f32(&clf.embeddings(&held_out.images().collect::<Vec<_>>())?, SOURCE_TARGET)?;
    frechet_feature_distance(&a, &b)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub target: String,
    pub source_only_accuracy_full: f64,
    pub source_only_accuracy: f64,
    pub adapted_accuracy: f64,
    pub adapted_images: usize,
    pub a_distance_source_vs_clone: f64,
    pub a_distance_source_vs_clone_encoding: f64,
    pub a_distance_source_vs_target: f64,
    pub frechet_samples_vs_source: f64,
    /// Feature space of the Fréchet distance.
    pub frechet_features: String,
}

pub fn eval_stage(cfg: &ExperimentConfig, target: &str) -> Result<EvalSummary> {
    let lay = layout(cfg);
    let m = load_vae(cfg)?;
    let clf = load_classifier(cfg)?;
    let (source_only, adapted, n) = read_adapt_accuracy(&lay.adapt_csv(target))?;
    let clone_latents = read_latents(&lay.adapt_latents(target))?;
    let full = load_target(cfg, target)?;
    let targets = full.take_per_class(cfg.data.adapt_per_class);
    let source_test = load_source(cfg, Split::Test)?;
    let source_sub = source_test.take_per_class(cfg.data.adapt_per_class);
    let encode = |ds: &LabeledDataset, tag: &str| -> Result<FeatureSet> {
        let mu: Vec<Vec<f32>> = m.encode_batch(&ds.images().collect::<Vec<_>>())?.into_iter().map(|p| p.mu).collect();
        FeatureSet::from_f32(&mu, tag)
    };
    let src_lat = encode(&source_sub, SOURCE_TARGET)?;
    let tgt_lat = encode(&targets, target)?;
    let clone_lat = FeatureSet::new(clone_latents, "clone")?;
    let clone_enc = FeatureSet::new(read_latents(&lay.adapt_clone_encodings(target))?, "clone")?;
    let folds = cfg.metrics.folds;
    let train = load_source(cfg, Split::Train)?;
    let summary = EvalSummary {
        target: target.to_string(),
        source_only_accuracy_full: clf.accuracy(&full)?,
        source_only_accuracy: source_only,
        adapted_accuracy: adapted,
        adapted_images: n,
        a_distance_source_vs_clone: a_distance(&src_lat, &clone_lat, folds)?,
        a_distance_source_vs_clone_encoding: a_distance(&src_lat, &clone_enc, folds)?,
        a_distance_source_vs_target: a_distance(&src_lat, &tgt_lat, folds)?,
        frechet_samples_vs_source: sample_frechet(&m, &clf, &train, &source_test, cfg.metrics.frechet_samples, cfg.stage_seed("frechet"))?,
        frechet_features: "source-classifier-pooled".into(),
    };
    write_csv(&lay.eval_csv(target), std::slice::from_ref(&summary))?;
    let text = format!(
        "# Fréchet distance uses source-classifier pooled features, not Inception features.\n\
         target: {}\n\
         source-only accuracy (all {} images): {:.4}\n\
         source-only accuracy (adapted subset of {}): {:.4}\n\
         adapted accuracy: {:.4}\n\
         A-distance source vs clone latents: {:.4}\n\
         A-distance source vs re-encoded clones: {:.4}\n\
         A-distance source vs target encodings: {:.4}\n\
         Fréchet distance, VAE samples vs held-out source: {:.4}\n",
        summary.target,
        full.len(),
        summary.source_only_accuracy_full,
        n,
        summary.source_only_accuracy,
        summary.adapted_accuracy,
        summary.a_distance_source_vs_clone,
        summary.a_distance_source_vs_clone_encoding,
        summary.a_distance_source_vs_target,
        summary.frechet_samples_vs_source
    );
    fs::write(lay.eval_txt(target), text).map_err(|e| Error::io(lay.eval_txt(target), e))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// `component`, `loss` or `window`.
    pub group: String,
    pub edges: bool,
    pub perceptual: bool,
    pub latent_search: bool,
    pub loss: String,
    pub window: usize,
    pub source_only_accuracy: f64,
    pub adapted_accuracy: f64,
    pub mean_final_loss: Option<f64>,
}

/// Accuracy of classifying encoder reconstructions instead of searched clones.
fn reconstruct_accuracy(m: &VaeModel, clf: &SourceClassifier, targets: &LabeledDataset) -> Result<f64> {
    let images: Vec<&Image> = targets.images().collect();
    let rec = m.reconstruct(&images)?;
    let preds = clf.predict_batch(&rec.iter().collect::<Vec<_>>())?;
    Ok(preds.iter().zip(&targets.items).filter(|((p, _), (_, y))| p == y).count() as f64 / targets.len() as f64)
}

/// Component grid (edges x perceptual x latent search) plus search-loss and
/// SSIM-window sweeps with the full model, all on the configured target.
pub fn ablate_stage(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let lay = layout(cfg);
    let clf = load_classifier(cfg)?;
    let source = load_source(cfg, Split::Train)?;
    let targets = adapt_targets(cfg, &cfg.data.target_preset)?;
    let direct = clf.accuracy(&targets)?;
    let base = search_config(cfg);
    let default_window = cfg.ssim.window_size;
    let mut rows = Vec::new();
    let mut full_model = None;
    let run = |m: &VaeModel, loss: LossKind, window: usize| -> Result<AdaptationReport> {
        let search = SearchConfig { loss_kind: loss, ..base.clone() };
        let ssim = SsimConfig { window_size: window, ..cfg.ssim.clone() };
        adapt_and_classify(m, &clf, &targets, &search, &ssim, cfg.jobs)
    };
    let mut cache: HashMap<(LossKind, usize), AdaptationReport> = HashMap::new();
    for edges in [true, false] {
        for perceptual in [true, false] {
            let m = obtain_vae(cfg, &lay.ablate_vae(edges, perceptual), edges, perceptual, &source, Some(&clf))?;
            let row = |ls: bool, acc: f64, loss: Option<f64>| AblationRow {
                group: "component".into(),
                edges,
                perceptual,
                latent_search: ls,
                loss: cfg.search.loss_kind.as_str().into(),
                window: default_window,
                source_only_accuracy: direct,
                adapted_accuracy: acc,
                mean_final_loss: loss,
            };
            let r = run(&m, cfg.search.loss_kind, default_window)?;
            log::info!("ablate edges={edges} perceptual={perceptual}: {:.3}", r.adapted_accuracy);
            rows.push(row(true, r.adapted_accuracy, Some(r.mean_final_loss())));
            rows.push(row(false, reconstruct_accuracy(&m, &clf, &targets)?, None));
            if edges && perceptual {
                cache.insert((cfg.search.loss_kind, default_window), r);
                full_model = Some(m);
            }
        }
    }
    let full = full_model.expect("full variant trained");
    let mut sweep = |group: &str, loss: LossKind, window: usize| -> Result<()> {
        if !cache.contains_key(&(loss, window)) {
            let r = run(&full, loss, window)?;
            cache.insert((loss, window), r);
        }
        let r = &cache[&(loss, window)];
        rows.push(AblationRow {
            group: group.into(),
            edges: true,
            perceptual: true,
            latent_search: true,
            loss: loss.as_str().into(),
            window,
            source_only_accuracy: direct,
            adapted_accuracy: r.adapted_accuracy,
            mean_final_loss: Some(r.mean_final_loss()),
        });
        Ok(())
    };
    for loss in &cfg.ablate.losses {
        sweep("loss", *loss, default_window)?;
    }
    for window in &cfg.ablate.windows {
        sweep("window", LossKind::Ssim, *window)?;
    }
    write_csv(&lay.ablate_summary(), &rows)?;
    Ok(rows)
}

pub fn lemma1_stage(cfg: &ExperimentConfig) -> Result<Vec<Lemma1Row>> {
    let m = &cfg.metrics;
    let rows = lemma1_demo(m.lemma1_dim, &m.lemma1_grid, m.lemma1_trials, cfg.stage_seed("lemma1"))?;
    write_csv(&layout(cfg).lemma1_csv(), &rows)?;
    Ok(rows)
}

fn is_latent_table(p: &Path) -> bool {
    let name = p.to_string_lossy();
    name.ends_with("_latents.csv") || name.ends_with("_clone_encodings.csv")
}

/// Melts every result CSV under the output directory into one long table
/// with columns `table, row, column, value`.
pub fn report_stage(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let lay = layout(cfg);
    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    for sub in ["adapt", "eval", "ablate", "lemma1", "logs"] {
        let dir = lay.root().join(sub);
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv") && !is_latent_table(p))
            .collect();
        files.sort();
        for f in files {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            sources.push((format!("{sub}/{stem}"), f));
        }
    }
    if sources.is_empty() {
        return Err(Error::MissingArtifact(lay.root().join("adapt")));
    }
    let out = lay.report_csv();
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["table", "row", "column", "value"])?;
    for (table, path) in sources {
        let mut rd = csv::Reader::from_path(&path)?;
        let headers = rd.headers()?.clone();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            for (h, v) in headers.iter().zip(rec.iter()) {
                w.write_record([table.as_str(), &i.to_string(), h, v])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    Ok(out)
}
