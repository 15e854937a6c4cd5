//! Experiment configuration: one TOML file with a section per module, plus
//! dotted `section.key=value` overrides from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::corpus::CorpusConfig;
use crate::data::ShiftConfig;
use crate::error::{Error, Result};
use crate::latent_search::{SearchConfig, SearchInit};
use crate::perceptual::ClassifierHyper;
use crate::ssim::SsimConfig;
use crate::vae::{LossWeights, VaeArch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory with `train/<class>/*.png` and `test/<class>/*.png` used as
    /// the source domain; empty renders the built-in shape corpus.
    pub source_root: String,
    pub resolution: usize,
    pub channels: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub hue_min: f32,
    pub hue_max: f32,
    /// Fraction of the source training split held out for validation.
    pub val_fraction: f64,
    /// Preset used by `adapt` and `eval` when no target is given.
    pub target_preset: String,
    /// Target images per class used for adaptation.
    pub adapt_per_class: usize,
    pub presets: BTreeMap<String, ShiftConfig>,
}

impl DataSection {
    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            resolution: self.resolution,
            channels: self.channels,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            hue_min: self.hue_min,
            hue_max: self.hue_max,
        }
    }

    pub fn preset(&self, name: &str) -> Result<&ShiftConfig> {
        self.presets.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown shift preset '{name}' (known: {})",
                self.presets.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

pub fn default_presets() -> BTreeMap<String, ShiftConfig> {
    let mut p = BTreeMap::new();
    p.insert(
        "domain-A".to_string(),
        ShiftConfig {
            brightness_scale: 0.7,
            contrast_scale: 0.7,
            noise_sigma: 0.05,
            seed: 11,
            ..ShiftConfig::identity()
        },
    );
    p.insert(
        "domain-B".to_string(),
        ShiftConfig {
            hue_rotation: 150.0,
            contrast_scale: 0.8,
            blur_sigma: 0.6,
            noise_sigma: 0.08,
            seed: 12,
            ..ShiftConfig::identity()
        },
    );
    p.insert(
        "domain-C".to_string(),
        ShiftConfig {
            hue_rotation: 200.0,
            brightness_scale: 0.6,
            channel_gain: [0.7, 1.2, 1.0],
            noise_sigma: 0.15,
            blur_sigma: 1.0,
            seed: 13,
            ..ShiftConfig::identity()
        },
    );
    p
}

impl Default for DataSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        DataSection {
            source_root: String::new(),
            resolution: c.resolution,
            channels: c.channels,
            train_per_class: c.train_per_class,
            test_per_class: c.test_per_class,
            hue_min: c.hue_min,
            hue_max: c.hue_max,
            val_fraction: 0.1,
            target_preset: "domain-B".into(),
            adapt_per_class: 20,
            presets: default_presets(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub latent_dim: usize,
    pub conv_width: usize,
    pub fc_width: usize,
    pub refine_width: usize,
    pub edges: bool,
    pub weights: LossWeights,
}

impl Default for VaeSection {
    fn default() -> Self {
        VaeSection {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            latent_dim: 64,
            conv_width: 16,
            fc_width: 256,
            refine_width: 8,
            edges: true,
            weights: LossWeights {
                perceptual: 0.01,
                ..LossWeights::default()
            },
        }
    }
}

impl VaeSection {
    pub fn arch(&self, resolution: usize, channels: usize) -> VaeArch {
        VaeArch {
            resolution,
            channels,
            latent_dim: self.latent_dim,
            conv_width: self.conv_width,
            fc_width: self.fc_width,
            refine_width: self.refine_width,
            edges: self.edges,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub folds: usize,
    /// Images drawn from the prior for the Fréchet comparison.
    pub frechet_samples: usize,
    pub lemma1_dim: usize,
    pub lemma1_grid: Vec<usize>,
    pub lemma1_trials: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            folds: 5,
            frechet_samples: 500,
            lemma1_dim: 2,
            lemma1_grid: vec![10, 100, 1000, 10000],
            lemma1_trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub losses: Vec<crate::ssim::LossKind>,
    pub windows: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        use crate::ssim::LossKind::*;
        AblateSection {
            losses: vec![Ssim, Mse, Mae],
            windows: vec![3, 7, 11, 15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for latent search; 0 uses every core.
    pub jobs: usize,
    pub data: DataSection,
    pub classifier: ClassifierHyper,
    pub vae: VaeSection,
    pub ssim: SsimConfig,
    pub search: SearchConfig,
    pub metrics: MetricsSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            jobs: 0,
            data: DataSection::default(),
            classifier: ClassifierHyper::default(),
            vae: VaeSection::default(),
            ssim: SsimConfig::default(),
            search: SearchConfig {
                step_size: 5.0,
                init: SearchInit::Encoder,
                ..SearchConfig::default()
            },
            metrics: MetricsSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (defaults when `None`) and applies the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let root = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Self::from_table(root, overrides)
    }

    /// A copy with further overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let root = self
            .to_toml()?
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(root, overrides)
    }

    fn from_table(mut root: toml::Table, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ssim.validate()?;
        self.search.validate()?;
        self.vae.arch(self.data.resolution, self.data.channels).validate()?;
        for (name, p) in &self.data.presets {
            p.validate().map_err(|e| Error::Config(format!("preset {name}: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.data.val_fraction)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration next to the outputs.
    pub fn write_resolved(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(name);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Independent seed for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        // FNV-1a over the stage name, mixed with the global seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stage.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        h ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, &text).unwrap();
        assert_eq!(ExperimentConfig::load(Some(&p), &[]).unwrap(), cfg);
        assert!(cfg.data.presets.contains_key("domain-B"));
    }

    #[test]
    fn dotted_overrides_take_precedence() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "vae.lr=1e-4".into(),
                "search.loss_kind=mse".into(),
                "data.presets.domain-B.hue_rotation=90".into(),
                "output_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.vae.lr, 1e-4);
        assert_eq!(cfg.search.loss_kind, crate::ssim::LossKind::Mse);
        assert_eq!(cfg.data.presets["domain-B"].hue_rotation, 90.0);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        assert!(ExperimentConfig::load(None, &["vae.nope=1".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["vae.lr".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["search.iterations=0".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["data.resolution=48".into()]).is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.stage_seed("vae"), cfg.stage_seed("classifier"));
        let other = ExperimentConfig {
            seed: 1,
            ..ExperimentConfig::default()
        };
        assert_ne!(cfg.stage_seed("vae"), other.stage_seed("vae"));
    }
}
