//! Run configuration: TOML file, then `MDFSC_SEED`, then `--section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use mdfsc::autoencoder::{ArchSpec, TrainConfig};
use mdfsc::pipeline::synth::SynthConfig;
use mdfsc::scoring::ScoreConfig;
use mdfsc::sparse::DictLearnConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSection {
    pub stage_widths: [usize; 5],
    pub convs_per_stage: [usize; 5],
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop: usize,
    pub crops_per_image: usize,
    /// Also train the fully convolutional model used by `--scorer recon`.
    pub train_baseline: bool,
}

impl Default for AeSection {
    fn default() -> Self {
        let arch = ArchSpec::desk(3);
        let train = TrainConfig::default();
        Self {
            stage_widths: arch.stage_widths,
            convs_per_stage: arch.convs_per_stage,
            latent_dim: arch.latent_dim,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            crop: train.crop,
            crops_per_image: train.crops_per_image,
            train_baseline: true,
        }
    }
}

impl AeSection {
    pub fn arch(&self, channels: usize, linear_head: bool) -> ArchSpec {
        ArchSpec {
            stage_widths: self.stage_widths,
            convs_per_stage: self.convs_per_stage,
            latent_dim: self.latent_dim,
            input_channels: channels,
            with_linear_head: linear_head,
            head_input_side: self.crop,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            crop: self.crop,
            crops_per_image: self.crops_per_image,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub patch: usize,
    pub stride: usize,
    pub budget_per_image: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            patch: 16,
            stride: 2,
            budget_per_image: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseSection {
    pub n_atoms: usize,
    pub alpha: f64,
    pub max_outer: usize,
    pub tol: f64,
}

impl Default for SparseSection {
    fn default() -> Self {
        let d = DictLearnConfig::default();
        Self {
            n_atoms: d.n_atoms,
            alpha: d.alpha,
            max_outer: d.max_outer,
            tol: d.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub k: usize,
    pub mean_top_k: bool,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { k: 5, mean_top_k: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where `synth` writes images and manifests.
    pub data_dir: PathBuf,
    /// A single labeled manifest split by `train_fraction`. When unset,
    /// `train_manifest` and `test_manifest` are used.
    pub manifest: Option<PathBuf>,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub baseline_checkpoint: PathBuf,
    pub dictionary: PathBuf,
    pub reports: PathBuf,
    pub eval: PathBuf,
    pub roc_csv: Option<PathBuf>,
    pub run_log: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            manifest: None,
            train_manifest: "data/train.tsv".into(),
            test_manifest: "data/test.tsv".into(),
            checkpoint: "out/ae.ckpt".into(),
            baseline_checkpoint: "out/baseline.ckpt".into(),
            dictionary: "out/dict.bin".into(),
            reports: "out/reports.jsonl".into(),
            eval: "out/eval.json".into(),
            roc_csv: None,
            run_log: "out/run.log".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Side length images are resized to on load.
    pub image_size: usize,
    pub train_fraction: f64,
    pub ae: AeSection,
    pub features: FeaturesSection,
    pub sparse: SparseSection,
    pub scoring: ScoringSection,
    pub synth: SynthConfig,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            image_size: 512,
            train_fraction: 0.8,
            ae: AeSection::default(),
            features: FeaturesSection::default(),
            sparse: SparseSection::default(),
            scoring: ScoringSection::default(),
            synth: SynthConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

/// Parse a raw override value as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolve the effective configuration.
    pub fn resolve(
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| config_err(format!("MDFSC_SEED must be an unsigned integer, got {s:?}")))?;
        }
        if overrides.is_empty() {
            return cfg.validate().map(|_| cfg);
        }
        let mut table: toml::Table = toml::Table::try_from(&cfg).expect("config serializes");
        for (key, raw) in overrides {
            let parts: Vec<&str> = key.split('.').collect();
            let (last, sections) = parts.split_last().expect("split yields one part");
            let mut cur = &mut table;
            for s in sections {
                cur = cur
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| config_err(format!("{key}: {s} is not a section")))?;
            }
            cur.insert(last.to_string(), parse_value(raw));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| config_err(format!("invalid override: {e}")))?;
        cfg.validate().map(|_| cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.image_size == 0 {
            return Err(config_err("image_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(config_err("train_fraction must lie in [0, 1]"));
        }
        if self.features.patch == 0 || self.features.patch % 8 != 0 {
            return Err(config_err("features.patch must be a positive multiple of 8"));
        }
        if self.features.stride == 0 {
            return Err(config_err("features.stride must be positive"));
        }
        if !(self.sparse.alpha >= 0.0) {
            return Err(config_err("sparse.alpha must be >= 0"));
        }
        if !(self.ae.lr > 0.0) || !self.ae.lr.is_finite() {
            return Err(config_err("ae.lr must be positive"));
        }
        Ok(())
    }

    pub fn dict_learn(&self) -> DictLearnConfig {
        DictLearnConfig {
            n_atoms: self.sparse.n_atoms,
            alpha: self.sparse.alpha,
            max_outer: self.sparse.max_outer,
            tol: self.sparse.tol,
            max_nonzeros: None,
        }
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            patch: self.features.patch,
            stride: self.features.stride,
            k: self.scoring.k,
            alpha: self.sparse.alpha,
            mean_top_k: self.scoring.mean_top_k,
        }
    }
}
