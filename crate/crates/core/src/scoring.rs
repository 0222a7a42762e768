//! Image anomaly scores.
//!
//! The sparse-coding score featurizes every grid patch, codes each column
//! against the dictionary and sums the `k` largest residuals
//! `½‖f − D·w‖²`. The reconstruction baseline is the image MSE of a fully
//! convolutional autoencoder.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{contract, Error, Result};
use crate::features::{feature_dim, featurize_positions};
use crate::ops::l2_loss;
use crate::pipeline::ImageRecord;
use crate::sparse::{residual, Dictionary, LarsSolver, SparseCode};

/// Feature columns coded per parallel task.
const CODE_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub patch: usize,
    pub stride: usize,
    pub k: usize,
    pub alpha: f64,
    /// Divide the top-k sum by the number of residuals summed. Only useful
    /// when images of different sizes are compared.
    pub mean_top_k: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            stride: 2,
            k: 5,
            alpha: 1.0,
            mean_top_k: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchResidual {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyReport {
    pub id: String,
    pub score: f64,
    pub k: usize,
    /// Every patch residual, largest first, ties broken by `(row, col)`.
    pub residuals: Vec<PatchResidual>,
    /// `k` was larger than the number of patches; all were summed.
    pub k_exceeds_patches: bool,
    pub mean_top_k: bool,
    pub model_digest: String,
    pub dict_digest: String,
}

impl AnomalyReport {
    pub fn n_patches(&self) -> usize {
        self.residuals.len()
    }

    pub fn top(&self) -> &[PatchResidual] {
        &self.residuals[..self.k.min(self.residuals.len())]
    }

    pub fn to_line(&self) -> ReportLine {
        ReportLine {
            id: self.id.clone(),
            score: self.score,
            k: self.k,
            n_patches: self.n_patches(),
            top_residuals: self.top().to_vec(),
            model_digest: self.model_digest.clone(),
            dict_digest: self.dict_digest.clone(),
        }
    }
}

/// One line of a JSON-lines report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub id: String,
    pub score: f64,
    pub k: usize,
    pub n_patches: usize,
    pub top_residuals: Vec<PatchResidual>,
    pub model_digest: String,
    pub dict_digest: String,
}

/// Sort largest first with `(row, col)` tie-break and sum the top `k`.
pub fn top_k_score(mut residuals: Vec<PatchResidual>, k: usize, mean: bool) -> (f64, Vec<PatchResidual>) {
    residuals.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });
    let used = k.min(residuals.len());
    let sum: f64 = residuals[..used].iter().map(|r| r.value).sum();
    let score = if mean && used > 0 { sum / used as f64 } else { sum };
    (score, residuals)
}

/// Frozen model and dictionary, with their digests computed once.
pub struct Scorer<'a> {
    model: &'a Autoencoder,
    dict: &'a Dictionary,
    solver: LarsSolver,
    cfg: ScoreConfig,
    pub model_digest: String,
    pub dict_digest: String,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Autoencoder, dict: &'a Dictionary, cfg: ScoreConfig) -> Result<Self> {
        let model_digest = model.digest();
        let dict_digest = dict.digest();
        let d = feature_dim(model, cfg.patch);
        if d != dict.d() {
            return Err(contract(format!(
                "model {model_digest} yields {d}-dimensional features but dictionary {dict_digest} has d = {}",
                dict.d()
            )));
        }
        if !(cfg.alpha >= 0.0) || !cfg.alpha.is_finite() {
            return Err(contract(format!("alpha must be finite and >= 0, got {}", cfg.alpha)));
        }
        Ok(Self {
            model,
            dict,
            solver: LarsSolver::new(dict),
            cfg,
            model_digest,
            dict_digest,
        })
    }

    /// Score one image, already normalized with the model's statistics.
    pub fn score(&self, img: &ImageRecord) -> Result<AnomalyReport> {
        check_image(self.model, img)?;
        let fm = featurize_positions(self.model, img, self.cfg.patch, self.cfg.stride, None)?;
        let values = fm
            .values
            .par_chunks(CODE_CHUNK * fm.d)
            .map(|cols| {
                cols.chunks_exact(fm.d)
                    .map(|f| {
                        let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
                        let code: SparseCode = self.solver.solve(&f64s, self.cfg.alpha, self.dict.n());
                        residual(self.dict, f, &code)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let residuals = values
            .into_iter()
            .flatten()
            .zip(&fm.sources)
            .map(|(value, s)| PatchResidual { row: s.row, col: s.col, value })
            .collect::<Vec<_>>();
        let n = residuals.len();
        let (score, residuals) = top_k_score(residuals, self.cfg.k, self.cfg.mean_top_k);
        Ok(AnomalyReport {
            id: img.id.clone(),
            score,
            k: self.cfg.k,
            residuals,
            k_exceeds_patches: self.cfg.k > n,
            mean_top_k: self.cfg.mean_top_k,
            model_digest: self.model_digest.clone(),
            dict_digest: self.dict_digest.clone(),
        })
    }
}

fn check_image(model: &Autoencoder, img: &ImageRecord) -> Result<()> {
    if img.channels() != model.arch.input_channels {
        return Err(contract(format!(
            "{}: {} channels, model expects {}",
            img.id,
            img.channels(),
            model.arch.input_channels
        )));
    }
    if !img.pixels.all_finite() {
        return Err(contract(format!("{}: non-finite pixels", img.id)));
    }
    Ok(())
}

pub fn score_image(
    model: &Autoencoder,
    dict: &Dictionary,
    img: &ImageRecord,
    cfg: &ScoreConfig,
) -> Result<AnomalyReport> {
    Scorer::new(model, dict, cfg.clone())?.score(img)
}

/// Score each image independently; failures do not stop the batch.
pub fn score_batch(
    model: &Autoencoder,
    dict: &Dictionary,
    images: &[ImageRecord],
    cfg: &ScoreConfig,
) -> Result<Vec<Result<AnomalyReport>>> {
    let scorer = Scorer::new(model, dict, cfg.clone())?;
    Ok(images.par_iter().map(|img| scorer.score(img)).collect())
}

/// Whole-image reconstruction MSE of a model without the linear head.
pub fn recon_baseline_score(model: &Autoencoder, img: &ImageRecord) -> Result<f64> {
    if model.arch.with_linear_head {
        return Err(contract(
            "the reconstruction baseline needs a fully convolutional model (no linear head)",
        ));
    }
    check_image(model, img)?;
    let out = model.forward(&img.pixels)?;
    Ok(l2_loss(&out, &img.pixels)? as f64)
}

pub fn write_reports(path: &Path, lines: &[ReportLine]) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut f, l).map_err(|e| Error::Io(e.into()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportLine>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
