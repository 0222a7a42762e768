//! Image ingestion, normalization, patch extraction, and synthetic data.

mod image_io;
mod manifest;
mod patches;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub use image_io::{load_and_resize, resize_bilinear, save_image};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use patches::{grid_count, random_crop, sliding_patches, PatchSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
            Label::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One image, stored as a `(1, c, H, W)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Tensor4,
    pub label: Label,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, pixels: Tensor4, label: Label) -> Self {
        Self {
            id: id.into(),
            pixels,
            label,
        }
    }

    pub fn channels(&self) -> usize {
        self.pixels.c()
    }
    pub fn height(&self) -> usize {
        self.pixels.h()
    }
    pub fn width(&self) -> usize {
        self.pixels.w()
    }
}

/// Per-channel mean and standard deviation over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity statistics (mean 0, std 1) for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(train: &[ImageRecord]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Fit("cannot fit normalization on an empty training set".into()))?;
        let c = first.channels();
        let mut sum = vec![0.0f64; c];
        let mut count = vec![0usize; c];
        for img in train {
            if img.channels() != c {
                return Err(Error::Fit(format!(
                    "image {} has {} channels, expected {c}",
                    img.id,
                    img.channels()
                )));
            }
            let hw = img.height() * img.width();
            for (ch, plane) in img.pixels.item(0).chunks(hw).enumerate() {
                sum[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
                count[ch] += hw;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut sq = vec![0.0f64; c];
        for img in train {
            let hw = img.height() * img.width();
            for (ch, plane) in img.pixels.item(0).chunks(hw).enumerate() {
                sq[ch] += plane
                    .iter()
                    .map(|&v| (v as f64 - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std: Vec<f64> = sq.iter().zip(&count).map(|(s, &n)| (s / n as f64).sqrt()).collect();
        if let Some(ch) = std.iter().position(|&s| !(s > 1e-12) || !s.is_finite()) {
            return Err(Error::Fit(format!(
                "channel {ch} has zero variance over the training set"
            )));
        }
        Ok(Self { mean, std })
    }

    fn check(&self, img: &ImageRecord) -> Result<()> {
        if img.channels() != self.channels() {
            return Err(Error::Contract(format!(
                "image {} has {} channels, normalization expects {}",
                img.id,
                img.channels(),
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, img: &ImageRecord) -> Result<ImageRecord> {
        self.check(img)?;
        let mut out = img.clone();
        let hw = img.height() * img.width();
        for (ch, plane) in out.pixels.data_mut().chunks_mut(hw).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            plane
                .iter_mut()
                .for_each(|v| *v = ((*v as f64 - m) / s) as f32);
        }
        Ok(out)
    }

    pub fn invert(&self, img: &ImageRecord) -> Result<ImageRecord> {
        self.check(img)?;
        let mut out = img.clone();
        let hw = img.height() * img.width();
        for (ch, plane) in out.pixels.data_mut().chunks_mut(hw).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            plane
                .iter_mut()
                .for_each(|v| *v = (*v as f64 * s + m) as f32);
        }
        Ok(out)
    }
}

/// Convenience wrapper matching [`NormStats::fit`].
pub fn fit_norm_stats(train: &[ImageRecord]) -> Result<NormStats> {
    NormStats::fit(train)
}

pub fn apply_norm(img: &ImageRecord, stats: &NormStats) -> Result<ImageRecord> {
    stats.apply(img)
}

/// Split normals into train/test by `train_fraction`; anomalous and
/// unlabeled records always go to test. Order within each side follows a
/// seeded shuffle.
pub fn split_records(
    records: Vec<ImageRecord>,
    train_fraction: f64,
    seed: u64,
) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    use rand::seq::SliceRandom;
    let (mut normals, mut test): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| r.label == Label::Normal);
    normals.shuffle(&mut crate::rng::stream(seed, "split"));
    let n_train = ((normals.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    let rest = normals.split_off(n_train.min(normals.len()));
    test.splice(0..0, rest);
    (normals, test)
}
