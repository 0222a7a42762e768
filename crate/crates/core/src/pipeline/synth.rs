//! Synthetic fundus-like images for hermetic end-to-end runs.
//!
//! Normal images are a bright disc with a radial falloff on a dark
//! background, an optic-disc highlight, low-amplitude band-limited texture,
//! and dark vessel-like curves. Anomalous images are normals with injected
//! blobs, occlusions, or heavily blurred regions.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{save_image, write_manifest, ImageRecord, Label, ManifestEntry};
use crate::error::{contract, Result};
use crate::rng::stream;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    pub size: usize,
    pub channels: usize,
    pub anomaly_count_min: usize,
    pub anomaly_count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Intensity shift of blob anomalies.
    pub contrast: f64,
    /// Relative frequencies of blob / occlusion / blur anomalies.
    pub kind_weights: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test_normal: 50,
            n_test_anomalous: 50,
            size: 128,
            channels: 3,
            anomaly_count_min: 1,
            anomaly_count_max: 3,
            radius_min: 4.0,
            radius_max: 9.0,
            contrast: 0.25,
            kind_weights: [0.5, 0.25, 0.25],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(contract("synth size must be at least 16"));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(contract("synth channels must be 1 or 3"));
        }
        if self.anomaly_count_min > self.anomaly_count_max {
            return Err(contract("anomaly_count_min exceeds anomaly_count_max"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(contract("invalid anomaly radius range"));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(contract("contrast must lie in [0, 1]"));
        }
        if self.kind_weights.iter().any(|w| !(*w >= 0.0)) || self.kind_weights.iter().sum::<f64>() <= 0.0 {
            return Err(contract("kind_weights must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Blob,
    Occlusion,
    Blur,
}

/// An injected anomaly; `radius` is the disc radius (blob, blur) or the
/// half-extent of the occluding rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: AnomalyKind,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub half_h: f64,
    pub half_w: f64,
}

impl Injection {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 - self.cy, x as f64 - self.cx);
        match self.kind {
            AnomalyKind::Occlusion => dy.abs() <= self.half_h && dx.abs() <= self.half_w,
            _ => dy * dy + dx * dx <= self.radius * self.radius,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub record: ImageRecord,
    pub injections: Vec<Injection>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub train: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
}

struct Geometry {
    cy: f64,
    cx: f64,
    radius: f64,
}

fn channel_gain(channels: usize) -> Vec<f64> {
    if channels == 1 {
        vec![1.0]
    } else {
        // red-dominant fundus appearance
        vec![1.0, 0.62, 0.34]
    }
}

/// Generate one normal image in `[0,1]`.
pub fn normal_image(size: usize, channels: usize, rng: &mut ChaCha8Rng) -> Tensor4 {
    normal_with_geometry(size, channels, rng).0
}

fn normal_with_geometry(size: usize, channels: usize, rng: &mut ChaCha8Rng) -> (Tensor4, Geometry) {
    let s = size as f64;
    let geo = Geometry {
        cy: s / 2.0 + rng.random_range(-0.03..0.03) * s,
        cx: s / 2.0 + rng.random_range(-0.03..0.03) * s,
        radius: s * rng.random_range(0.42..0.46),
    };
    let brightness = rng.random_range(0.9..1.1);

    // optic disc highlight
    let od_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let od_dist = geo.radius * rng.random_range(0.3..0.5);
    let od_y = geo.cy + od_dist * od_angle.sin();
    let od_x = geo.cx + od_dist * od_angle.cos();
    let od_sigma = s * 0.05;

    // band-limited texture: a few low-frequency plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let wavelength = rng.random_range(s / 8.0..s / 3.0);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / wavelength;
            (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), 0.02)
        })
        .collect();

    let vessels = vessel_map(size, od_y, od_x, &geo, rng);

    let gains = channel_gain(channels);
    let mut img = Tensor4::zeros([1, channels, size, size]);
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f64, x as f64);
            let r = ((yf - geo.cy).powi(2) + (xf - geo.cx).powi(2)).sqrt() / geo.radius;
            // soft disc edge over ~1.5 px
            let inside = 1.0 / (1.0 + ((r - 1.0) * geo.radius / 0.75).exp());
            let mut v = 0.33 + 0.25 * (1.0 - r.min(1.0).powi(2));
            v += 0.14 * (-((yf - od_y).powi(2) + (xf - od_x).powi(2)) / (2.0 * od_sigma * od_sigma)).exp();
            for &(ky, kx, phase, amp) in &waves {
                v += amp * (ky * yf + kx * xf + phase).sin();
            }
            v *= 1.0 - 0.35 * vessels[y * size + x];
            v *= brightness;
            let v = inside * v + (1.0 - inside) * 0.03;
            for (c, g) in gains.iter().enumerate() {
                img.set(0, c, y, x, (v * g).clamp(0.0, 1.0) as f32);
            }
        }
    }
    (img, geo)
}

fn vessel_map(size: usize, oy: f64, ox: f64, geo: &Geometry, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut map = vec![0.0f64; size * size];
    let n = rng.random_range(4..=6);
    for _ in 0..n {
        let mut y = oy;
        let mut x = ox;
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut curvature = rng.random_range(-0.02..0.02);
        let length = geo.radius * rng.random_range(0.8..1.6);
        let sigma: f64 = rng.random_range(0.7..1.3);
        let mut travelled = 0.0;
        while travelled < length {
            stamp(&mut map, size, y, x, sigma);
            heading += curvature;
            curvature = (curvature + rng.random_range(-0.004..0.004)).clamp(-0.04, 0.04);
            y += 0.5 * heading.sin();
            x += 0.5 * heading.cos();
            travelled += 0.5;
        }
    }
    map
}

fn stamp(map: &mut [f64], size: usize, cy: f64, cx: f64, sigma: f64) {
    let reach = (3.0 * sigma).ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    for y in iy - reach..=iy + reach {
        for x in ix - reach..=ix + reach {
            if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
                continue;
            }
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            let cell = &mut map[y as usize * size + x as usize];
            *cell = cell.max(v);
        }
    }
}

fn pick_kind(weights: &[f64; 3], rng: &mut ChaCha8Rng) -> AnomalyKind {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (w, k) in weights
        .iter()
        .zip([AnomalyKind::Blob, AnomalyKind::Occlusion, AnomalyKind::Blur])
    {
        if u < *w {
            return k;
        }
        u -= w;
    }
    AnomalyKind::Blur
}

/// Inject `count` anomalies into `img`, all centred inside the retinal disc.
fn inject(
    img: &mut Tensor4,
    geo: &Geometry,
    count: usize,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Injection> {
    let size = img.h();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = pick_kind(&cfg.kind_weights, rng);
        let radius = rng.random_range(cfg.radius_min..=cfg.radius_max);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dist = (geo.radius - radius - 2.0).max(0.0) * rng.random_range(0.0f64..1.0).sqrt();
        let inj = Injection {
            kind,
            cy: geo.cy + dist * angle.sin(),
            cx: geo.cx + dist * angle.cos(),
            radius,
            half_h: radius * rng.random_range(0.6..1.2),
            half_w: radius * rng.random_range(0.6..1.2),
        };
        let region: Vec<(usize, usize)> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (y, x)))
            .filter(|&(y, x)| inj.contains(y, x))
            .collect();
        match kind {
            AnomalyKind::Blob => {
                let c = cfg.contrast as f32;
                let (lo, hi) = region.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &(y, x)| {
                    (0..img.c()).fold((lo, hi), |(lo, hi), ch| {
                        let v = img.get(0, ch, y, x);
                        (lo.min(v), hi.max(v))
                    })
                });
                let mut sign = if rng.random_bool(0.5) { 1.0f32 } else { -1.0 };
                if sign > 0.0 && hi + c > 1.0 && lo - c >= 0.0 {
                    sign = -1.0;
                } else if sign < 0.0 && lo - c < 0.0 {
                    sign = 1.0;
                }
                for &(y, x) in &region {
                    for ch in 0..img.c() {
                        let v = img.get(0, ch, y, x) + sign * c;
                        img.set(0, ch, y, x, v.clamp(0.0, 1.0));
                    }
                }
            }
            AnomalyKind::Occlusion => {
                let level = rng.random_range(0.0f32..0.06);
                for &(y, x) in &region {
                    for ch in 0..img.c() {
                        img.set(0, ch, y, x, level);
                    }
                }
            }
            AnomalyKind::Blur => {
                let blurred = box_blur(img, 3, 3);
                for &(y, x) in &region {
                    for ch in 0..img.c() {
                        img.set(0, ch, y, x, blurred.get(0, ch, y, x));
                    }
                }
            }
        }
        out.push(inj);
    }
    out
}

fn box_blur(img: &Tensor4, radius: usize, passes: usize) -> Tensor4 {
    let [_, c, h, w] = img.dims();
    let mut cur = img.clone();
    let r = radius as isize;
    for _ in 0..passes {
        let mut next = Tensor4::zeros(cur.dims());
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0f32;
                    let mut n = 0.0f32;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y as isize + dy, x as isize + dx);
                            if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                                s += cur.get(0, ch, yy as usize, xx as usize);
                                n += 1.0;
                            }
                        }
                    }
                    next.set(0, ch, y, x, s / n);
                }
            }
        }
        cur = next;
    }
    cur
}

fn make_image(id: String, label: Label, cfg: &SynthConfig, seed: u64) -> SynthImage {
    let mut rng = stream(seed, &format!("synth/{id}"));
    let (mut pixels, geo) = normal_with_geometry(cfg.size, cfg.channels, &mut rng);
    let injections = if label == Label::Anomalous {
        let count = rng.random_range(cfg.anomaly_count_min..=cfg.anomaly_count_max);
        inject(&mut pixels, &geo, count, cfg, &mut rng)
    } else {
        Vec::new()
    };
    SynthImage {
        record: ImageRecord::new(id, pixels, label),
        injections,
    }
}

/// Anomalies injected into an existing normal image; exposed so the effect
/// of injection can be measured against the untouched source.
pub fn inject_into(
    pixels: &mut Tensor4,
    count: usize,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Injection> {
    let s = pixels.h() as f64;
    let geo = Geometry {
        cy: s / 2.0,
        cx: s / 2.0,
        radius: s * 0.42,
    };
    inject(pixels, &geo, count, cfg, rng)
}

/// Generate the train (normal) and test (normal then anomalous) splits.
/// Each image draws from its own stream keyed by `(seed, id)`.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    cfg.validate()?;
    let specs: Vec<(String, Label, bool)> = (0..cfg.n_train)
        .map(|i| (format!("train/normal_{i:04}.png"), Label::Normal, true))
        .chain((0..cfg.n_test_normal).map(|i| (format!("test/normal_{i:04}.png"), Label::Normal, false)))
        .chain(
            (0..cfg.n_test_anomalous)
                .map(|i| (format!("test/anomalous_{i:04}.png"), Label::Anomalous, false)),
        )
        .collect();
    let images: Vec<(SynthImage, bool)> = specs
        .into_par_iter()
        .map(|(id, label, train)| (make_image(id, label, cfg, seed), train))
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = images.into_iter().partition(|(_, t)| *t);
    Ok(SynthDataset {
        train: train.into_iter().map(|(i, _)| i).collect(),
        test: test.into_iter().map(|(i, _)| i).collect(),
    })
}

/// Write images as PNG under `dir` plus `train.tsv` / `test.tsv` manifests.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("train"))?;
    std::fs::create_dir_all(dir.join("test"))?;
    for (split, items) in [("train.tsv", &ds.train), ("test.tsv", &ds.test)] {
        items
            .par_iter()
            .try_for_each(|img| save_image(&img.record.pixels, &dir.join(&img.record.id)))?;
        let entries: Vec<_> = items
            .iter()
            .map(|i| ManifestEntry {
                path: i.record.id.clone(),
                label: i.record.label,
            })
            .collect();
        write_manifest(&dir.join(split), &entries)?;
    }
    Ok(())
}
