//! Multi-scale deep features.
//!
//! For a `p × p` patch, three encoder taps are read at three input scales so
//! their spatial grids line up at `p/8 × p/8`:
//!
//! * stage-4 tap on the patch itself,
//! * stage-3 tap on the patch downscaled by 2,
//! * stage-2 tap on the patch downscaled by 4.
//!
//! The three activations are concatenated along channels and flattened
//! row-major into one column of the feature matrix.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::autoencoder::{Autoencoder, TapName};
use crate::error::{contract, Result};
use crate::ops::downscale;
use crate::pipeline::{sliding_patches, ImageRecord};
use crate::rng::stream;
use crate::tensor::Tensor4;

pub const FEATURE_MAGIC: &[u8; 7] = b"MDFSCF1";

/// Patches featurized per encoder call.
const CHUNK: usize = 256;

/// Taps in concatenation order with the downscale factor applied first.
pub const TAPS: [(TapName, usize); 3] = [
    (TapName::Stage4Last, 1),
    (TapName::Stage3Last, 2),
    (TapName::Stage2Last, 4),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSource {
    pub image: String,
    pub row: usize,
    pub col: usize,
}

/// Columns of `d` features, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub d: usize,
    pub values: Vec<f32>,
    pub sources: Vec<PatchSource>,
}

impl FeatureMatrix {
    pub fn m(&self) -> usize {
        self.sources.len()
    }

    pub fn column(&self, j: usize) -> &[f32] {
        &self.values[j * self.d..(j + 1) * self.d]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.values.chunks_exact(self.d.max(1)).take(self.m())
    }

    /// Write the binary export: magic, u32 d, u64 m, column-major f32.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(FEATURE_MAGIC)?;
        f.write_all(&(self.d as u32).to_le_bytes())?;
        f.write_all(&(self.m() as u64).to_le_bytes())?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Feature length for `model` on `patch`-sized inputs.
pub fn feature_dim(model: &Autoencoder, patch: usize) -> usize {
    let side = patch / 8;
    TAPS.iter().map(|&(t, _)| model.tap_channels(t)).sum::<usize>() * side * side
}

/// Features of a batch of `p × p` patches, one row of length `d` per patch.
pub fn multiscale_batch(model: &Autoencoder, patches: &Tensor4) -> Result<Vec<Vec<f32>>> {
    let [n, _, h, w] = patches.dims();
    if h != w || h == 0 || h % 8 != 0 {
        return Err(contract(format!(
            "multi-scale features need square patches with side divisible by 8, got {h}x{w}"
        )));
    }
    let side = h / 8;
    let maps = TAPS
        .iter()
        .map(|&(tap, factor)| {
            let input = downscale(patches, factor)?;
            let a = model.encode_tap(&input, tap)?;
            if (a.h(), a.w()) != (side, side) {
                return Err(contract(format!(
                    "{tap:?} produced {}x{}, expected {side}x{side}",
                    a.h(),
                    a.w()
                )));
            }
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    let d: usize = maps.iter().map(|m| m.c()).sum::<usize>() * side * side;
    Ok((0..n)
        .map(|i| {
            let mut v = Vec::with_capacity(d);
            for m in &maps {
                v.extend_from_slice(m.item(i));
            }
            v
        })
        .collect())
}

/// Feature vector of one `(1, c, p, p)` patch.
pub fn multiscale_feature(model: &Autoencoder, patch: &Tensor4) -> Result<Vec<f32>> {
    if patch.n() != 1 {
        return Err(contract("multiscale_feature takes a single patch"));
    }
    Ok(multiscale_batch(model, patch)?.pop().expect("one row"))
}

/// Features for selected grid positions of one image, in the given order.
pub fn featurize_positions(
    model: &Autoencoder,
    img: &ImageRecord,
    patch: usize,
    stride: usize,
    positions: Option<&[usize]>,
) -> Result<FeatureMatrix> {
    let grid = sliding_patches(img, patch, stride)?;
    let all: Vec<usize>;
    let idx = match positions {
        Some(p) => p,
        None => {
            all = (0..grid.len()).collect();
            &all
        }
    };
    let d = feature_dim(model, patch);
    let rows = idx
        .par_chunks(CHUNK)
        .map(|chunk| multiscale_batch(model, &grid.batch(chunk)))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(idx.len() * d);
    for r in rows.iter().flatten() {
        values.extend_from_slice(r);
    }
    let sources = idx
        .iter()
        .map(|&i| PatchSource {
            image: img.id.clone(),
            row: grid.coords[i].0,
            col: grid.coords[i].1,
        })
        .collect();
    Ok(FeatureMatrix { d, values, sources })
}

/// Feature matrix for dictionary fitting: per image, a seeded uniform
/// subsample of `budget_per_image` grid positions (all when fewer), kept in
/// grid order, concatenated in image order.
pub fn build_feature_matrix(
    model: &Autoencoder,
    images: &[ImageRecord],
    patch: usize,
    stride: usize,
    budget_per_image: usize,
    seed: u64,
) -> Result<FeatureMatrix> {
    if images.is_empty() {
        return Err(contract("no images to build a feature matrix from"));
    }
    if budget_per_image == 0 {
        return Err(contract("budget_per_image must be at least 1"));
    }
    let d = feature_dim(model, patch);
    let mut out = FeatureMatrix {
        d,
        values: Vec::new(),
        sources: Vec::new(),
    };
    for img in images {
        let grid = sliding_patches(img, patch, stride)?;
        let mut rng = stream(seed, &format!("features/{}", img.id));
        let mut chosen: Vec<usize> = if grid.len() <= budget_per_image {
            (0..grid.len()).collect()
        } else {
            sample(&mut rng, grid.len(), budget_per_image).into_vec()
        };
        chosen.sort_unstable();
        let part = featurize_positions(model, img, patch, stride, Some(&chosen))?;
        out.values.extend(part.values);
        out.sources.extend(part.sources);
    }
    Ok(out)
}
