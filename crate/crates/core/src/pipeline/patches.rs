use rand::Rng;

use super::ImageRecord;
use crate::error::{contract, Result};
use crate::tensor::Tensor4;

/// Uniformly placed `p × p` crop of `img`.
pub fn random_crop<R: Rng + ?Sized>(img: &ImageRecord, p: usize, rng: &mut R) -> Result<Tensor4> {
    let (h, w) = (img.height(), img.width());
    if p == 0 || h < p || w < p {
        return Err(contract(format!(
            "cannot crop {p}x{p} from {h}x{w} image {}",
            img.id
        )));
    }
    let y = rng.random_range(0..=h - p);
    let x = rng.random_range(0..=w - p);
    img.pixels.crop(y, x, p, p)
}

/// Number of positions along one axis for a `size`-long axis.
pub fn grid_count(size: usize, patch: usize, stride: usize) -> usize {
    if size < patch || stride == 0 {
        0
    } else {
        (size - patch) / stride + 1
    }
}

/// Sliding-window patch grid over one image, in row-major order.
///
/// Patches are materialized on demand so a full 512×512 grid (62,001
/// patches) does not need to be held in memory at once.
#[derive(Clone, Debug)]
pub struct PatchSet<'a> {
    pub image: &'a ImageRecord,
    pub patch: usize,
    pub stride: usize,
    pub coords: Vec<(usize, usize)>,
}

impl PatchSet<'_> {
    pub fn source_id(&self) -> &str {
        &self.image.id
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> Tensor4 {
        let (r, c) = self.coords[i];
        self.image
            .pixels
            .crop(r, c, self.patch, self.patch)
            .expect("grid coordinates lie inside the image")
    }

    /// Patches `idx` stacked along the batch axis.
    pub fn batch(&self, idx: &[usize]) -> Tensor4 {
        let [_, c, _, _] = self.image.pixels.dims();
        let p = self.patch;
        let mut data = Vec::with_capacity(idx.len() * c * p * p);
        for &i in idx {
            data.extend_from_slice(self.get(i).data());
        }
        Tensor4::from_vec([idx.len(), c, p, p], data).expect("patch batch dims")
    }
}

pub fn sliding_patches(img: &ImageRecord, patch: usize, stride: usize) -> Result<PatchSet<'_>> {
    let (h, w) = (img.height(), img.width());
    if patch == 0 || stride == 0 {
        return Err(contract("patch size and stride must be positive"));
    }
    if h < patch || w < patch {
        return Err(contract(format!(
            "image {} ({h}x{w}) is smaller than patch {patch}",
            img.id
        )));
    }
    let rows = grid_count(h, patch, stride);
    let cols = grid_count(w, patch, stride);
    let coords = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect();
    Ok(PatchSet {
        image: img,
        patch,
        stride,
        coords,
    })
}
