use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Autoencoder, TrainMeta};
use crate::container;
use crate::error::{Error, Result};
use crate::pipeline::NormStats;
use crate::rng::stream;
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDFSCAE1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: [usize; 4],
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    arch: ArchSpec,
    norm_stats: NormStats,
    seed: u64,
    train_meta: TrainMeta,
    tensors: Vec<TensorEntry>,
}

/// Serialize to the sealed checkpoint layout.
pub fn to_bytes(model: &Autoencoder) -> Vec<u8> {
    let mut payload = Vec::with_capacity(model.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, p) in model.named_params() {
        let offset = payload.len() as u64;
        container::f32_payload(p.value.data().iter().copied(), &mut payload);
        tensors.push(TensorEntry {
            name,
            dims: p.value.dims(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        arch: model.arch.clone(),
        norm_stats: model.norm_stats.clone(),
        seed: model.train_meta.seed,
        train_meta: model.train_meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    container::seal(CHECKPOINT_MAGIC, &json, &payload)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Autoencoder> {
    let (json, payload) = container::open(CHECKPOINT_MAGIC, bytes)?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Load(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.norm_stats.channels() != manifest.arch.input_channels {
        return Err(Error::Load("norm stats do not match input channels".into()));
    }
    // Build the skeleton, then overwrite every tensor from the payload.
    let mut model = Autoencoder::build(manifest.arch.clone(), &mut stream(0, "skeleton"))
        .map_err(|e| Error::Load(format!("invalid architecture: {e}")))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Load(format!(
            "checkpoint has {} tensors, architecture needs {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let mut consumed = 0u64;
    for ((name, param), entry) in names.iter().zip(model.params_mut()).zip(&manifest.tensors) {
        if *name != entry.name || param.value.dims() != entry.dims {
            return Err(Error::Load(format!(
                "tensor {} {:?} does not match expected {name} {:?}",
                entry.name,
                entry.dims,
                param.value.dims()
            )));
        }
        let end = entry.offset.checked_add(entry.length);
        let bytes = end
            .filter(|&e| e <= payload.len() as u64 && entry.length == param.value.len() as u64 * 4)
            .map(|e| &payload[entry.offset as usize..e as usize])
            .ok_or_else(|| Error::Load(format!("tensor {name} lies outside the payload")))?;
        let values = container::read_f32s(bytes)?;
        param.value = Tensor4::from_vec(entry.dims, values)?;
        consumed += entry.length;
    }
    if consumed != payload.len() as u64 {
        return Err(Error::Load("payload has trailing bytes".into()));
    }
    model.norm_stats = manifest.norm_stats;
    model.train_meta = manifest.train_meta;
    Ok(model)
}

pub fn save(model: &Autoencoder, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Autoencoder> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes)
}

impl Autoencoder {
    /// Hex SHA-256 sealing the serialized checkpoint.
    pub fn digest(&self) -> String {
        container::digest_hex(&to_bytes(self))
    }
}
