use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DictMeta, Dictionary, LOAD_NORM_TOLERANCE};
use crate::container;
use crate::error::{Error, Result};

pub const DICT_MAGIC: &[u8; 7] = b"MDFSCD1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    d: usize,
    n: usize,
    meta: DictMeta,
}

pub(crate) fn to_bytes(dict: &Dictionary) -> Vec<u8> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        d: dict.d(),
        n: dict.n(),
        meta: dict.meta.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut payload = Vec::with_capacity(dict.atoms().len() * 4);
    container::f32_payload(dict.atoms().iter().copied(), &mut payload);
    container::seal(DICT_MAGIC, &json, &payload)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Dictionary> {
    let (json, payload) = container::open(DICT_MAGIC, bytes)?;
    let m: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Load(format!("bad manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "unsupported dictionary version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    let atoms = container::read_f32s(payload)?;
    if m.d == 0 || m.n == 0 || m.d.checked_mul(m.n) != Some(atoms.len()) {
        return Err(Error::Load(format!(
            "payload has {} values, header says {}x{}",
            atoms.len(),
            m.d,
            m.n
        )));
    }
    if atoms.iter().any(|v| !v.is_finite()) {
        return Err(Error::Load("dictionary has non-finite atoms".into()));
    }
    let dict = Dictionary::from_raw(m.d, m.n, atoms, m.meta);
    let dev = dict.max_norm_deviation();
    if dev > LOAD_NORM_TOLERANCE {
        return Err(Error::Load(format!(
            "atom norm deviates from 1 by {dev:.3e} (tolerance {LOAD_NORM_TOLERANCE:e})"
        )));
    }
    Ok(dict)
}

pub fn save_dict(dict: &Dictionary, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(dict))?;
    Ok(())
}

pub fn load_dict(path: &Path) -> Result<Dictionary> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
