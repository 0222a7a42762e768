//! Digest-sealed binary container shared by checkpoint and dictionary files:
//! `magic | u64 LE manifest length | JSON manifest | payload | SHA-256`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DIGEST_LEN: usize = 32;

pub(crate) fn seal(magic: &[u8], manifest: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(magic.len() + 8 + manifest.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Verify magic and digest; returns `(manifest, payload)`.
pub(crate) fn open<'a>(magic: &[u8], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    let min = magic.len() + 8 + DIGEST_LEN;
    if bytes.len() < min {
        return Err(Error::Load(format!("file truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..magic.len()] != magic {
        return Err(Error::Load(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Load("digest mismatch: file is corrupt".into()));
    }
    let len_at = magic.len();
    let len = u64::from_le_bytes(bytes[len_at..len_at + 8].try_into().unwrap()) as usize;
    let start = len_at + 8;
    if start.checked_add(len).is_none_or(|end| end > body.len()) {
        return Err(Error::Load("manifest length exceeds file size".into()));
    }
    Ok((&body[start..start + len], &body[start + len..]))
}

pub(crate) fn digest_hex(sealed: &[u8]) -> String {
    hex::encode(&sealed[sealed.len() - DIGEST_LEN..])
}

pub(crate) fn f32_payload(values: impl IntoIterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Load("payload is not a whole number of f32 values".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
