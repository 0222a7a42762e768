//! Sparse coding: Lasso via LARS, dictionary learning, dictionary files.
//!
//! The objective throughout is, per column `f` with code `w`,
//! `½‖f − D·w‖² + α‖w‖₁`, with every atom of `D` constrained to unit norm.

mod dict;
mod io;
mod lars;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub use dict::{dict_learn, DictLearnConfig, FitReport};
pub use io::{load_dict, save_dict, DICT_MAGIC};
pub use lars::{lasso_lars, LarsSolver, LassoProblem, SparseCode, DEFAULT_TOL};

/// Largest tolerated deviation of an atom norm from 1 when loading.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-4;

/// Provenance recorded alongside a fitted dictionary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DictMeta {
    pub alpha: f64,
    pub seed: u64,
    pub objective_trace: Vec<f64>,
    /// Digest of the checkpoint whose features were used for fitting.
    pub model_digest: Option<String>,
    pub patch: usize,
    pub stride: usize,
}

/// `d × n` matrix of unit-norm atoms, column-major.
///
/// Atoms are stored at `f32` precision so that the file round-trip is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    d: usize,
    n: usize,
    atoms: Vec<f32>,
    pub meta: DictMeta,
}

impl Dictionary {
    /// Normalize each column of `atoms` (column-major `d × n`) to unit norm.
    pub fn from_columns(d: usize, n: usize, atoms: &[f64]) -> Result<Self> {
        if d == 0 || n == 0 || atoms.len() != d * n {
            return Err(contract(format!(
                "dictionary needs {d}x{n} = {} values, got {}",
                d * n,
                atoms.len()
            )));
        }
        let mut out = Vec::with_capacity(d * n);
        for col in atoms.chunks_exact(d) {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(contract("dictionary atoms must be finite and non-zero"));
            }
            out.extend(col.iter().map(|v| (v / norm) as f32));
        }
        Ok(Self {
            d,
            n,
            atoms: out,
            meta: DictMeta::default(),
        })
    }

    pub(crate) fn from_raw(d: usize, n: usize, atoms: Vec<f32>, meta: DictMeta) -> Self {
        Self { d, n, atoms, meta }
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn atoms(&self) -> &[f32] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f32] {
        &self.atoms[j * self.d..(j + 1) * self.d]
    }

    pub fn atoms_f64(&self) -> Vec<f64> {
        self.atoms.iter().map(|&v| v as f64).collect()
    }

    /// Largest `|‖d_j‖ − 1|` over atoms.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.n)
            .map(|j| {
                let n2: f64 = self.atom(j).iter().map(|&v| (v as f64).powi(2)).sum();
                (n2.sqrt() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Hex SHA-256 sealing the serialized dictionary file.
    pub fn digest(&self) -> String {
        crate::container::digest_hex(&io::to_bytes(self))
    }
}

/// Reconstruction error `½‖f − D·w‖²` (the L1 term is not included).
pub fn residual(dict: &Dictionary, f: &[f32], code: &SparseCode) -> Result<f64> {
    if f.len() != dict.d() || code.coefficients.len() != dict.n() {
        return Err(contract(format!(
            "residual: dictionary {}x{}, feature length {}, code length {}",
            dict.d(),
            dict.n(),
            f.len(),
            code.coefficients.len()
        )));
    }
    let mut r: Vec<f64> = f.iter().map(|&v| v as f64).collect();
    for &j in &code.support {
        let wj = code.coefficients[j];
        for (ri, &a) in r.iter_mut().zip(dict.atom(j)) {
            *ri -= a as f64 * wj;
        }
    }
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}
