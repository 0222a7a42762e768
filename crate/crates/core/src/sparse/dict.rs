//! Dictionary learning by alternating minimization.
//!
//! Each outer iteration codes every column with LARS against the current
//! atoms, then updates the atoms one at a time by exact minimization on the
//! unit sphere using the sufficient statistics `A = Σ w·wᵀ` and `B = Σ f·wᵀ`.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lars::LarsSolver;
use super::{DictMeta, Dictionary};
use crate::error::{contract, Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::stream;
use crate::tensor::Scalar;

/// Columns coded per parallel task.
const CHUNK: usize = 512;

/// Atoms whose total squared code weight is below this are treated as dead.
const DEAD_ATOM: f64 = 1e-12;
const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictLearnConfig {
    pub n_atoms: usize,
    pub alpha: f64,
    pub max_outer: usize,
    /// Stop when the relative objective decrease drops below this.
    pub tol: f64,
    /// Optional cap on non-zeros per code. Capped codes are no longer exact
    /// minimizers, so the objective may then fail to decrease.
    pub max_nonzeros: Option<usize>,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            n_atoms: 50,
            alpha: 1.0,
            max_outer: 30,
            tol: 1e-4,
            max_nonzeros: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Atom re-seeds from poorly reconstructed columns.
    pub reseeded: usize,
    /// Fewer columns than atoms.
    pub underdetermined: bool,
    /// Codes in the last iteration that hit a degenerate active set.
    pub degenerate_codes: usize,
}

struct Stats {
    a: Vec<f64>,
    b: Vec<f64>,
    sq_norm: f64,
    l1: f64,
    degenerate: usize,
    residuals: Vec<f64>,
}

impl Stats {
    fn zero(d: usize, n: usize) -> Self {
        Self {
            a: vec![0.0; n * n],
            b: vec![0.0; d * n],
            sq_norm: 0.0,
            l1: 0.0,
            degenerate: 0,
            residuals: Vec::new(),
        }
    }

    fn merge(&mut self, o: Stats) {
        self.a.iter_mut().zip(&o.a).for_each(|(x, y)| *x += y);
        self.b.iter_mut().zip(&o.b).for_each(|(x, y)| *x += y);
        self.sq_norm += o.sq_norm;
        self.l1 += o.l1;
        self.degenerate += o.degenerate;
        self.residuals.extend(o.residuals);
    }

    /// Fold the codes of atom `j` into atom `i`, where `d_j = sign * d_i`.
    /// The merged codes reconstruct the same columns with no larger l1 norm,
    /// and atom `j` is left unused.
    fn fold(&mut self, d: usize, n: usize, i: usize, j: usize, sign: f64) {
        let (aij, ajj) = (self.a[i * n + j], self.a[j * n + j]);
        for k in 0..n {
            let ajk = self.a[j * n + k];
            self.a[i * n + k] += sign * ajk;
            self.a[k * n + i] = self.a[i * n + k];
        }
        self.a[i * n + i] += sign * aij + ajj;
        for k in 0..n {
            self.a[j * n + k] = 0.0;
            self.a[k * n + j] = 0.0;
        }
        for k in 0..d {
            let bjk = self.b[j * d + k];
            self.b[i * d + k] += sign * bjk;
            self.b[j * d + k] = 0.0;
        }
    }
}

/// Merge atoms that coincide up to sign, so the spare copy gets re-seeded.
fn fold_duplicates(atoms: &[f64], d: usize, n: usize, stats: &mut Stats) {
    for j in 1..n {
        let dj = &atoms[j * d..(j + 1) * d];
        for i in 0..j {
            let dot: f64 = atoms[i * d..(i + 1) * d].iter().zip(dj).map(|(x, y)| x * y).sum();
            if dot.abs() >= 1.0 - DUPLICATE_TOL && stats.a[i * n + i] >= DEAD_ATOM {
                stats.fold(d, n, i, j, dot.signum());
                break;
            }
        }
    }
}

fn code_chunk(solver: &LarsSolver, cols: &[f32], alpha: f64, max_nz: usize) -> Stats {
    let (d, n) = (solver.d(), solver.n());
    let mc = cols.len() / d;
    let f: Vec<f64> = cols.iter().map(|&v| v as f64).collect();
    let mut corr = vec![0.0; mc * n];
    f64::matmul(mc, d, n, &f, false, solver.atoms(), true, &mut corr, false);
    let gram = solver.gram();
    let mut s = Stats::zero(d, n);
    s.residuals.reserve(mc);
    for (col, c) in f.chunks_exact(d).zip(corr.chunks_exact(n)) {
        let code = solver.solve_correlations(c, alpha, max_nz);
        let w = &code.coefficients;
        let sq: f64 = col.iter().map(|v| v * v).sum();
        s.sq_norm += sq;
        s.l1 += code.l1_norm();
        s.degenerate += code.degenerate as usize;
        // ½‖f − Dw‖² = ½‖f‖² − cᵀw + ½wᵀGw
        let mut quad = 0.0;
        let mut lin = 0.0;
        for &i in &code.support {
            lin += c[i] * w[i];
            for &j in &code.support {
                quad += w[i] * gram[i * n + j] * w[j];
                s.a[i * n + j] += w[i] * w[j];
            }
            for (bk, fk) in s.b[i * d..(i + 1) * d].iter_mut().zip(col) {
                *bk += fk * w[i];
            }
        }
        s.residuals.push((0.5 * sq - lin + 0.5 * quad).max(0.0));
    }
    s
}

/// `½Σ‖f‖² − tr(DᵀB) + ½tr(DᵀD·A) + α·Σ|w|`.
fn objective(atoms: &[f64], d: usize, n: usize, s: &Stats, alpha: f64) -> f64 {
    let solver_gram = LarsSolver::from_atoms(d, n, atoms.to_vec());
    let g = solver_gram.gram();
    let lin: f64 = atoms.iter().zip(&s.b).map(|(x, y)| x * y).sum();
    let quad: f64 = g.iter().zip(&s.a).map(|(x, y)| x * y).sum();
    0.5 * s.sq_norm - lin + 0.5 * quad + alpha * s.l1
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn random_unit(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if normalize(&mut v) {
            return v;
        }
    }
}

/// Learn `cfg.n_atoms` unit-norm atoms for the columns of `features`.
pub fn dict_learn(
    features: &FeatureMatrix,
    cfg: &DictLearnConfig,
    seed: u64,
) -> Result<(Dictionary, FitReport)> {
    let (d, m, n) = (features.d, features.m(), cfg.n_atoms);
    if d == 0 || m == 0 {
        return Err(Error::Fit("empty feature matrix".into()));
    }
    if n == 0 {
        return Err(contract("n_atoms must be at least 1"));
    }
    if !(cfg.alpha >= 0.0) || !cfg.alpha.is_finite() {
        return Err(contract(format!("alpha must be finite and >= 0, got {}", cfg.alpha)));
    }
    if features.values.iter().any(|v| !v.is_finite()) {
        return Err(contract("feature matrix has non-finite values"));
    }
    if features.values.iter().all(|&v| v == 0.0) {
        return Err(Error::Fit("feature matrix is all zeros; nothing to learn".into()));
    }
    let max_nz = cfg.max_nonzeros.unwrap_or(n).clamp(1, n);

    let mut report = FitReport {
        underdetermined: m < n,
        ..FitReport::default()
    };
    let mut rng = stream(seed, "dict/init");
    let mut atoms = Vec::with_capacity(d * n);
    for j in sample(&mut rng, m, n.min(m)) {
        let mut v: Vec<f64> = features.column(j).iter().map(|&x| x as f64).collect();
        if !normalize(&mut v) {
            v = random_unit(d, &mut rng);
        }
        atoms.extend(v);
    }
    while atoms.len() < d * n {
        atoms.extend(random_unit(d, &mut rng));
    }

    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_outer {
        let solver = LarsSolver::from_atoms(d, n, atoms.clone());
        let mut stats = features
            .values
            .par_chunks(CHUNK * d)
            .map(|cols| code_chunk(&solver, cols, cfg.alpha, max_nz))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Stats::zero(d, n), |mut acc, s| {
                acc.merge(s);
                acc
            });
        report.degenerate_codes = stats.degenerate;
        fold_duplicates(&atoms, d, n, &mut stats);

        // Worst-reconstructed columns first, for re-seeding unused atoms.
        let mut worst: Vec<usize> = (0..m).collect();
        worst.sort_by(|&x, &y| stats.residuals[y].total_cmp(&stats.residuals[x]).then(x.cmp(&y)));
        let mut worst = worst.into_iter();

        for j in 0..n {
            let ajj = stats.a[j * n + j];
            if ajj < DEAD_ATOM {
                // Unused atom: any direction leaves the objective unchanged.
                let next = worst.by_ref().find_map(|c| {
                    let mut v: Vec<f64> = features.column(c).iter().map(|&x| x as f64).collect();
                    normalize(&mut v).then_some(v)
                });
                if let Some(v) = next {
                    atoms[j * d..(j + 1) * d].copy_from_slice(&v);
                    report.reseeded += 1;
                }
                continue;
            }
            // v = B_j − D·A_j + A_jj·d_j
            let mut v = stats.b[j * d..(j + 1) * d].to_vec();
            for i in 0..n {
                let aij = stats.a[i * n + j];
                if aij != 0.0 && i != j {
                    for (vk, dk) in v.iter_mut().zip(&atoms[i * d..(i + 1) * d]) {
                        *vk -= aij * dk;
                    }
                }
            }
            if normalize(&mut v) {
                atoms[j * d..(j + 1) * d].copy_from_slice(&v);
            }
        }

        let obj = objective(&atoms, d, n, &stats, cfg.alpha);
        if !obj.is_finite() {
            return Err(Error::Numeric(format!("dictionary objective became {obj}")));
        }
        report.objective_trace.push(obj);
        report.iterations += 1;
        if (prev - obj) / prev.abs().max(1e-12) < cfg.tol {
            report.converged = true;
            break;
        }
        prev = obj;
    }

    let mut dict = Dictionary::from_columns(d, n, &atoms)?;
    dict.meta = DictMeta {
        alpha: cfg.alpha,
        seed,
        objective_trace: report.objective_trace.clone(),
        ..DictMeta::default()
    };
    Ok((dict, report))
}
