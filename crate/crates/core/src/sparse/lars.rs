//! Lasso by least-angle regression with the Lasso modification.
//!
//! The path is traced in the penalty `λ`, starting from `λ = max|Dᵀf|`
//! (where `w = 0`) down to the requested `α`. Along each segment the active
//! correlations stay at `±λ`; a segment ends when an inactive atom's
//! correlation reaches the active level (it joins), an active coefficient
//! crosses zero (it leaves), or `λ` reaches `α`.

use super::Dictionary;
use crate::error::{contract, Result};

const DENOM_EPS: f64 = 1e-12;

/// Correlations within this of the target penalty count as having reached it.
pub const DEFAULT_TOL: f64 = 1e-7;

/// One Lasso instance: `min_w ½‖f − D·w‖² + α‖w‖₁`.
#[derive(Clone, Copy, Debug)]
pub struct LassoProblem<'a> {
    pub dict: &'a Dictionary,
    pub f: &'a [f32],
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseCode {
    pub coefficients: Vec<f64>,
    /// Indices of non-zero coefficients, ascending.
    pub support: Vec<usize>,
    /// An entering atom was (numerically) dependent on the active set and
    /// was excluded.
    pub degenerate: bool,
    /// Stopped early because `max_nonzeros` atoms were active.
    pub capped: bool,
    pub steps: usize,
}

impl SparseCode {
    pub fn from_dense(coefficients: Vec<f64>) -> Self {
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            coefficients,
            support,
            ..Self::default()
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.support.iter().map(|&j| self.coefficients[j].abs()).sum()
    }
}

/// Incremental Cholesky factor of the active Gram block.
#[derive(Default)]
struct Cholesky {
    rows: Vec<Vec<f64>>,
}

impl Cholesky {
    fn push(&mut self, gram: &[f64], n: usize, active: &[usize], j: usize) -> bool {
        let k = active.len();
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut s = gram[active[i] * n + j];
            for (l, zl) in self.rows[i][..i].iter().zip(&z[..i]) {
                s -= l * zl;
            }
            z[i] = s / self.rows[i][i];
        }
        let gjj = gram[j * n + j];
        let d2 = gjj - z.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-10 * gjj.max(1e-300)) {
            return false;
        }
        z.push(d2.sqrt());
        self.rows.push(z);
        true
    }

    fn rebuild(&mut self, gram: &[f64], n: usize, active: &[usize]) -> bool {
        self.rows.clear();
        let mut ok = true;
        for i in 0..active.len() {
            ok &= self.push(gram, n, &active[..i], active[i]);
        }
        ok
    }

    /// Solve `L Lᵀ x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = b.len();
        let mut y = vec![0.0; k];
        for i in 0..k {
            let mut s = b[i];
            for l in 0..i {
                s -= self.rows[i][l] * y[l];
            }
            y[i] = s / self.rows[i][i];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for l in i + 1..k {
                s -= self.rows[l][i] * y[l];
            }
            y[i] = s / self.rows[i][i];
        }
        y
    }
}

enum Event {
    End,
    Enter(usize),
    Drop(usize),
}

/// Precomputed Gram matrix for coding many columns against one dictionary.
#[derive(Clone, Debug)]
pub struct LarsSolver {
    d: usize,
    n: usize,
    atoms: Vec<f64>,
    gram: Vec<f64>,
    tol: f64,
}

impl LarsSolver {
    pub fn new(dict: &Dictionary) -> Self {
        Self::from_atoms(dict.d(), dict.n(), dict.atoms_f64())
    }

    /// `atoms` is column-major `d × n`.
    pub fn from_atoms(d: usize, n: usize, atoms: Vec<f64>) -> Self {
        assert_eq!(atoms.len(), d * n);
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g: f64 = atoms[i * d..(i + 1) * d]
                    .iter()
                    .zip(&atoms[j * d..(j + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        Self {
            d,
            n,
            atoms,
            gram,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `Dᵀf`.
    pub fn correlations(&self, f: &[f64]) -> Vec<f64> {
        self.atoms
            .chunks_exact(self.d)
            .map(|a| a.iter().zip(f).map(|(x, y)| x * y).sum())
            .collect()
    }

    pub fn solve(&self, f: &[f64], alpha: f64, max_nonzeros: usize) -> SparseCode {
        self.solve_correlations(&self.correlations(f), alpha, max_nonzeros)
    }

    /// Solve given the correlations `c = Dᵀf`.
    pub fn solve_correlations(&self, c: &[f64], alpha: f64, max_nonzeros: usize) -> SparseCode {
        let n = self.n;
        let gram = &self.gram;
        let mut w = vec![0.0; n];
        let mut corr = c.to_vec();
        let mut active: Vec<usize> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        let mut is_active = vec![false; n];
        let mut banned = vec![false; n];
        let mut chol = Cholesky::default();
        let mut code = SparseCode::default();

        let argmax = |corr: &[f64], skip: &dyn Fn(usize) -> bool| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in corr.iter().enumerate() {
                if skip(j) {
                    continue;
                }
                if best.is_none_or(|(_, b)| v.abs() > b) {
                    best = Some((j, v.abs()));
                }
            }
            best
        };

        let Some((j0, mut lambda)) = argmax(&corr, &|_| false) else {
            return SparseCode::from_dense(w);
        };
        if lambda <= alpha + self.tol || max_nonzeros == 0 {
            return SparseCode::from_dense(w);
        }
        let mut pending = Some(j0);
        let mut just_dropped: Option<usize> = None;
        let mut reached = false;
        let mut chol_ok = true;
        let mut swapped: Vec<usize> = Vec::new();
        let max_steps = 8 * n + 64;

        loop {
            if let Some(j) = pending.take() {
                if active.len() >= max_nonzeros {
                    code.capped = true;
                    break;
                }
                let sj = if corr[j] >= 0.0 { 1.0 } else { -1.0 };
                if chol.push(gram, n, &active, j) {
                    active.push(j);
                    signs.push(sj);
                    is_active[j] = true;
                } else {
                    // d_j lies in the span of the active atoms. Moving along
                    // the null direction keeps both fit and l1 norm; go until
                    // an active coefficient reaches zero and swap it for j.
                    code.degenerate = true;
                    let g: Vec<f64> = active.iter().map(|&k| gram[k * n + j]).collect();
                    let y = chol.solve(&g);
                    let mut out: Option<(usize, f64)> = None;
                    for (k, &yk) in y.iter().enumerate() {
                        let wk = w[active[k]];
                        if wk * sj * yk > 0.0 {
                            let tau = wk / (sj * yk);
                            if out.is_none_or(|(_, t)| tau < t) {
                                out = Some((k, tau));
                            }
                        }
                    }
                    match out {
                        Some((k, tau)) => {
                            for (&a, &yk) in active.iter().zip(&y) {
                                w[a] -= tau * sj * yk;
                            }
                            let gone = active.remove(k);
                            signs.remove(k);
                            w[gone] = 0.0;
                            is_active[gone] = false;
                            banned[gone] = true;
                            swapped.push(gone);
                            w[j] = tau * sj;
                            active.push(j);
                            signs.push(sj);
                            is_active[j] = true;
                            chol_ok = chol.rebuild(gram, n, &active);
                        }
                        None => banned[j] = true,
                    }
                }
            }
            if active.is_empty() {
                match argmax(&corr, &|j| banned[j]) {
                    Some((j, v)) if v > alpha => {
                        pending = Some(j);
                        continue;
                    }
                    _ => break,
                }
            }
            code.steps += 1;
            if code.steps > max_steps {
                code.degenerate = true;
                break;
            }

            let delta = chol.solve(&signs);
            let mut a = vec![0.0; n];
            for (&ak, &dk) in active.iter().zip(&delta) {
                for (aj, g) in a.iter_mut().zip(&gram[ak * n..(ak + 1) * n]) {
                    *aj += g * dk;
                }
            }

            let mut t = lambda - alpha;
            let mut event = Event::End;
            for j in 0..n {
                if is_active[j] || banned[j] {
                    continue;
                }
                // A just-dropped atom sits on its old boundary; only the
                // opposite one can be crossed.
                let dropped_sign = (just_dropped == Some(j)).then(|| corr[j].signum());
                let up = 1.0 - a[j];
                if up > DENOM_EPS && dropped_sign != Some(1.0) {
                    let tj = (lambda - corr[j]).max(0.0) / up;
                    if tj < t {
                        t = tj;
                        event = Event::Enter(j);
                    }
                }
                let down = 1.0 + a[j];
                if down > DENOM_EPS && dropped_sign != Some(-1.0) {
                    let tj = (lambda + corr[j]).max(0.0) / down;
                    if tj < t {
                        t = tj;
                        event = Event::Enter(j);
                    }
                }
            }
            for (k, &j) in active.iter().enumerate() {
                if delta[k] * w[j] < 0.0 {
                    let tj = -w[j] / delta[k];
                    if tj < t {
                        t = tj;
                        event = Event::Drop(k);
                    }
                }
            }
            let t = t.max(0.0);

            for (&j, &dk) in active.iter().zip(&delta) {
                w[j] += t * dk;
            }
            for (cj, aj) in corr.iter_mut().zip(&a) {
                *cj -= t * aj;
            }
            lambda -= t;
            just_dropped = None;

            match event {
                Event::End => {
                    reached = true;
                    break;
                }
                Event::Enter(j) => pending = Some(j),
                Event::Drop(k) => {
                    let j = active.remove(k);
                    signs.remove(k);
                    w[j] = 0.0;
                    is_active[j] = false;
                    if !chol.rebuild(gram, n, &active) {
                        chol_ok = false;
                        code.degenerate = true;
                    }
                    just_dropped = Some(j);
                    for k in swapped.drain(..) {
                        banned[k] = false;
                    }
                }
            }
            // Re-derive correlations from w so rounding does not accumulate.
            corr.copy_from_slice(c);
            for &j in &active {
                for (cj, g) in corr.iter_mut().zip(&gram[j * n..(j + 1) * n]) {
                    *cj -= g * w[j];
                }
            }
            if lambda - alpha <= self.tol {
                reached = true;
                break;
            }
        }

        // At the end of the path the active coefficients solve
        // G_AA w_A = c_A - alpha s_A exactly; keep that if it agrees in sign.
        if reached && chol_ok && !active.is_empty() {
            let rhs: Vec<f64> = active.iter().zip(&signs).map(|(&j, &s)| c[j] - alpha * s).collect();
            let exact = chol.solve(&rhs);
            if exact.iter().zip(&signs).all(|(v, s)| v * s > 0.0) {
                for (&j, v) in active.iter().zip(exact) {
                    w[j] = v;
                }
            }
        }

        let SparseCode {
            degenerate,
            capped,
            steps,
            ..
        } = code;
        SparseCode {
            degenerate,
            capped,
            steps,
            ..SparseCode::from_dense(w)
        }
    }
}

/// Solve one Lasso problem along the LARS path.
pub fn lasso_lars(problem: &LassoProblem<'_>, max_nonzeros: usize, tol: f64) -> Result<SparseCode> {
    let dict = problem.dict;
    if problem.f.len() != dict.d() {
        return Err(contract(format!(
            "feature length {} does not match dictionary dimension {}",
            problem.f.len(),
            dict.d()
        )));
    }
    if !(problem.alpha >= 0.0) || !problem.alpha.is_finite() {
        return Err(contract(format!("alpha must be finite and >= 0, got {}", problem.alpha)));
    }
    if problem.f.iter().any(|v| !v.is_finite()) {
        return Err(contract("non-finite feature values"));
    }
    if !(tol >= 0.0) {
        return Err(contract(format!("tol must be >= 0, got {tol}")));
    }
    if max_nonzeros > dict.n() {
        return Err(contract(format!(
            "max_nonzeros {max_nonzeros} exceeds atom count {}",
            dict.n()
        )));
    }
    let f: Vec<f64> = problem.f.iter().map(|&v| v as f64).collect();
    Ok(LarsSolver::new(dict).with_tol(tol).solve(&f, problem.alpha, max_nonzeros))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    

    fn eye(n: usize) -> Dictionary {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Dictionary::from_columns(n, n, &a).unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_code() {
        let dict = eye(3);
        let code = lasso_lars(&LassoProblem { dict: &dict, f: &[0.0; 3], alpha: 1.0 }, 3, DEFAULT_TOL).unwrap();
        assert_eq!(code.coefficients, vec![0.0; 3]);
        assert!(code.support.is_empty());
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let dict = eye(2);
        let code = lasso_lars(&LassoProblem { dict: &dict, f: &[3.0, 0.5], alpha: 1.0 }, 2, DEFAULT_TOL).unwrap();
        assert_eq!(code.coefficients, vec![2.0, 0.0]);
        assert_eq!(code.support, vec![0]);
    }

    #[test]
    fn zero_alpha_is_projection() {
        // rotated orthonormal basis
        let (c, s) = (0.6f64, 0.8f64);
        let dict = Dictionary::from_columns(2, 2, &[c, s, -s, c]).unwrap();
        let f = [1.5f32, -0.25];
        let code = lasso_lars(&LassoProblem { dict: &dict, f: &f, alpha: 0.0 }, 2, DEFAULT_TOL).unwrap();
        for j in 0..2 {
            let proj: f64 = dict.atom(j).iter().zip(&f).map(|(a, b)| *a as f64 * *b as f64).sum();
            assert!((code.coefficients[j] - proj).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let dict = eye(2);
        assert!(lasso_lars(&LassoProblem { dict: &dict, f: &[1.0], alpha: 1.0 }, 2, DEFAULT_TOL).is_err());
        assert!(lasso_lars(&LassoProblem { dict: &dict, f: &[f32::NAN, 0.0], alpha: 1.0 }, 2, DEFAULT_TOL).is_err());
        assert!(lasso_lars(&LassoProblem { dict: &dict, f: &[1.0, 0.0], alpha: -1.0 }, 2, DEFAULT_TOL).is_err());
        assert!(lasso_lars(&LassoProblem { dict: &dict, f: &[1.0, 0.0], alpha: 1.0 }, 3, DEFAULT_TOL).is_err());
    }

    #[test]
    fn duplicate_atoms_are_flagged_not_fatal() {
        let dict = Dictionary::from_columns(2, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let code = lasso_lars(&LassoProblem { dict: &dict, f: &[3.0, 2.0], alpha: 0.5 }, 3, DEFAULT_TOL).unwrap();
        assert!(code.coefficients.iter().all(|v| v.is_finite()));
        // the combined weight on the duplicated direction is soft-thresholded
        assert!((code.coefficients[0] + code.coefficients[1] - 2.5).abs() < 1e-9);
        assert!((code.coefficients[2] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn cap_limits_support() {
        let mut rng = stream(1, "cap");
        let raw: Vec<f64> = (0..8 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dict = Dictionary::from_columns(8, 6, &raw).unwrap();
        let f: Vec<f32> = (0..8).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let code = lasso_lars(&LassoProblem { dict: &dict, f: &f, alpha: 0.0 }, 2, DEFAULT_TOL).unwrap();
        assert!(code.support.len() <= 2);
        assert!(code.capped);
    }
}
