mod oracles;

use mdfsc::rng::stream;
use mdfsc::sparse::{lasso_lars, Dictionary, LassoProblem, DEFAULT_TOL};
use oracles::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, max_d: usize, max_n: usize) -> (Dictionary, Vec<f32>) {
    let d = rng.random_range(2..=max_d);
    let n = rng.random_range(1..=max_n);
    let raw: Vec<f64> = (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dict = Dictionary::from_columns(d, n, &raw).unwrap();
    let scale = rng.random_range(0.5..12.0);
    let f = (0..d).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
    (dict, f)
}

fn solve(dict: &Dictionary, f: &[f32], alpha: f64) -> Vec<f64> {
    let p = LassoProblem { dict, f, alpha };
    lasso_lars(&p, dict.n(), DEFAULT_TOL).unwrap().coefficients
}

#[test]
fn kkt_certificate_on_random_problems() {
    let mut rng = stream(11, "kkt");
    for i in 0..150 {
        let (dict, f) = random_problem(&mut rng, 16, 24);
        let alpha = [0.1, 1.0, 5.0][i % 3];
        let w = solve(&dict, &f, alpha);
        let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
        let v = kkt_violation(&dict.atoms_f64(), dict.d(), &f64s, &w, alpha);
        assert!(v <= 1e-6, "problem {i}: violation {v:e}");
    }
}

#[test]
fn objective_matches_proximal_gradient_oracle() {
    let mut rng = stream(12, "ista");
    for i in 0..100 {
        let (dict, f) = random_problem(&mut rng, 8, 12);
        let alpha = [0.1, 1.0, 5.0][i % 3];
        let atoms = dict.atoms_f64();
        let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
        let lars = lasso_objective(&atoms, dict.d(), &f64s, &solve(&dict, &f, alpha), alpha);
        let ista = lasso_objective(&atoms, dict.d(), &f64s, &fista(&atoms, dict.d(), &f64s, alpha, 20000), alpha);
        assert!(lars <= ista + 1e-8, "problem {i}: lars {lars} oracle {ista}");
    }
}

#[test]
fn small_example_against_oracle() {
    let mut rng = stream(13, "d4n5");
    let raw: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dict = Dictionary::from_columns(4, 5, &raw).unwrap();
    let f = [2.0f32, -1.5, 0.7, 3.1];
    let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
    let atoms = dict.atoms_f64();
    let lars = lasso_objective(&atoms, 4, &f64s, &solve(&dict, &f, 1.0), 1.0);
    let ista = lasso_objective(&atoms, 4, &f64s, &fista(&atoms, 4, &f64s, 1.0, 50000), 1.0);
    assert!((lars - ista).abs() <= 1e-8, "{lars} vs {ista}");
}

#[test]
fn l1_norm_shrinks_with_alpha() {
    let mut rng = stream(14, "homotopy");
    for _ in 0..30 {
        let (dict, f) = random_problem(&mut rng, 10, 15);
        let mut prev = f64::INFINITY;
        for k in 0..25 {
            let alpha = 0.05 * 1.3f64.powi(k);
            let l1: f64 = solve(&dict, &f, alpha).iter().map(|v| v.abs()).sum();
            assert!(l1 <= prev + 1e-9, "alpha {alpha}: {l1} > {prev}");
            prev = l1;
        }
    }
}


