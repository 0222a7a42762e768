//! Independent reference implementations used by the test suites.
#![allow(dead_code)]

use mdfsc::autoencoder::{ArchSpec, Autoencoder};
use mdfsc::metrics::ScoredLabel;
use mdfsc::ops;
use mdfsc::tensor::{Param, Scalar, Tensor4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- gradients

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

const FD_STEP: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor<T: Scalar>(dims: [usize; 4], v: &[f64]) -> Tensor4<T> {
    Tensor4::from_vec(dims, v.iter().map(|&x| T::from_f64_lossy(x)).collect()).unwrap()
}

fn to_f64<T: Scalar>(t: &Tensor4<T>) -> Vec<f64> {
    t.data().iter().map(|x| x.to_f64().unwrap()).collect()
}

fn dot(a: &Tensor4<f64>, r: &[f64]) -> f64 {
    a.data().iter().zip(r).map(|(x, y)| x * y).sum()
}

fn small_dims(rng: &mut ChaCha8Rng, even: bool) -> [usize; 4] {
    let side = |rng: &mut ChaCha8Rng| {
        if even {
            2 * rng.random_range(1..=4)
        } else {
            rng.random_range(1..=8)
        }
    };
    [rng.random_range(1..=2), rng.random_range(1..=4), side(rng), side(rng)]
}

/// Worst relative error per checked gradient, analytic at precision `T`
/// against finite differences at 64-bit.
pub struct GradResult {
    pub op: &'static str,
    pub worst: f64,
}

fn push(out: &mut Vec<GradResult>, op: &'static str, e: f64) {
    match out.iter_mut().find(|r| r.op == op) {
        Some(r) => r.worst = r.worst.max(e),
        None => out.push(GradResult { op, worst: e }),
    }
}

pub fn conv_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let [n, ic, h, w] = small_dims(rng, false);
    let oc = rng.random_range(1..=3);
    let (xd, wd, bd, od) = ([n, ic, h, w], [oc, ic, 3, 3], [oc, 1, 1, 1], [n, oc, h, w]);
    let x = uniform(rng, n * ic * h * w);
    let wv = uniform(rng, oc * ic * 9);
    let bv = uniform(rng, oc);
    let r = uniform(rng, n * oc * h * w);

    let mut wp = Param::new(tensor::<T>(wd, &wv));
    let mut bp = Param::new(tensor::<T>(bd, &bv));
    let dx = ops::conv2d_backward(&tensor::<T>(xd, &x), &mut wp, &mut bp, &tensor::<T>(od, &r)).unwrap();

    let loss = |x: &[f64], wv: &[f64], bv: &[f64]| {
        let y = ops::conv2d(
            &tensor::<f64>(xd, x),
            &Param::new(tensor(wd, wv)),
            &Param::new(tensor(bd, bv)),
        )
        .unwrap();
        dot(&y, &r)
    };
    push(out, "conv2d/input", rel_err(&to_f64(&dx), &central_diff(&x, FD_STEP, |x| loss(x, &wv, &bv))));
    push(out, "conv2d/weight", rel_err(&to_f64(&wp.grad), &central_diff(&wv, FD_STEP, |w| loss(&x, w, &bv))));
    push(out, "conv2d/bias", rel_err(&to_f64(&bp.grad), &central_diff(&bv, FD_STEP, |b| loss(&x, &wv, b))));
}

pub fn linear_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let (n, di, dout) = (rng.random_range(1..=3), rng.random_range(1..=12), rng.random_range(1..=6));
    let (xd, wd, bd, od) = ([n, di, 1, 1], [dout, di, 1, 1], [dout, 1, 1, 1], [n, dout, 1, 1]);
    let x = uniform(rng, n * di);
    let wv = uniform(rng, dout * di);
    let bv = uniform(rng, dout);
    let r = uniform(rng, n * dout);
    let mut wp = Param::new(tensor::<T>(wd, &wv));
    let mut bp = Param::new(tensor::<T>(bd, &bv));
    let dx = ops::linear_backward(&tensor::<T>(xd, &x), &mut wp, &mut bp, &tensor::<T>(od, &r)).unwrap();
    let loss = |x: &[f64], wv: &[f64], bv: &[f64]| {
        let y = ops::linear(&tensor::<f64>(xd, x), &Param::new(tensor(wd, wv)), &Param::new(tensor(bd, bv))).unwrap();
        dot(&y, &r)
    };
    push(out, "linear/input", rel_err(&to_f64(&dx), &central_diff(&x, FD_STEP, |x| loss(x, &wv, &bv))));
    push(out, "linear/weight", rel_err(&to_f64(&wp.grad), &central_diff(&wv, FD_STEP, |w| loss(&x, w, &bv))));
    push(out, "linear/bias", rel_err(&to_f64(&bp.grad), &central_diff(&bv, FD_STEP, |b| loss(&x, &wv, b))));
}

pub fn maxpool_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let dims = small_dims(rng, true);
    let len = dims.iter().product();
    // distinct values spaced well beyond the FD step, so no argmax flips
    let mut x: Vec<f64> = (0..len).map(|i| i as f64 * 0.01 - 0.5).collect();
    x.shuffle(rng);
    let (y, idx) = ops::maxpool2(&tensor::<T>(dims, &x)).unwrap();
    let r = uniform(rng, y.len());
    let dx = ops::maxpool2_backward(dims, &idx, &tensor::<T>(y.dims(), &r)).unwrap();
    let fd = central_diff(&x, FD_STEP, |x| dot(&ops::maxpool2(&tensor::<f64>(dims, x)).unwrap().0, &r));
    push(out, "maxpool2", rel_err(&to_f64(&dx), &fd));
}

pub fn relu_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let dims = small_dims(rng, false);
    let len = dims.iter().product();
    // keep away from the kink at 0
    let x: Vec<f64> = (0..len)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let r = uniform(rng, len);
    let dx = ops::relu_backward(&tensor::<T>(dims, &x), &tensor::<T>(dims, &r)).unwrap();
    let fd = central_diff(&x, FD_STEP, |x| dot(&ops::relu(&tensor::<f64>(dims, x)), &r));
    push(out, "relu", rel_err(&to_f64(&dx), &fd));
}

pub fn upsample_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let dims = small_dims(rng, false);
    let x = uniform(rng, dims.iter().product());
    let od = [dims[0], dims[1], dims[2] * 2, dims[3] * 2];
    let r = uniform(rng, od.iter().product());
    let dx = ops::upsample2_backward(&tensor::<T>(od, &r)).unwrap();
    let fd = central_diff(&x, FD_STEP, |x| dot(&ops::upsample2(&tensor::<f64>(dims, x)), &r));
    push(out, "upsample2", rel_err(&to_f64(&dx), &fd));
}

pub fn l2_case<T: Scalar>(rng: &mut ChaCha8Rng, out: &mut Vec<GradResult>) {
    let dims = small_dims(rng, false);
    let p = uniform(rng, dims.iter().product());
    let t = uniform(rng, p.len());
    let dp = ops::l2_loss_backward(&tensor::<T>(dims, &p), &tensor::<T>(dims, &t)).unwrap();
    let tt = tensor::<f64>(dims, &t);
    let fd = central_diff(&p, FD_STEP, |p| ops::l2_loss(&tensor::<f64>(dims, p), &tt).unwrap());
    push(out, "l2_loss", rel_err(&to_f64(&dp), &fd));
}

/// Every kernel op, `trials` random instances each.
pub fn op_gradient_suite<T: Scalar>(trials: usize, rng: &mut ChaCha8Rng) -> Vec<GradResult> {
    let mut out = Vec::new();
    for _ in 0..trials {
        conv_case::<T>(rng, &mut out);
        linear_case::<T>(rng, &mut out);
        maxpool_case::<T>(rng, &mut out);
        relu_case::<T>(rng, &mut out);
        upsample_case::<T>(rng, &mut out);
        l2_case::<T>(rng, &mut out);
    }
    out
}

pub fn tiny_arch(channels: usize, head: bool) -> ArchSpec {
    ArchSpec {
        stage_widths: [2, 3, 3, 4, 4],
        convs_per_stage: [1, 1, 2, 1, 1],
        latent_dim: 5,
        input_channels: channels,
        with_linear_head: head,
        head_input_side: 32,
    }
}

/// Model with random biases, so no activation sits exactly on a ReLU kink
/// (zero biases put whole dead channels at 0).
pub fn with_random_biases(mut model: Autoencoder, rng: &mut ChaCha8Rng) -> Autoencoder {
    for (i, p) in model.params_mut().enumerate() {
        if i % 2 == 1 {
            p.value.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5f32..0.5));
        }
    }
    model
}

/// Whole-network gradient of `Σ output·r` for input and every parameter,
/// analytic at 32-bit against finite differences on the 64-bit copy.
/// Returns `(input error, worst parameter error)`.
pub fn autoencoder_gradient(model: &Autoencoder, x: &Tensor4, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut m32 = model.clone();
    let out_dims = m32.forward(x).unwrap().dims();
    let r = uniform(rng, out_dims.iter().product());
    let trace = m32.forward_trace(x).unwrap();
    let dx = m32.backward(trace, tensor::<f32>(out_dims, &r)).unwrap();

    let m64: Autoencoder<f64> = model.cast();
    let xd = x.dims();
    let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let loss = |m: &Autoencoder<f64>, x: &[f64]| dot(&m.forward(&tensor(xd, x)).unwrap(), &r);
    let input_err = rel_err(&to_f64(&dx), &central_diff(&xv, FD_STEP, |x| loss(&m64, x)));

    let grads: Vec<Vec<f64>> = m32.named_params().iter().map(|(_, p)| to_f64(&p.grad)).collect();
    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        let mut m = m64.clone();
        let base = to_f64(&m.named_params()[pi].1.value);
        let fd = central_diff(&base, FD_STEP, |v| {
            let p = m.params_mut().nth(pi).unwrap();
            p.value.data_mut().copy_from_slice(v);
            let l = loss(&m, &xv);
            l
        });
        worst = worst.max(rel_err(g, &fd));
    }
    (input_err, worst)
}

// -------------------------------------------------------------------- lasso

pub fn lasso_objective(atoms: &[f64], d: usize, f: &[f64], w: &[f64], alpha: f64) -> f64 {
    let r = residual_vec(atoms, d, f, w);
    0.5 * r.iter().map(|v| v * v).sum::<f64>() + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// `D·w` for column-major `atoms`.
fn mul(atoms: &[f64], d: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (col, &wj) in atoms.chunks_exact(d).zip(w) {
        for (o, a) in out.iter_mut().zip(col) {
            *o += a * wj;
        }
    }
    out
}

fn residual_vec(atoms: &[f64], d: usize, f: &[f64], w: &[f64]) -> Vec<f64> {
    f.iter().zip(mul(atoms, d, w)).map(|(a, b)| a - b).collect()
}

fn correlations(atoms: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    atoms.chunks_exact(d).map(|c| c.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Largest violation of the Lasso optimality conditions.
pub fn kkt_violation(atoms: &[f64], d: usize, f: &[f64], w: &[f64], alpha: f64) -> f64 {
    let c = correlations(atoms, d, &residual_vec(atoms, d, f, w));
    c.iter()
        .zip(w)
        .map(|(&cj, &wj)| {
            if wj != 0.0 {
                (cj - alpha * wj.signum()).abs()
            } else {
                (cj.abs() - alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Accelerated proximal gradient (FISTA) run to convergence.
pub fn fista(atoms: &[f64], d: usize, f: &[f64], alpha: f64, iters: usize) -> Vec<f64> {
    let n = atoms.len() / d;
    // Lipschitz constant ‖D‖² by power iteration
    let mut v = vec![1.0; n];
    let mut lip = 1.0;
    for _ in 0..200 {
        let u = correlations(atoms, d, &mul(atoms, d, &v));
        lip = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lip == 0.0 {
            return vec![0.0; n];
        }
        v = u.iter().map(|x| x / lip).collect();
    }
    let step = 1.0 / (lip * 1.0001);
    let mut w = vec![0.0; n];
    let mut y = w.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = correlations(atoms, d, &residual_vec(atoms, d, f, &y));
        let next: Vec<f64> = y
            .iter()
            .zip(&g)
            .map(|(yi, gi)| {
                let z = yi + step * gi;
                z.signum() * (z.abs() - step * alpha).max(0.0)
            })
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = next
            .iter()
            .zip(&w)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        w = next;
        t = t_next;
    }
    w
}

// ------------------------------------------------------------------ metrics

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` over all pairs.
pub fn auc_pairwise(items: &[ScoredLabel]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for p in items.iter().filter(|i| i.positive) {
        for q in items.iter().filter(|i| !i.positive) {
            pairs += 1.0;
            if p.score > q.score {
                num += 1.0;
            } else if p.score == q.score {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Sweep every distinct threshold, highest first, predicting positive for
/// `score ≥ t`.
pub fn ap_threshold_sweep(items: &[ScoredLabel]) -> f64 {
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = items.iter().filter(|i| i.positive).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let predicted: Vec<&ScoredLabel> = items.iter().filter(|i| i.score >= t).collect();
        let tp = predicted.iter().filter(|i| i.positive).count() as f64;
        let recall = tp / n_pos;
        let precision = tp / predicted.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Random labeled scores; `levels` > 0 draws scores from that many values
/// to force ties.
pub fn random_scored(rng: &mut ChaCha8Rng, n: usize, levels: usize) -> Vec<ScoredLabel> {
    loop {
        let items: Vec<ScoredLabel> = (0..n)
            .map(|_| {
                let s = if levels > 0 {
                    rng.random_range(0..levels) as f64
                } else {
                    rng.random::<f64>()
                };
                ScoredLabel::new(s, rng.random_bool(0.5))
            })
            .collect();
        let pos = items.iter().filter(|i| i.positive).count();
        if pos > 0 && pos < n {
            return items;
        }
    }
}
