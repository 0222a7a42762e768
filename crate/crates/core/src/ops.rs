//! Layer kernels with hand-scheduled backward passes.
//!
//! Every forward has a paired backward that takes the forward's input (and
//! whatever the forward recorded) plus the output gradient, accumulates into
//! parameter gradients, and returns the input gradient.

use crate::error::{contract, Result};
use crate::tensor::{Param, Scalar, Tensor4};

/// Upper bound on im2col buffer elements; larger batches are processed in chunks.
const IM2COL_BUDGET: usize = 1 << 24;

fn check_conv(input: &Tensor4<impl Scalar>, w: [usize; 4], b: [usize; 4]) -> Result<()> {
    if w[2] != 3 || w[3] != 3 {
        return Err(contract(format!("conv2d expects 3x3 kernels, got {w:?}")));
    }
    if input.c() != w[1] {
        return Err(contract(format!(
            "conv2d: input has {} channels, weight expects {}",
            input.c(),
            w[1]
        )));
    }
    if b[0] != w[0] || b[1..] != [1, 1, 1] {
        return Err(contract(format!("conv2d: bias dims {b:?} for weight {w:?}")));
    }
    if input.h() == 0 || input.w() == 0 {
        return Err(contract("conv2d: empty spatial dims"));
    }
    Ok(())
}

fn chunk_items(c: usize, hw: usize, n: usize) -> usize {
    (IM2COL_BUDGET / (c * 9 * hw).max(1)).clamp(1, n.max(1))
}

/// Unfold items `[n0, n0+nb)` into a `(c·9) × (nb·h·w)` matrix, padding 1.
fn im2col<T: Scalar>(x: &Tensor4<T>, n0: usize, nb: usize, cols: &mut Vec<T>) {
    let [_, c, h, w] = x.dims();
    let hw = h * w;
    let width = nb * hw;
    cols.clear();
    cols.resize(c * 9 * width, T::zero());
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * width..][..width];
                for b in 0..nb {
                    let src = &x.item(n0 + b)[ci * hw..(ci + 1) * hw];
                    let dst = &mut row[b * hw..(b + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        // dst[x] = src[x + kx - 1]
                        match kx {
                            0 => dst_row[1..].copy_from_slice(&src_row[..w - 1]),
                            1 => dst_row.copy_from_slice(src_row),
                            _ => dst_row[..w - 1].copy_from_slice(&src_row[1..]),
                        }
                    }
                }
            }
        }
    }
}

/// Fold a `(c·9) × (nb·h·w)` gradient matrix back onto items `[n0, n0+nb)`.
fn col2im<T: Scalar>(cols: &[T], dx: &mut Tensor4<T>, n0: usize, nb: usize) {
    let [_, c, h, w] = dx.dims();
    let hw = h * w;
    let width = nb * hw;
    for b in 0..nb {
        let item = dx.item_mut(n0 + b);
        for ci in 0..c {
            let dst = &mut item[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((ci * 9) + ky * 3 + kx) * width..][b * hw..(b + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        let src_row = &row[y * w..(y + 1) * w];
                        match kx {
                            0 => dst_row[..w - 1]
                                .iter_mut()
                                .zip(&src_row[1..])
                                .for_each(|(d, &s)| *d += s),
                            1 => dst_row.iter_mut().zip(src_row).for_each(|(d, &s)| *d += s),
                            _ => dst_row[1..]
                                .iter_mut()
                                .zip(&src_row[..w - 1])
                                .for_each(|(d, &s)| *d += s),
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
pub fn conv2d<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Param<T>,
    bias: &Param<T>,
) -> Result<Tensor4<T>> {
    let wd = weight.value.dims();
    check_conv(input, wd, bias.value.dims())?;
    let [n, c, h, w] = input.dims();
    let oc = wd[0];
    let hw = h * w;
    let mut out = Tensor4::zeros([n, oc, h, w]);
    let chunk = chunk_items(c, hw, n);
    let mut cols = Vec::new();
    let mut prod = Vec::new();
    let bias = bias.value.data();
    let mut n0 = 0;
    while n0 < n {
        let nb = chunk.min(n - n0);
        im2col(input, n0, nb, &mut cols);
        prod.clear();
        prod.resize(oc * nb * hw, T::zero());
        T::matmul(
            oc,
            c * 9,
            nb * hw,
            weight.value.data(),
            false,
            &cols,
            false,
            &mut prod,
            false,
        );
        for b in 0..nb {
            let item = out.item_mut(n0 + b);
            for o in 0..oc {
                let src = &prod[o * nb * hw + b * hw..][..hw];
                item[o * hw..(o + 1) * hw]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, &s)| *d = s + bias[o]);
            }
        }
        n0 += nb;
    }
    Ok(out)
}

/// Backward of [`conv2d`]: accumulates into `weight.grad` and `bias.grad`,
/// returns the input gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &mut Param<T>,
    bias: &mut Param<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let wd = weight.value.dims();
    check_conv(input, wd, bias.value.dims())?;
    let [n, c, h, w] = input.dims();
    let oc = wd[0];
    if grad_out.dims() != [n, oc, h, w] {
        return Err(contract(format!(
            "conv2d backward: grad dims {:?}, expected {:?}",
            grad_out.dims(),
            [n, oc, h, w]
        )));
    }
    let hw = h * w;
    let mut dx = Tensor4::zeros(input.dims());
    let chunk = chunk_items(c.max(oc), hw, n);
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    let mut gmat = Vec::new();
    let mut n0 = 0;
    while n0 < n {
        let nb = chunk.min(n - n0);
        // (oc) × (nb·hw) view of the output gradient
        gmat.clear();
        gmat.resize(oc * nb * hw, T::zero());
        for b in 0..nb {
            let item = grad_out.item(n0 + b);
            for o in 0..oc {
                gmat[o * nb * hw + b * hw..][..hw].copy_from_slice(&item[o * hw..(o + 1) * hw]);
            }
        }
        {
            let bg = bias.grad.data_mut();
            for o in 0..oc {
                let mut s = T::zero();
                for &g in &gmat[o * nb * hw..(o + 1) * nb * hw] {
                    s += g;
                }
                bg[o] += s;
            }
        }
        im2col(input, n0, nb, &mut cols);
        T::matmul(
            oc,
            nb * hw,
            c * 9,
            &gmat,
            false,
            &cols,
            true,
            weight.grad.data_mut(),
            true,
        );
        dcols.clear();
        dcols.resize(c * 9 * nb * hw, T::zero());
        T::matmul(
            c * 9,
            oc,
            nb * hw,
            weight.value.data(),
            true,
            &gmat,
            false,
            &mut dcols,
            false,
        );
        col2im(&dcols, &mut dx, n0, nb);
        n0 += nb;
    }
    Ok(dx)
}

/// Flat input offsets of each pooled maximum, in output order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxIndices(pub Vec<usize>);

/// 2×2 max pool, stride 2. Ties go to the first element in row-major order.
pub fn maxpool2<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, ArgmaxIndices)> {
    let [n, c, h, w] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(contract(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut idx = Vec::with_capacity(out.len());
    let src = input.data();
    let dst = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let o = base + 2 * y * w + 2 * x;
                let mut best = o;
                for cand in [o + 1, o + w, o + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[k] = src[best];
                idx.push(best);
                k += 1;
            }
        }
    }
    Ok((out, ArgmaxIndices(idx)))
}

pub fn maxpool2_backward<T: Scalar>(
    input_dims: [usize; 4],
    indices: &ArgmaxIndices,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if grad_out.len() != indices.0.len() {
        return Err(contract("maxpool2 backward: gradient/index length mismatch"));
    }
    let mut dx = Tensor4::zeros(input_dims);
    let d = dx.data_mut();
    for (&i, &g) in indices.0.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.dims() != grad_out.dims() {
        return Err(contract("relu backward: dims mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

fn check_linear(input: &Tensor4<impl Scalar>, w: [usize; 4], b: [usize; 4]) -> Result<()> {
    if input.h() != 1 || input.w() != 1 || w[2..] != [1, 1] {
        return Err(contract("linear operates on rank-2 (rows, cols, 1, 1) tensors"));
    }
    if input.c() != w[1] {
        return Err(contract(format!(
            "linear: input width {} but weight expects {}",
            input.c(),
            w[1]
        )));
    }
    if b != [w[0], 1, 1, 1] {
        return Err(contract(format!("linear: bias dims {b:?} for weight {w:?}")));
    }
    Ok(())
}

/// `input · weightᵀ + bias` for `input: (n, d_in)`, `weight: (d_out, d_in)`.
pub fn linear<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Param<T>,
    bias: &Param<T>,
) -> Result<Tensor4<T>> {
    let wd = weight.value.dims();
    check_linear(input, wd, bias.value.dims())?;
    let (n, d_in, d_out) = (input.n(), wd[1], wd[0]);
    let mut out = Tensor4::zeros([n, d_out, 1, 1]);
    T::matmul(
        n,
        d_in,
        d_out,
        input.data(),
        false,
        weight.value.data(),
        true,
        out.data_mut(),
        false,
    );
    let b = bias.value.data();
    for row in out.data_mut().chunks_mut(d_out) {
        row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
    }
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &mut Param<T>,
    bias: &mut Param<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let wd = weight.value.dims();
    check_linear(input, wd, bias.value.dims())?;
    let (n, d_in, d_out) = (input.n(), wd[1], wd[0]);
    if grad_out.dims() != [n, d_out, 1, 1] {
        return Err(contract("linear backward: gradient dims mismatch"));
    }
    T::matmul(
        d_out,
        n,
        d_in,
        grad_out.data(),
        true,
        input.data(),
        false,
        weight.grad.data_mut(),
        true,
    );
    let bg = bias.grad.data_mut();
    for row in grad_out.data().chunks(d_out) {
        bg.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    let mut dx = Tensor4::zeros(input.dims());
    T::matmul(
        n,
        d_out,
        d_in,
        grad_out.data(),
        false,
        weight.value.data(),
        false,
        dx.data_mut(),
        false,
    );
    Ok(dx)
}

/// Area-average downscale by an integer factor (block mean).
pub fn downscale<T: Scalar>(input: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(contract(format!(
            "downscale: {h}x{w} is not divisible by factor {factor}"
        )));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_usize(factor * factor).unwrap();
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut s = T::zero();
                for dy in 0..factor {
                    let row = base + (y * factor + dy) * w + x * factor;
                    for &v in &src[row..row + factor] {
                        s += v;
                    }
                }
                dst[(plane * oh + y) * ow + x] = s * inv;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            let srow = &src[(plane * h + y / 2) * w..][..w];
            let drow = &mut dst[(plane * oh + y) * ow..][..ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / 2];
            }
        }
    }
    out
}

/// Sums each 2×2 block of the output gradient.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, oh, ow] = grad_out.dims();
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(contract("upsample2 backward: odd gradient dims"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let src = grad_out.data();
    let dst = dx.data_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                dst[(plane * h + y / 2) * w + x / 2] += src[(plane * oh + y) * ow + x];
            }
        }
    }
    Ok(dx)
}

/// Mean squared difference.
pub fn l2_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    if pred.dims() != target.dims() {
        return Err(contract(format!(
            "l2_loss: dims {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(contract("l2_loss of empty tensors"));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).to_f64().unwrap();
            d * d
        })
        .sum();
    Ok(T::from_f64_lossy(sum / pred.len() as f64))
}

/// Gradient of [`l2_loss`] with respect to `pred`.
pub fn l2_loss_backward<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    if pred.dims() != target.dims() {
        return Err(contract("l2_loss backward: dims mismatch"));
    }
    let scale = T::from_f64_lossy(2.0 / pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * scale)
        .collect();
    Tensor4::from_vec(pred.dims(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update per parameter; gradients are zeroed after.
pub fn adam_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Param<T>>,
    cfg: &AdamConfig,
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let eps = T::from_f64_lossy(cfg.eps);
    for p in params {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64_lossy(cfg.lr);
        let Param {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = p;
        for (((x, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(adam_m.data_mut())
            .zip(adam_v.data_mut())
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<T> {
        let n: usize = dims.iter().product();
        Tensor4::from_vec(
            dims,
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>) -> Tensor4<f64> {
        let [n, c, h, wd] = x.dims();
        let oc = w.n();
        let mut out = Tensor4::zeros([n, oc, h, wd]);
        for bi in 0..n {
            for o in 0..oc {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = b.data()[o];
                        for ci in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                        s += x.get(bi, ci, sy as usize, sx as usize)
                                            * w.get(o, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set(bi, o, y, xx, s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Param::new(rand_tensor::<f32>(&mut rng, [2, 1, 3, 3]));
        let b = Param::new(Tensor4::from_vec([2, 1, 1, 1], vec![0.5, -1.5]).unwrap());
        let out = conv2d(&Tensor4::zeros([1, 1, 3, 3]), &w, &b).unwrap();
        assert!(out.item(0)[..9].iter().all(|&v| v == 0.5));
        assert!(out.item(0)[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor::<f32>(&mut rng, [2, 1, 5, 4]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Param::new(Tensor4::from_vec([1, 1, 3, 3], k).unwrap());
        let b = Param::new(Tensor4::zeros([1, 1, 1, 1]));
        assert_eq!(conv2d(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor::<f64>(&mut rng, [1, 2, 4, 4]);
        let w = rand_tensor::<f64>(&mut rng, [3, 2, 3, 3]);
        let b = rand_tensor::<f64>(&mut rng, [3, 1, 1, 1]);
        let expect = naive_conv(&x, &w, &b);
        let got = conv2d(&x.cast::<f32>(), &Param::new(w.cast()), &Param::new(b.cast())).unwrap();
        for (g, e) in got.data().iter().zip(expect.data()) {
            assert!((*g as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let w = Param::new(Tensor4::<f32>::zeros([1, 2, 3, 3]));
        let b = Param::new(Tensor4::zeros([1, 1, 1, 1]));
        assert!(conv2d(&Tensor4::zeros([1, 3, 4, 4]), &w, &b).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.0, vec![3]);

        let x = Tensor4::<f32>::filled([1, 1, 2, 4], 7.0);
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[7.0, 7.0]);
        assert_eq!(idx.0, vec![0, 2]);

        assert!(maxpool2(&Tensor4::<f32>::zeros([1, 1, 3, 2])).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor::<f32>(&mut rng, [1, 3, 8, 8]);
        let (y, _) = maxpool2(&x).unwrap();
        for c in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.get(0, c, 2 * oy + dy, 2 * ox + dx))
                        .fold(f32::NEG_INFINITY, f32::max);
                    assert_eq!(y.get(0, c, oy, ox), m);
                }
            }
        }
    }

    #[test]
    fn maxpool_backward_routes_to_one_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor::<f32>(&mut rng, [2, 2, 4, 4]);
        let (y, idx) = maxpool2(&x).unwrap();
        let g = Tensor4::filled(y.dims(), 1.0);
        let dx = maxpool2_backward(x.dims(), &idx, &g).unwrap();
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), y.len());
        assert_eq!(dx.data().iter().sum::<f32>(), y.len() as f32);
    }

    #[test]
    fn relu_examples() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor4::filled([1, 1, 1, 3], 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
        let neg = Tensor4::<f32>::filled([1, 2, 2, 2], -3.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_examples() {
        let x = Tensor4::<f32>::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = Param::new(Tensor4::matrix(3, 3, eye).unwrap());
        let b = Param::new(Tensor4::zeros([3, 1, 1, 1]));
        assert_eq!(linear(&x, &w, &b).unwrap(), x);

        let b = Param::new(Tensor4::from_vec([3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let z = linear(&Tensor4::zeros([2, 3, 1, 1]), &w, &b).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor::<f32>(&mut rng, [2, 3, 1, 1]);
        let w = rand_tensor::<f32>(&mut rng, [4, 3, 1, 1]);
        let b = rand_tensor::<f32>(&mut rng, [4, 1, 1, 1]);
        let y = linear(&x, &Param::new(w.clone()), &Param::new(b.clone())).unwrap();
        for i in 0..2 {
            for o in 0..4 {
                let mut s = b.data()[o];
                for k in 0..3 {
                    s += x.data()[i * 3 + k] * w.data()[o * 3 + k];
                }
                assert!((y.data()[i * 4 + o] - s).abs() < 1e-5);
            }
        }
        assert!(linear(&rand_tensor::<f32>(&mut rng, [2, 5, 1, 1]), &Param::new(w), &Param::new(b)).is_err());
    }

    #[test]
    fn downscale_examples() {
        let x = Tensor4::<f32>::filled([1, 2, 8, 8], 0.25);
        assert_eq!(downscale(&x, 4).unwrap(), Tensor4::filled([1, 2, 2, 2], 0.25));
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(downscale(&x, 2).unwrap().data(), &[3.0]);
        assert!(downscale(&Tensor4::<f32>::zeros([1, 1, 6, 6]), 4).is_err());
    }

    #[test]
    fn downscale_matches_block_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor::<f64>(&mut rng, [1, 3, 16, 16]);
        let y = downscale(&x, 4).unwrap();
        for c in 0..3 {
            for by in 0..4 {
                for bx in 0..4 {
                    let mut s = 0.0;
                    for yy in 0..4 {
                        for xx in 0..4 {
                            s += x.get(0, c, by * 4 + yy, bx * 4 + xx);
                        }
                    }
                    assert!((y.get(0, c, by, bx) - s / 16.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(upsample2(&x).data(), &[1.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor::<f32>(&mut rng, [2, 3, 5, 3]);
        assert_eq!(downscale(&upsample2(&x), 2).unwrap(), x);
    }

    #[test]
    fn l2_examples() {
        let a = Tensor4::<f32>::filled([1, 1, 2, 2], 3.0);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor4::<f32>::filled([1, 1, 2, 2], 1.0);
        assert_eq!(l2_loss(&a, &b).unwrap(), 4.0);
        assert!(l2_loss(&a, &Tensor4::zeros([1, 1, 2, 1])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = rand_tensor::<f32>(&mut rng, [2, 2, 3, 3]);
        let t = rand_tensor::<f32>(&mut rng, [2, 2, 3, 3]);
        let mut s = 0.0f64;
        for (x, y) in p.data().iter().zip(t.data()) {
            s += ((x - y) as f64).powi(2);
        }
        assert!((l2_loss(&p, &t).unwrap() as f64 - s / 36.0).abs() < 1e-6);
    }

    #[test]
    fn adam_examples() {
        let mut p = Param::new(Tensor4::<f32>::filled([1, 1, 1, 1], 0.5));
        adam_step([&mut p], &AdamConfig::default());
        assert_eq!(p.value.data(), &[0.5]);
        assert_eq!(p.step_count, 1);

        // First step: m̂ = g, v̂ = g², update = lr·g/(|g|+ε) ≈ lr.
        let mut p = Param::new(Tensor4::<f64>::filled([1, 1, 1, 1], 0.5));
        p.grad.fill(1.0);
        adam_step([&mut p], &AdamConfig::with_lr(1e-4));
        let expect = 0.5 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expect).abs() < 1e-15);
        assert_eq!(p.grad.data(), &[0.0]);
        assert!(p.adam_v.data()[0] >= 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut a = Param::new(rand_tensor::<f32>(&mut rng, [2, 2, 2, 2]));
        let g = rand_tensor::<f32>(&mut rng, [2, 2, 2, 2]);
        let mut b = a.clone();
        for _ in 0..3 {
            a.grad = g.clone();
            b.grad = g.clone();
            adam_step([&mut a], &AdamConfig::default());
            adam_step([&mut b], &AdamConfig::default());
        }
        assert_eq!(a, b);
    }
}
