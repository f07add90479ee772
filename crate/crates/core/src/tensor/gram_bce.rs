//! Weighted sigmoid cross-entropy of `Z Z^T` against a sparse binary target,
//! visiting only the upper triangle of the Gram matrix.

use crate::tensor::numeric::softplus_and_sigmoid;
use crate::tensor::{dot, SparseMat};

/// Products of `1 + e^{-|x|}` are flushed through one `ln` this often; each
/// factor is in `(1, 2]` so the running product stays below `2^64`.
const LOG_FLUSH: usize = 64;

/// Returns `(Σ_ij loss_ij, dL/dZ)` where the gradient is already multiplied
/// by `grad_scale`. `zd` is row-major `n x d`.
pub(crate) fn gram_bce(
    zd: &[f64],
    n: usize,
    d: usize,
    target: &SparseMat,
    pos_weight: f64,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    macro_rules! dispatch {
        ($($w:literal)*) => {
            match d {
                $($w => gram_bce_width::<$w>(zd, n, target, pos_weight, grad_scale),)*
                _ => gram_bce_any(zd, n, d, target, pos_weight, grad_scale),
            }
        };
    }
    dispatch!(1 2 4 8 16 32 64)
}

fn gram_bce_width<const D: usize>(
    zd: &[f64],
    n: usize,
    target: &SparseMat,
    pos_weight: f64,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { gram_bce_width_avx2::<D>(zd, n, target, pos_weight, grad_scale) };
    }
    gram_bce_width_body::<D>(zd, n, target, pos_weight, grad_scale)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gram_bce_width_avx2<const D: usize>(
    zd: &[f64],
    n: usize,
    target: &SparseMat,
    pos_weight: f64,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    gram_bce_width_body::<D>(zd, n, target, pos_weight, grad_scale)
}

/// `1 + e^{-|x|}`, `max(x, 0)` and `sigmoid(x)`, so that
/// `softplus(x) = max(x, 0) + ln(1 + e^{-|x|})`.
#[inline(always)]
fn split_softplus(x: f64) -> (f64, f64, f64) {
    let e = (-x.abs()).exp();
    let r = 1.0 / (1.0 + e);
    let s = if x >= 0.0 { r } else { e * r };
    (1.0 + e, x.max(0.0), s)
}

/// `Σ softplus(x_k)` over a slice, writing `sigmoid(x_k)` into `sig`.
pub(crate) fn softplus_sum_and_sigmoid(x: &[f64], sig: &mut [f64]) -> f64 {
    let mut logs = 0.0;
    let mut relu = 0.0;
    for (xc, sc) in x.chunks(LOG_FLUSH).zip(sig.chunks_mut(LOG_FLUSH)) {
        let mut prod = 1.0;
        for (&v, s) in xc.iter().zip(sc) {
            let (p, r, sv) = split_softplus(v);
            prod *= p;
            relu += r;
            *s = sv;
        }
        logs += prod.ln();
    }
    relu + logs
}

/// Loss of the row segment `j >= i` with every entry treated as a negative.
/// Writes `sigmoid(logit_j)` into `coef_j`.
#[inline(always)]
fn negative_pass(i: usize, logit: &[f64], coef: &mut [f64]) -> (f64, f64) {
    let (prod_diag, relu_diag, s_diag) = split_softplus(logit[i]);
    coef[i] = s_diag;
    let diag = relu_diag + prod_diag.ln();
    (
        diag,
        softplus_sum_and_sigmoid(&logit[i + 1..], &mut coef[i + 1..]),
    )
}

/// Replaces the negative-label terms of row `i`'s stored positives.
#[inline(always)]
fn patch_positives(
    i: usize,
    target: &SparseMat,
    pos_weight: f64,
    logit: &[f64],
    coef: &mut [f64],
    diag: &mut f64,
    off: &mut f64,
) {
    let (pos, _) = target.row(i);
    for &j in &pos[pos.partition_point(|&j| j < i)..] {
        let x = logit[j];
        let (sp, s) = softplus_and_sigmoid(x);
        let l = pos_weight * (sp - x);
        if j == i {
            *diag = l;
        } else {
            *off += l - sp;
        }
        coef[j] = pos_weight * (s - 1.0);
    }
}

#[inline(always)]
fn gram_bce_width_body<const D: usize>(
    zd: &[f64],
    n: usize,
    target: &SparseMat,
    pos_weight: f64,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    let row = |k: usize| -> &[f64; D] { zd[k * D..(k + 1) * D].try_into().expect("row width") };
    let mut grad = vec![0.0; n * D];
    let mut logit = vec![0.0; n];
    let mut coef = vec![0.0; n];
    let mut loss = 0.0;
    for i in 0..n {
        let zi = row(i);
        for j in i..n {
            let zj = row(j);
            let mut acc = [0.0; 4];
            for k in 0..D {
                acc[k % 4] += zi[k] * zj[k];
            }
            logit[j] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        }
        let (mut diag, mut off) = negative_pass(i, &logit, &mut coef);
        patch_positives(
            i, target, pos_weight, &logit, &mut coef, &mut diag, &mut off,
        );
        // off-diagonal pairs appear twice in the full matrix
        loss += diag + 2.0 * off;

        // dL/dZ = (G + G^T) Z with G symmetric
        let (head, tail) = grad.split_at_mut((i + 1) * D);
        let mut gi = [0.0; D];
        let ci = grad_scale * coef[i];
        for k in 0..D {
            gi[k] = ci * zi[k];
        }
        for j in (i + 1)..n {
            let c = grad_scale * coef[j];
            let zj = row(j);
            let gj: &mut [f64; D] = (&mut tail[(j - i - 1) * D..(j - i) * D])
                .try_into()
                .expect("row width");
            for k in 0..D {
                gi[k] += c * zj[k];
                gj[k] += c * zi[k];
            }
        }
        for (a, g) in head[i * D..].iter_mut().zip(gi) {
            *a += g;
        }
    }
    (loss, grad)
}

pub(crate) fn gram_bce_any(
    zd: &[f64],
    n: usize,
    d: usize,
    target: &SparseMat,
    pos_weight: f64,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; n * d];
    let mut logit = vec![0.0; n];
    let mut coef = vec![0.0; n];
    let mut gi = vec![0.0; d];
    let mut loss = 0.0;
    for i in 0..n {
        let zi = &zd[i * d..(i + 1) * d];
        for j in i..n {
            logit[j] = dot(zi, &zd[j * d..(j + 1) * d]);
        }
        let (mut diag, mut off) = negative_pass(i, &logit, &mut coef);
        patch_positives(
            i, target, pos_weight, &logit, &mut coef, &mut diag, &mut off,
        );
        loss += diag + 2.0 * off;

        let (head, tail) = grad.split_at_mut((i + 1) * d);
        let ci = grad_scale * coef[i];
        for (g, &z) in gi.iter_mut().zip(zi) {
            *g = ci * z;
        }
        for j in (i + 1)..n {
            let c = grad_scale * coef[j];
            let zj = &zd[j * d..(j + 1) * d];
            let gj = &mut tail[(j - i - 1) * d..(j - i) * d];
            for k in 0..d {
                gi[k] += c * zj[k];
                gj[k] += c * zi[k];
            }
        }
        for (a, g) in head[i * d..].iter_mut().zip(&gi) {
            *a += g;
        }
    }
    (loss, grad)
}
