//! Flat-slice forward/backward kernels.
//!
//! Layout is row-major throughout. Backward kernels *accumulate* into their
//! gradient outputs (`+=`), so callers zero buffers once per step and can
//! sum several contributions into the same buffer.

use super::Scalar;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Dot product with eight independent accumulators so the loop vectorizes
/// without reassociation flags. The summation order is fixed.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `y[r] = x[r] · W + b` for `rows` rows; `w` is `[n_in, n_out]`.
pub fn affine_forward<F: Scalar>(
    x: &[F],
    w: &[F],
    b: Option<&[F]>,
    n_in: usize,
    n_out: usize,
    y: &mut [F],
) {
    let rows = x.len() / n_in;
    debug_assert_eq!(y.len(), rows * n_out);
    for r in 0..rows {
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        match b {
            Some(b) => yr.copy_from_slice(b),
            None => yr.fill(F::zero()),
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(xi, &w[i * n_out..(i + 1) * n_out], yr);
        }
    }
}

/// Accumulate gradients of `y = xW + b`.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    n_in: usize,
    n_out: usize,
    mut dx: Option<&mut [F]>,
    dw: &mut [F],
    mut db: Option<&mut [F]>,
) {
    let rows = x.len() / n_in;
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        if let Some(db) = db.as_deref_mut() {
            axpy(F::one(), dyr, db);
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(xi, dyr, &mut dw[i * n_out..(i + 1) * n_out]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (i, d) in dxr.iter_mut().enumerate() {
                *d += dot(dyr, &w[i * n_out..(i + 1) * n_out]);
            }
        }
    }
}

/// Row-wise layer norm. Writes the normalized-and-scaled output plus the
/// per-row mean and reciprocal std needed by the backward pass.
pub fn layer_norm_forward<F: Scalar>(
    x: &[F],
    g: &[F],
    b: &[F],
    eps: F,
    y: &mut [F],
    mean: &mut [F],
    rstd: &mut [F],
) {
    let d = g.len();
    let inv_d = F::one() / F::of(d as f64);
    for r in 0..x.len() / d {
        let xr = &x[r * d..(r + 1) * d];
        let m = xr.iter().copied().sum::<F>() * inv_d;
        let mut v = F::zero();
        for &xi in xr {
            let c = xi - m;
            v = v + c * c;
        }
        let s = F::one() / (v * inv_d + eps).sqrt();
        mean[r] = m;
        rstd[r] = s;
        let yr = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            yr[i] = (xr[i] - m) * s * g[i] + b[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Scalar>(
    x: &[F],
    g: &[F],
    mean: &[F],
    rstd: &[F],
    dy: &[F],
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let d = g.len();
    let inv_d = F::one() / F::of(d as f64);
    for r in 0..x.len() / d {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (m, s) = (mean[r], rstd[r]);
        // xhat = (x - m) * s ; dxhat = dy * g
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for i in 0..d {
            let xhat = (xr[i] - m) * s;
            let dxhat = dyr[i] * g[i];
            sum_dxhat = sum_dxhat + dxhat;
            sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
            dg[i] += dyr[i] * xhat;
            db[i] += dyr[i];
        }
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - m) * s;
            let dxhat = dyr[i] * g[i];
            dxr[i] += s * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
        }
    }
}

#[inline]
pub fn gelu_scalar<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let u = F::of(SQRT_2_OVER_PI) * (x + F::of(GELU_C) * x * x * x);
    half * x * (F::one() + u.tanh())
}

#[inline]
pub fn gelu_grad_scalar<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let k = F::of(SQRT_2_OVER_PI);
    let c = F::of(GELU_C);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let du = k * (F::one() + F::of(3.0) * c * x * x);
    half * (F::one() + th) + half * x * (F::one() - th * th) * du
}

pub fn gelu_forward<F: Scalar>(x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = gelu_scalar(xi);
    }
}

pub fn gelu_backward<F: Scalar>(x: &[F], dy: &[F], dx: &mut [F]) {
    for ((d, &xi), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d += g * gelu_grad_scalar(xi);
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    let inv = F::one() / s;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Multi-head causal attention over one sequence of `t` positions.
///
/// `q`, `k`, `v` and `out` are `[t, d]` with head `h` occupying columns
/// `h*dh..(h+1)*dh`. `probs` receives the `[heads, t, t]` attention weights,
/// zero above the diagonal.
pub fn attention_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    t: usize,
    d: usize,
    heads: usize,
    probs: &mut [F],
    out: &mut [F],
) {
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    out.fill(F::zero());
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            for j in 0..=i {
                row[j] = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
            }
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(F::zero());
            let oi = &mut out[i * d + off..i * d + off + dh];
            for j in 0..=i {
                axpy(row[j], &v[j * d + off..j * d + off + dh], oi);
            }
        }
    }
}

/// Accumulate gradients of [`attention_forward`] into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    t: usize,
    d: usize,
    heads: usize,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut ds = vec![F::zero(); t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let doi = &dout[i * d + off..i * d + off + dh];
            let mut pd = F::zero();
            for j in 0..=i {
                let vj = j * d + off;
                let dp = dot(doi, &v[vj..vj + dh]);
                ds[j] = dp;
                pd = pd + row[j] * dp;
                axpy(row[j], doi, &mut dv[vj..vj + dh]);
            }
            let qi = i * d + off;
            for j in 0..=i {
                let g = row[j] * (ds[j] - pd) * scale;
                let kj = j * d + off;
                axpy(g, &k[kj..kj + dh], &mut dq[qi..qi + dh]);
                axpy(g, &q[qi..qi + dh], &mut dk[kj..kj + dh]);
            }
        }
    }
}

/// Cross-entropy over rows of `logits` (`[rows, vocab]`), overwritten in
/// place with `grad_scale * (softmax - onehot)`. Rows whose target equals
/// `ignore` get a zero gradient and contribute no loss. Returns the summed
/// loss over supervised rows (in f64) and their count.
pub fn cross_entropy_in_place<F: Scalar>(
    logits: &mut [F],
    targets: &[u32],
    vocab: usize,
    ignore: Option<u32>,
    grad_scale: F,
) -> (f64, usize) {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (r, &tgt) in targets.iter().enumerate() {
        let row = &mut logits[r * vocab..(r + 1) * vocab];
        if Some(tgt) == ignore {
            row.fill(F::zero());
            continue;
        }
        let tgt = tgt as usize;
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let zt = (row[tgt] - m).as_f64();
        let mut s = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        total += s.as_f64().ln() - zt;
        count += 1;
        let inv = grad_scale / s;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
        row[tgt] = row[tgt] - grad_scale;
    }
    (total, count)
}

/// Loss only; leaves `logits` untouched.
pub fn cross_entropy_loss<F: Scalar>(logits: &[F], targets: &[u32], vocab: usize) -> f64 {
    let mut total = 0.0f64;
    for (r, &tgt) in targets.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut s = F::zero();
        for &v in row {
            s = s + (v - m).exp();
        }
        total += s.as_f64().ln() - (row[tgt as usize] - m).as_f64();
    }
    total
}
