//! Central finite-difference checks for the ops in [`super::ops`], run in
//! 64-bit. Each check draws a random small shape and random inputs, projects
//! the op's output onto a random direction `r` to get a scalar
//! `L = sum(r * y)`, and compares the analytic gradient of every input with
//! the fourth-order central difference
//! `(-L(x+2h) + 8L(x+h) - 8L(x-h) + L(x-2h)) / 12h`.

use super::ops::{self, AttentionParams};
use super::{Rng, Tensor, LN_EPS};
use crate::Result;

const H: f64 = 1e-3;

/// Largest relative error found over all elements of all inputs of one op.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that are zero
/// up to rounding from dominating.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn project(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Compare `analytic` against central differences of `f` around `x`.
fn check_input(x: &Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        let mut at = |dx: f64| {
            xp.data_mut()[i] = orig + dx;
            f(&xp)
        };
        let numeric = (-at(2.0 * H) + 8.0 * at(H) - 8.0 * at(-H) + at(-2.0 * H)) / (12.0 * H);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn dims(rng: &mut Rng, lo: i64, hi: i64) -> usize {
    rng.range_inclusive(lo, hi) as usize
}

pub fn check_affine(trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed, "gradcheck/affine");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (b, i, o) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6), dims(&mut rng, 1, 6));
        let x = randn(&mut rng, &[b, i]);
        let w = randn(&mut rng, &[i, o]);
        let bias = randn(&mut rng, &[o]);
        let r = randn(&mut rng, &[b, o]);
        let g = ops::affine_grad(&x, &w, &r)?;
        worst = worst.max(check_input(&x, &g.dx, |x| project(&r, &ops::affine(x, &w, &bias).unwrap())));
        worst = worst.max(check_input(&w, &g.dw, |w| project(&r, &ops::affine(&x, w, &bias).unwrap())));
        worst = worst.max(check_input(&bias, &g.db, |bb| project(&r, &ops::affine(&x, &w, bb).unwrap())));
    }
    Ok(GradReport { op: "affine", trials, max_rel_err: worst })
}

pub fn check_layer_norm(trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed, "gradcheck/layer_norm");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (b, d) = (dims(&mut rng, 1, 3), dims(&mut rng, 2, 8));
        let x = randn(&mut rng, &[b, d]);
        let g = randn(&mut rng, &[d]);
        let beta = randn(&mut rng, &[d]);
        let r = randn(&mut rng, &[b, d]);
        let gr = ops::layer_norm_grad(&x, &g, LN_EPS, &r)?;
        worst = worst.max(check_input(&x, &gr.dx, |x| project(&r, &ops::layer_norm(x, &g, &beta, LN_EPS).unwrap())));
        worst = worst.max(check_input(&g, &gr.dg, |g| project(&r, &ops::layer_norm(&x, g, &beta, LN_EPS).unwrap())));
        worst = worst.max(check_input(&beta, &gr.db, |bb| project(&r, &ops::layer_norm(&x, &g, bb, LN_EPS).unwrap())));
    }
    Ok(GradReport { op: "layer_norm", trials, max_rel_err: worst })
}

pub fn check_gelu(trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed, "gradcheck/gelu");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = dims(&mut rng, 1, 12);
        let x = Tensor::from_fn(&[n], |_| 3.0 * rng.normal());
        let r = randn(&mut rng, &[n]);
        let dx = ops::gelu_grad(&x, &r)?;
        worst = worst.max(check_input(&x, &dx, |x| project(&r, &ops::gelu(x))));
    }
    Ok(GradReport { op: "gelu", trials, max_rel_err: worst })
}

pub fn check_attention(trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed, "gradcheck/attention");
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let heads = dims(&mut rng, 1, 2);
        let d = heads * dims(&mut rng, 1, 3);
        let (b, t) = (dims(&mut rng, 1, 2), dims(&mut rng, 1, 4));
        let mut p = AttentionParams::zeros(d, heads);
        for tt in p.tensors_mut() {
            *tt = Tensor::from_fn(tt.shape(), |_| 0.5 * rng.normal());
        }
        let x = randn(&mut rng, &[b, t, d]);
        let r = randn(&mut rng, &[b, t, d]);
        let (dx, gp) = ops::causal_attention_grad(&x, &p, &r)?;
        let loss = |x: &Tensor<f64>, p: &AttentionParams<f64>| project(&r, &ops::causal_attention(x, p).unwrap().0);
        worst = worst.max(check_input(&x, &dx, |x| loss(x, &p)));
        for k in 0..8 {
            let analytic = gp.tensors()[k].clone();
            let base = p.tensors()[k].clone();
            worst = worst.max(check_input(&base, &analytic, |v| {
                let mut q = p.clone();
                *q.tensors_mut()[k] = v.clone();
                loss(&x, &q)
            }));
        }
    }
    Ok(GradReport { op: "causal_attention", trials, max_rel_err: worst })
}

pub fn check_cross_entropy(trials: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed, "gradcheck/cross_entropy");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        // the first trial uses the fixed 2x3x7 shape
        let (b, t, v) = if trial == 0 {
            (2, 3, 7)
        } else {
            (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 2, 9))
        };
        let logits = Tensor::from_fn(&[b, t, v], |_| 2.0 * rng.normal());
        let targets: Vec<u32> = (0..b * t).map(|_| rng.index(v) as u32).collect();
        let (_, g) = ops::softmax_cross_entropy_grad(&logits, &targets, None)?;
        worst = worst.max(check_input(&logits, &g, |l| ops::softmax_cross_entropy(l, &targets, None).unwrap()));
    }
    Ok(GradReport { op: "softmax_cross_entropy", trials, max_rel_err: worst })
}

/// Run every op check.
pub fn check_all(trials: usize, seed: u64) -> Result<Vec<GradReport>> {
    Ok(vec![
        check_affine(trials, seed)?,
        check_layer_norm(trials, seed)?,
        check_gelu(trials, seed)?,
        check_attention(trials, seed)?,
        check_cross_entropy(trials, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_pass() {
        for r in check_all(10, 42).unwrap() {
            assert!(r.max_rel_err < 1e-4, "{}: {}", r.op, r.max_rel_err);
        }
    }
}
