//! Shape-checked tensor operations. Each forward op has a matching `*_grad`
//! function that, given the upstream gradient `dy`, returns gradients for
//! every input.

use super::kernels as k;
use super::{Scalar, Tensor};
use crate::{Error, Result};

fn last_dim<F: Scalar>(op: &'static str, x: &Tensor<F>) -> Result<usize> {
    x.shape()
        .last()
        .copied()
        .ok_or_else(|| Error::shape(op, "scalar input"))
}

fn expect_shape<F: Scalar>(op: &'static str, what: &str, t: &Tensor<F>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(
            op,
            format!("{what} has shape {:?}, expected {shape:?}", t.shape()),
        ));
    }
    Ok(())
}

fn with_last<F: Scalar>(x: &Tensor<F>, last: usize) -> Vec<usize> {
    let mut s = x.shape().to_vec();
    *s.last_mut().unwrap() = last;
    s
}

/// `y = xW + b` over the last dimension of `x`.
pub fn affine<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let n_in = last_dim("affine", x)?;
    if w.rank() != 2 || w.shape()[0] != n_in {
        return Err(Error::shape(
            "affine",
            format!("x {:?} incompatible with W {:?}", x.shape(), w.shape()),
        ));
    }
    let n_out = w.shape()[1];
    expect_shape("affine", "b", b, &[n_out])?;
    let mut y = Tensor::zeros(&with_last(x, n_out));
    k::affine_forward(x.data(), w.data(), Some(b.data()), n_in, n_out, y.data_mut());
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct AffineGrad<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Tensor<F>,
}

pub fn affine_grad<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, dy: &Tensor<F>) -> Result<AffineGrad<F>> {
    let n_in = last_dim("affine_grad", x)?;
    if w.rank() != 2 || w.shape()[0] != n_in {
        return Err(Error::shape("affine_grad", "x/W mismatch"));
    }
    let n_out = w.shape()[1];
    expect_shape("affine_grad", "dy", dy, &with_last(x, n_out))?;
    let mut g = AffineGrad {
        dx: Tensor::zeros(x.shape()),
        dw: Tensor::zeros(w.shape()),
        db: Tensor::zeros(&[n_out]),
    };
    k::affine_backward(
        x.data(),
        w.data(),
        dy.data(),
        n_in,
        n_out,
        Some(g.dx.data_mut()),
        g.dw.data_mut(),
        Some(g.db.data_mut()),
    );
    Ok(g)
}

/// Layer norm over the last dimension.
pub fn layer_norm<F: Scalar>(x: &Tensor<F>, g: &Tensor<F>, b: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
    let d = last_dim("layer_norm", x)?;
    expect_shape("layer_norm", "gamma", g, &[d])?;
    expect_shape("layer_norm", "beta", b, &[d])?;
    let rows = x.numel() / d;
    let mut y = Tensor::zeros(x.shape());
    let (mut mean, mut rstd) = (vec![F::zero(); rows], vec![F::zero(); rows]);
    k::layer_norm_forward(x.data(), g.data(), b.data(), F::of(eps), y.data_mut(), &mut mean, &mut rstd);
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct LayerNormGrad<F> {
    pub dx: Tensor<F>,
    pub dg: Tensor<F>,
    pub db: Tensor<F>,
}

pub fn layer_norm_grad<F: Scalar>(
    x: &Tensor<F>,
    g: &Tensor<F>,
    eps: f64,
    dy: &Tensor<F>,
) -> Result<LayerNormGrad<F>> {
    let d = last_dim("layer_norm_grad", x)?;
    expect_shape("layer_norm_grad", "gamma", g, &[d])?;
    expect_shape("layer_norm_grad", "dy", dy, x.shape())?;
    let rows = x.numel() / d;
    let (mut mean, mut rstd) = (vec![F::zero(); rows], vec![F::zero(); rows]);
    let mut scratch = vec![F::zero(); x.numel()];
    let zeros = vec![F::zero(); d];
    k::layer_norm_forward(x.data(), g.data(), &zeros, F::of(eps), &mut scratch, &mut mean, &mut rstd);
    let mut out = LayerNormGrad {
        dx: Tensor::zeros(x.shape()),
        dg: Tensor::zeros(&[d]),
        db: Tensor::zeros(&[d]),
    };
    k::layer_norm_backward(
        x.data(),
        g.data(),
        &mean,
        &rstd,
        dy.data(),
        out.dx.data_mut(),
        out.dg.data_mut(),
        out.db.data_mut(),
    );
    Ok(out)
}

pub fn gelu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = Tensor::zeros(x.shape());
    k::gelu_forward(x.data(), y.data_mut());
    y
}

pub fn gelu_grad<F: Scalar>(x: &Tensor<F>, dy: &Tensor<F>) -> Result<Tensor<F>> {
    expect_shape("gelu_grad", "dy", dy, x.shape())?;
    let mut dx = Tensor::zeros(x.shape());
    k::gelu_backward(x.data(), dy.data(), dx.data_mut());
    Ok(dx)
}

/// Softmax over the last dimension.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let d = last_dim("softmax", x)?;
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(d) {
        k::softmax_in_place(row);
    }
    Ok(y)
}

/// Projections of one causal self-attention layer. Weights are `[d, d]`,
/// biases `[d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<F> {
    pub heads: usize,
    pub wq: Tensor<F>,
    pub bq: Tensor<F>,
    pub wk: Tensor<F>,
    pub bk: Tensor<F>,
    pub wv: Tensor<F>,
    pub bv: Tensor<F>,
    pub wo: Tensor<F>,
    pub bo: Tensor<F>,
}

impl<F: Scalar> AttentionParams<F> {
    pub fn zeros(d: usize, heads: usize) -> Self {
        let (m, v) = (Tensor::zeros(&[d, d]), Tensor::zeros(&[d]));
        Self {
            heads,
            wq: m.clone(),
            bq: v.clone(),
            wk: m.clone(),
            bk: v.clone(),
            wv: m.clone(),
            bv: v.clone(),
            wo: m,
            bo: v,
        }
    }

    pub fn tensors(&self) -> [&Tensor<F>; 8] {
        [&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<F>; 8] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::shape(
                "causal_attention",
                format!("d={d} not divisible by {} heads", self.heads),
            ));
        }
        for (i, t) in self.tensors().into_iter().enumerate() {
            let want: &[usize] = if i % 2 == 0 { &[d, d] } else { &[d] };
            expect_shape("causal_attention", "projection", t, want)?;
        }
        Ok(())
    }
}

fn attention_dims<F: Scalar>(x: &Tensor<F>, p: &AttentionParams<F>) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::shape("causal_attention", format!("x must be [B,T,d], got {:?}", x.shape())));
    }
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    p.check(d)?;
    Ok((b, t, d))
}

struct AttnFwd<F> {
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
}

fn attention_seq<F: Scalar>(x: &[F], t: usize, d: usize, p: &AttentionParams<F>, y: &mut [F]) -> AttnFwd<F> {
    let n = t * d;
    let mut f = AttnFwd {
        q: vec![F::zero(); n],
        k: vec![F::zero(); n],
        v: vec![F::zero(); n],
        probs: vec![F::zero(); p.heads * t * t],
        att: vec![F::zero(); n],
    };
    k::affine_forward(x, p.wq.data(), Some(p.bq.data()), d, d, &mut f.q);
    k::affine_forward(x, p.wk.data(), Some(p.bk.data()), d, d, &mut f.k);
    k::affine_forward(x, p.wv.data(), Some(p.bv.data()), d, d, &mut f.v);
    k::attention_forward(&f.q, &f.k, &f.v, t, d, p.heads, &mut f.probs, &mut f.att);
    k::affine_forward(&f.att, p.wo.data(), Some(p.bo.data()), d, d, y);
    f
}

/// Multi-head causal self-attention. Returns the output `[B,T,d]` and the
/// attention weights `[B,H,T,T]`.
pub fn causal_attention<F: Scalar>(x: &Tensor<F>, p: &AttentionParams<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    let (b, t, d) = attention_dims(x, p)?;
    let h = p.heads;
    let mut y = Tensor::zeros(x.shape());
    let mut w = Tensor::zeros(&[b, h, t, t]);
    for s in 0..b {
        let xs = &x.data()[s * t * d..(s + 1) * t * d];
        let f = attention_seq(xs, t, d, p, &mut y.data_mut()[s * t * d..(s + 1) * t * d]);
        w.data_mut()[s * h * t * t..(s + 1) * h * t * t].copy_from_slice(&f.probs);
    }
    Ok((y, w))
}

pub fn causal_attention_grad<F: Scalar>(
    x: &Tensor<F>,
    p: &AttentionParams<F>,
    dy: &Tensor<F>,
) -> Result<(Tensor<F>, AttentionParams<F>)> {
    let (b, t, d) = attention_dims(x, p)?;
    expect_shape("causal_attention_grad", "dy", dy, x.shape())?;
    let mut dx = Tensor::zeros(x.shape());
    let mut g = AttentionParams::zeros(d, p.heads);
    let mut y = vec![F::zero(); t * d];
    for s in 0..b {
        let r = s * t * d..(s + 1) * t * d;
        let xs = &x.data()[r.clone()];
        let dys = &dy.data()[r.clone()];
        let f = attention_seq(xs, t, d, p, &mut y);
        let mut datt = vec![F::zero(); t * d];
        k::affine_backward(&f.att, p.wo.data(), dys, d, d, Some(&mut datt), g.wo.data_mut(), Some(g.bo.data_mut()));
        let (mut dq, mut dk, mut dv) = (vec![F::zero(); t * d], vec![F::zero(); t * d], vec![F::zero(); t * d]);
        k::attention_backward(&f.q, &f.k, &f.v, &f.probs, &datt, t, d, p.heads, &mut dq, &mut dk, &mut dv);
        let dxs = &mut dx.data_mut()[r];
        k::affine_backward(xs, p.wq.data(), &dq, d, d, Some(&mut *dxs), g.wq.data_mut(), Some(g.bq.data_mut()));
        k::affine_backward(xs, p.wk.data(), &dk, d, d, Some(&mut *dxs), g.wk.data_mut(), Some(g.bk.data_mut()));
        k::affine_backward(xs, p.wv.data(), &dv, d, d, Some(&mut *dxs), g.wv.data_mut(), Some(g.bv.data_mut()));
    }
    Ok((dx, g))
}

fn check_targets(targets: &[u32], rows: usize, vocab: usize, ignore: Option<u32>) -> Result<usize> {
    if targets.len() != rows {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} targets for {rows} positions", targets.len()),
        ));
    }
    let mut supervised = 0;
    for (i, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        if t as usize >= vocab {
            return Err(Error::TokenOutOfRange {
                position: i,
                token: t,
                vocab,
            });
        }
        supervised += 1;
    }
    if supervised == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    Ok(supervised)
}

/// Mean cross-entropy over positions whose target is not `ignore`.
/// `logits` is `[..., V]` and `targets` has one entry per row.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Tensor<F>, targets: &[u32], ignore: Option<u32>) -> Result<f64> {
    Ok(softmax_cross_entropy_grad(logits, targets, ignore)?.0)
}

/// Loss together with its gradient with respect to the logits.
pub fn softmax_cross_entropy_grad<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[u32],
    ignore: Option<u32>,
) -> Result<(f64, Tensor<F>)> {
    let v = last_dim("softmax_cross_entropy", logits)?;
    let n = check_targets(targets, logits.numel() / v, v, ignore)?;
    let mut g = logits.clone();
    let (sum, count) = k::cross_entropy_in_place(g.data_mut(), targets, v, ignore, F::one() / F::of(n as f64));
    debug_assert_eq!(count, n);
    Ok((sum / n as f64, g))
}
