use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// AdamW with decoupled decay on rank >= 2 tensors only, so biases and
/// layer-norm parameters are never decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `names` is only used for diagnostics.
    pub fn step(&mut self, names: &[String], params: Vec<&mut Tensor<f32>>, grads: Vec<&Tensor<f32>>, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adamw", format!("{} params vs {} grads", params.len(), grads.len())));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || m.len() != g.numel() {
                return Err(Error::shape("adamw", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            let decay = if p.rank() >= 2 { (1.0 - lr * c.weight_decay) as f32 } else { 1.0 };
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mh = *mi as f64 / bc1;
                let vh = *vi as f64 / bc2;
                *w = *w * decay - (lr * mh / (vh.sqrt() + c.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: Vec<&mut Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads {
            g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor<f32> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = t(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let before = p.clone();
        let g = Tensor::zeros(&[2, 2]);
        for _ in 0..5 {
            opt.step(&["w".into()], vec![&mut p], vec![&g], 1e-3).unwrap();
        }
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn decay_only_scales_matrices() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut w = t(&[1, 2], vec![2.0, -4.0]);
        let mut b = t(&[2], vec![2.0, -4.0]);
        let gw = Tensor::zeros(&[1, 2]);
        let gb = Tensor::zeros(&[2]);
        opt.step(&[], vec![&mut w, &mut b], vec![&gw, &gb], 1e-2).unwrap();
        let k = (1.0 - 1e-2 * 0.1) as f32;
        assert_eq!(w.data(), &[2.0 * k, -4.0 * k]);
        assert_eq!(b.data(), &[2.0, -4.0]);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 3)^2, minimum at 3
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut x = t(&[1], vec![0.0]);
        for _ in 0..200 {
            let g = t(&[1], vec![2.0 * (x.data()[0] - 3.0)]);
            opt.step(&[], vec![&mut x], vec![&g], 0.1).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 0.05, "{}", x.data()[0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = t(&[1], vec![0.0]);
        let g = t(&[1], vec![f32::NAN]);
        let err = opt.step(&["lm_head.b".into()], vec![&mut p], vec![&g], 1e-3).unwrap_err();
        assert_eq!(err.to_string(), "non-finite gradient for lm_head.b");
    }

    #[test]
    fn clip_examples() {
        let mut g = t(&[2], vec![0.3, 0.4]);
        assert!((clip_gradients(vec![&mut g], 1.0) - 0.5).abs() < 1e-7);
        assert_eq!(g.data(), &[0.3, 0.4]);
        let mut a = t(&[1], vec![4.0]);
        let mut b = t(&[1], vec![0.0]);
        clip_gradients(vec![&mut a, &mut b], 1.0);
        assert_eq!(a.data(), &[1.0]);
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(v in proptest::collection::vec(-100f32..100.0, 1..50)) {
            let mut g = t(&[v.len()], v.clone());
            clip_gradients(vec![&mut g], 1.0);
            prop_assert!(g.sum_squares().sqrt() <= 1.0 + 1e-6);
            let dot: f64 = g.data().iter().zip(&v).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            prop_assert!(dot >= 0.0);
        }
    }
}
