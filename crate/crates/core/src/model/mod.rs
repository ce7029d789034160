//! Decoder-only Transformer: learned token and absolute position
//! embeddings, `n_layers` pre-LN blocks (causal multi-head attention, GELU
//! feed-forward), a final layer norm and an untied LM head. All linear maps
//! carry biases.
//!
//! Forward and backward are written out by hand over the slice kernels in
//! [`crate::nn::kernels`]. One call processes one sequence; batching and
//! reduction live in the training loop.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointMeta, LineageEntry, TensorEntry, CHECKPOINT_MAGIC, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::nn::kernels as k;
use crate::nn::ops::AttentionParams;
use crate::nn::{Rng, Scalar, Tensor, LN_EPS};
use crate::{Error, Result};

/// Standard deviation of the weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    /// The paper's shape rules at width `d_model`: 8 layers, one head per 16
    /// channels, `d_ff = 4 d`, 256-token context.
    pub fn paper(d_model: usize, vocab_size: usize) -> Self {
        Self {
            d_model,
            n_heads: (d_model / 16).max(1),
            n_layers: 8,
            d_ff: 4 * d_model,
            vocab_size,
            seq_len: 256,
        }
    }

    pub fn with_vocab(self, vocab_size: usize) -> Self {
        Self { vocab_size, ..self }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.d_model, self.n_heads, self.d_ff, self.vocab_size, self.seq_len];
        if positive.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// True when every vocabulary-independent dimension matches.
    pub fn same_body(&self, other: &ModelConfig) -> bool {
        self.body_mismatches(other).is_empty()
    }

    pub fn body_mismatches(&self, other: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        let pairs = [
            ("d_model", self.d_model, other.d_model),
            ("n_heads", self.n_heads, other.n_heads),
            ("n_layers", self.n_layers, other.n_layers),
            ("d_ff", self.d_ff, other.d_ff),
            ("seq_len", self.seq_len, other.seq_len),
        ];
        for (name, a, b) in pairs {
            if a != b {
                out.push(format!("{name}: {a} vs {b}"));
            }
        }
        out
    }
}

/// Closed-form parameter count.
pub fn param_count(c: &ModelConfig) -> usize {
    let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
    let block = 2 * 2 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
    v * d + c.seq_len * d + c.n_layers * block + 2 * d + (d * v + v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<F = f32> {
    pub ln1_g: Tensor<F>,
    pub ln1_b: Tensor<F>,
    pub attn: AttentionParams<F>,
    pub ln2_g: Tensor<F>,
    pub ln2_b: Tensor<F>,
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

pub const BLOCK_PARAM_NAMES: [&str; 16] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

impl<F: Scalar> Block<F> {
    fn zeros(c: &ModelConfig) -> Self {
        let (d, f) = (c.d_model, c.d_ff);
        Self {
            ln1_g: Tensor::zeros(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            attn: AttentionParams::zeros(d, c.n_heads),
            ln2_g: Tensor::zeros(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor<F>; 16] {
        let a = &self.attn;
        [
            &self.ln1_g, &self.ln1_b, &a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo, &self.ln2_g,
            &self.ln2_b, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<F>; 16] {
        let a = &mut self.attn;
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut a.wq,
            &mut a.bq,
            &mut a.wk,
            &mut a.bk,
            &mut a.wv,
            &mut a.bv,
            &mut a.wo,
            &mut a.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// The model. Also used, zero-filled, as its own gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Gpt<F = f32> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<F>,
    pub pos_emb: Tensor<F>,
    pub blocks: Vec<Block<F>>,
    pub final_ln_g: Tensor<F>,
    pub final_ln_b: Tensor<F>,
    pub head_w: Tensor<F>,
    pub head_b: Tensor<F>,
}

/// Canonical parameter names in storage order.
pub fn param_names(c: &ModelConfig) -> Vec<String> {
    let mut v = vec!["tok_emb".to_string(), "pos_emb".to_string()];
    for i in 0..c.n_layers {
        v.extend(BLOCK_PARAM_NAMES.iter().map(|n| format!("blocks.{i}.{n}")));
    }
    v.extend(["final_ln.g", "final_ln.b", "lm_head.w", "lm_head.b"].map(String::from));
    v
}

fn is_layer_norm(name: &str) -> bool {
    name.contains("ln1.") || name.contains("ln2.") || name.starts_with("final_ln.")
}

/// Initialize one named tensor in place: LN gains 1, every other rank-1
/// tensor 0, matrices `N(0, 0.02)` from the stream `rng/name`.
pub fn init_tensor(name: &str, t: &mut Tensor<f32>, rng: &Rng) {
    if is_layer_norm(name) && name.ends_with(".g") {
        t.fill(1.0);
    } else if t.rank() == 1 {
        t.fill(0.0);
    } else {
        let mut r = rng.derive(name);
        for x in t.data_mut() {
            *x = (INIT_STD * r.normal()) as f32;
        }
    }
}

/// Per-block activations kept for the backward pass.
struct BlockTrace<F> {
    x: Vec<F>,
    ln1: Vec<F>,
    m1: Vec<F>,
    r1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    xm: Vec<F>,
    ln2: Vec<F>,
    m2: Vec<F>,
    r2: Vec<F>,
    h: Vec<F>,
    a: Vec<F>,
}

struct Trace<F> {
    t: usize,
    blocks: Vec<BlockTrace<F>>,
    x: Vec<F>,
    lnf: Vec<F>,
    mf: Vec<F>,
    rf: Vec<F>,
    logits: Vec<F>,
}

impl<F: Scalar> Gpt<F> {
    /// All-zero parameters of the right shapes.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, v) = (config.d_model, config.vocab_size);
        Self {
            config: *config,
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[config.seq_len, d]),
            blocks: (0..config.n_layers).map(|_| Block::zeros(config)).collect(),
            final_ln_g: Tensor::zeros(&[d]),
            final_ln_b: Tensor::zeros(&[d]),
            head_w: Tensor::zeros(&[d, v]),
            head_b: Tensor::zeros(&[v]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut v = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.extend([&self.final_ln_g, &self.final_ln_b, &self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut v = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend([&mut self.final_ln_g, &mut self.final_ln_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        param_names(&self.config).into_iter().zip(self.tensors()).collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        param_names(&self.config).into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.named_tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Gpt<G> {
        let mut out = Gpt::<G>::zeros(&self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn fill(&mut self, value: F) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.config.seq_len {
            return Err(Error::shape(
                "forward",
                format!("sequence length {} outside 1..={}", tokens.len(), self.config.seq_len),
            ));
        }
        for (position, &token) in tokens.iter().enumerate() {
            if token as usize >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    position,
                    token,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn trace(&self, tokens: &[u32]) -> Result<Trace<F>> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let (t, d, f, v, h) = (tokens.len(), c.d_model, c.d_ff, c.vocab_size, c.n_heads);
        let eps = F::of(LN_EPS);
        let z = |n: usize| vec![F::zero(); n];

        let mut x = z(t * d);
        for (i, &tok) in tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let te = &self.tok_emb.data()[tok as usize * d..(tok as usize + 1) * d];
            let pe = &self.pos_emb.data()[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = te[j] + pe[j];
            }
        }

        let mut blocks = Vec::with_capacity(c.n_layers);
        let mut tmp = z(t * d);
        for b in &self.blocks {
            let mut bt = BlockTrace {
                x: x.clone(),
                ln1: z(t * d),
                m1: z(t),
                r1: z(t),
                q: z(t * d),
                k: z(t * d),
                v: z(t * d),
                probs: z(h * t * t),
                att: z(t * d),
                xm: z(t * d),
                ln2: z(t * d),
                m2: z(t),
                r2: z(t),
                h: z(t * f),
                a: z(t * f),
            };
            let a = &b.attn;
            k::layer_norm_forward(&x, b.ln1_g.data(), b.ln1_b.data(), eps, &mut bt.ln1, &mut bt.m1, &mut bt.r1);
            k::affine_forward(&bt.ln1, a.wq.data(), Some(a.bq.data()), d, d, &mut bt.q);
            k::affine_forward(&bt.ln1, a.wk.data(), Some(a.bk.data()), d, d, &mut bt.k);
            k::affine_forward(&bt.ln1, a.wv.data(), Some(a.bv.data()), d, d, &mut bt.v);
            k::attention_forward(&bt.q, &bt.k, &bt.v, t, d, h, &mut bt.probs, &mut bt.att);
            k::affine_forward(&bt.att, a.wo.data(), Some(a.bo.data()), d, d, &mut tmp);
            for i in 0..t * d {
                bt.xm[i] = x[i] + tmp[i];
            }
            k::layer_norm_forward(&bt.xm, b.ln2_g.data(), b.ln2_b.data(), eps, &mut bt.ln2, &mut bt.m2, &mut bt.r2);
            k::affine_forward(&bt.ln2, b.w1.data(), Some(b.b1.data()), d, f, &mut bt.h);
            k::gelu_forward(&bt.h, &mut bt.a);
            k::affine_forward(&bt.a, b.w2.data(), Some(b.b2.data()), f, d, &mut tmp);
            for i in 0..t * d {
                x[i] = bt.xm[i] + tmp[i];
            }
            blocks.push(bt);
        }

        let (mut lnf, mut mf, mut rf) = (z(t * d), z(t), z(t));
        k::layer_norm_forward(&x, self.final_ln_g.data(), self.final_ln_b.data(), eps, &mut lnf, &mut mf, &mut rf);
        let mut logits = z(t * v);
        k::affine_forward(&lnf, self.head_w.data(), Some(self.head_b.data()), d, v, &mut logits);
        Ok(Trace {
            t,
            blocks,
            x,
            lnf,
            mf,
            rf,
            logits,
        })
    }

    /// Accumulate parameter gradients given `dlogits` (stored in
    /// `trace.logits`).
    fn backward(&self, tokens: &[u32], tr: &Trace<F>, g: &mut Gpt<F>) {
        let c = &self.config;
        let (t, d, f, v, h) = (tr.t, c.d_model, c.d_ff, c.vocab_size, c.n_heads);
        let z = |n: usize| vec![F::zero(); n];

        let mut dlnf = z(t * d);
        k::affine_backward(
            &tr.lnf,
            self.head_w.data(),
            &tr.logits,
            d,
            v,
            Some(&mut dlnf),
            g.head_w.data_mut(),
            Some(g.head_b.data_mut()),
        );
        let mut dx = z(t * d);
        k::layer_norm_backward(
            &tr.x,
            self.final_ln_g.data(),
            &tr.mf,
            &tr.rf,
            &dlnf,
            &mut dx,
            g.final_ln_g.data_mut(),
            g.final_ln_b.data_mut(),
        );

        let (mut da, mut dh) = (z(t * f), z(t * f));
        let (mut dln, mut datt) = (z(t * d), z(t * d));
        let (mut dq, mut dk, mut dv) = (z(t * d), z(t * d), z(t * d));
        for ((b, gb), bt) in self.blocks.iter().zip(g.blocks.iter_mut()).zip(&tr.blocks).rev() {
            // feed-forward branch
            da.fill(F::zero());
            dh.fill(F::zero());
            dln.fill(F::zero());
            k::affine_backward(&bt.a, b.w2.data(), &dx, f, d, Some(&mut da), gb.w2.data_mut(), Some(gb.b2.data_mut()));
            k::gelu_backward(&bt.h, &da, &mut dh);
            k::affine_backward(&bt.ln2, b.w1.data(), &dh, d, f, Some(&mut dln), gb.w1.data_mut(), Some(gb.b1.data_mut()));
            let mut dxm = dx.clone();
            k::layer_norm_backward(
                &bt.xm,
                b.ln2_g.data(),
                &bt.m2,
                &bt.r2,
                &dln,
                &mut dxm,
                gb.ln2_g.data_mut(),
                gb.ln2_b.data_mut(),
            );

            // attention branch
            let (a, ga) = (&b.attn, &mut gb.attn);
            datt.fill(F::zero());
            dq.fill(F::zero());
            dk.fill(F::zero());
            dv.fill(F::zero());
            dln.fill(F::zero());
            k::affine_backward(&bt.att, a.wo.data(), &dxm, d, d, Some(&mut datt), ga.wo.data_mut(), Some(ga.bo.data_mut()));
            k::attention_backward(&bt.q, &bt.k, &bt.v, &bt.probs, &datt, t, d, h, &mut dq, &mut dk, &mut dv);
            k::affine_backward(&bt.ln1, a.wq.data(), &dq, d, d, Some(&mut dln), ga.wq.data_mut(), Some(ga.bq.data_mut()));
            k::affine_backward(&bt.ln1, a.wk.data(), &dk, d, d, Some(&mut dln), ga.wk.data_mut(), Some(ga.bk.data_mut()));
            k::affine_backward(&bt.ln1, a.wv.data(), &dv, d, d, Some(&mut dln), ga.wv.data_mut(), Some(ga.bv.data_mut()));
            dx.copy_from_slice(&dxm);
            k::layer_norm_backward(
                &bt.x,
                b.ln1_g.data(),
                &bt.m1,
                &bt.r1,
                &dln,
                &mut dx,
                gb.ln1_g.data_mut(),
                gb.ln1_b.data_mut(),
            );
        }

        for (i, &tok) in tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let tok = tok as usize;
            k::axpy(F::one(), row, &mut g.tok_emb.data_mut()[tok * d..(tok + 1) * d]);
            k::axpy(F::one(), row, &mut g.pos_emb.data_mut()[i * d..(i + 1) * d]);
        }
    }

    /// Logits `[T, V]` for one sequence.
    pub fn forward(&self, tokens: &[u32]) -> Result<Tensor<F>> {
        let tr = self.trace(tokens)?;
        Tensor::new(&[tr.t, self.config.vocab_size], tr.logits)
    }

    /// Logits `[B, T, V]` for equal-length sequences.
    pub fn forward_batch(&self, batch: &[Vec<u32>]) -> Result<Tensor<F>> {
        let t = batch.first().map_or(0, |s| s.len());
        if batch.iter().any(|s| s.len() != t) {
            return Err(Error::shape("forward_batch", "ragged batch"));
        }
        let mut data = Vec::with_capacity(batch.len() * t * self.config.vocab_size);
        for s in batch {
            data.extend(self.trace(s)?.logits);
        }
        Tensor::new(&[batch.len(), t, self.config.vocab_size], data)
    }

    /// Softmax of the final position's logits.
    pub fn next_token_distribution(&self, prefix: &[u32]) -> Result<Vec<F>> {
        let v = self.config.vocab_size;
        let logits = self.forward(prefix)?;
        let mut row = logits.data()[(prefix.len() - 1) * v..].to_vec();
        k::softmax_in_place(&mut row);
        Ok(row)
    }

    /// Attention weights `[L, H, T, T]`.
    pub fn attention_maps(&self, tokens: &[u32]) -> Result<Tensor<F>> {
        let tr = self.trace(tokens)?;
        let (l, h, t) = (self.config.n_layers, self.config.n_heads, tr.t);
        let mut data = Vec::with_capacity(l * h * t * t);
        for b in tr.blocks {
            data.extend(b.probs);
        }
        if l == 0 {
            return Ok(Tensor::from_fn(&[0, h, t, t], |_| F::zero()));
        }
        Tensor::new(&[l, h, t, t], data)
    }

    /// Summed next-token loss over the positions of one chunk: inputs are
    /// `chunk[..n-1]`, targets `chunk[1..]`.
    pub fn chunk_loss(&self, chunk: &[u32]) -> Result<f64> {
        let (input, targets) = split_chunk(chunk)?;
        let tr = self.trace(input)?;
        Ok(k::cross_entropy_loss(&tr.logits, targets, self.config.vocab_size))
    }

    /// Summed loss of one chunk; accumulates `scale * d(sum loss)/d(params)`
    /// into `grads`.
    pub fn chunk_loss_grad(&self, chunk: &[u32], scale: f64, grads: &mut Gpt<F>) -> Result<f64> {
        let (input, targets) = split_chunk(chunk)?;
        let mut tr = self.trace(input)?;
        let (loss, _) = k::cross_entropy_in_place(&mut tr.logits, targets, self.config.vocab_size, None, F::of(scale));
        self.backward(input, &tr, grads);
        Ok(loss)
    }
}

fn split_chunk(chunk: &[u32]) -> Result<(&[u32], &[u32])> {
    if chunk.len() < 2 {
        return Err(Error::InsufficientTokens {
            needed: 2,
            got: chunk.len(),
        });
    }
    Ok((&chunk[..chunk.len() - 1], &chunk[1..]))
}

impl Gpt<f32> {
    /// Fresh model: weights `N(0, 0.02)`, biases 0, LN gain 1 and shift 0.
    /// Each tensor draws from its own stream `rng/<name>`.
    pub fn init(config: &ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let mut m = Self::zeros(config);
        for (name, t) in m.named_tensors_mut() {
            init_tensor(&name, t, rng);
        }
        Ok(m)
    }

    pub fn bit_eq(&self, other: &Gpt<f32>) -> bool {
        self.config == other.config && self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rel_err;

    fn tiny(v: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            vocab_size: v,
            seq_len: 12,
        }
    }

    #[test]
    fn param_counts() {
        for (d, expect) in [(16, 35_648), (32, 120_288), (64, 437_024)] {
            let c = ModelConfig::paper(d, 160);
            assert_eq!(param_count(&c), expect);
            let m = Gpt::init(&c, &Rng::new(0, "init")).unwrap();
            assert_eq!(m.num_params(), expect);
        }
        let c = ModelConfig {
            d_model: 1,
            n_heads: 1,
            n_layers: 0,
            d_ff: 4,
            vocab_size: 1,
            seq_len: 256,
        };
        assert_eq!(param_count(&c), 1 + 256 + 2 + 2);
        assert_eq!(Gpt::<f32>::zeros(&c).num_params(), param_count(&c));
    }

    #[test]
    fn names_are_unique_and_shapes_match() {
        let c = tiny(30);
        let m = Gpt::init(&c, &Rng::new(1, "init")).unwrap();
        let names = param_names(&c);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(m.tensor("tok_emb").unwrap().shape(), &[30, 8]);
        assert_eq!(m.tensor("pos_emb").unwrap().shape(), &[12, 8]);
        assert_eq!(m.tensor("blocks.1.ffn.w1").unwrap().shape(), &[8, 16]);
        assert_eq!(m.tensor("lm_head.w").unwrap().shape(), &[8, 30]);
        assert!(m.tensor("blocks.1.ln2.g").unwrap().data().iter().all(|&x| x == 1.0));
        assert!(m.tensor("blocks.0.attn.bq").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_stream() {
        let c = tiny(30);
        let a = Gpt::init(&c, &Rng::new(42, "init")).unwrap();
        let b = Gpt::init(&c, &Rng::new(42, "init")).unwrap();
        let other = Gpt::init(&c, &Rng::new(42, "other")).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.tok_emb.bit_eq(&other.tok_emb));
    }

    #[test]
    fn causality() {
        let c = tiny(20);
        let m = Gpt::init(&c, &Rng::new(3, "init")).unwrap();
        let mut rng = Rng::new(3, "tokens");
        for _ in 0..100 {
            let toks: Vec<u32> = (0..c.seq_len).map(|_| rng.index(20) as u32).collect();
            let base = m.forward(&toks).unwrap();
            let p = rng.index(c.seq_len);
            let mut pert = toks.clone();
            pert[p] = (pert[p] + 1 + rng.index(19) as u32) % 20;
            let out = m.forward(&pert).unwrap();
            let v = c.vocab_size;
            assert_eq!(&base.data()[..p * v], &out.data()[..p * v]);
            assert_ne!(&base.data()[p * v..], &out.data()[p * v..]);
        }
    }

    #[test]
    fn shapes_and_errors() {
        let c = tiny(20);
        let m = Gpt::init(&c, &Rng::new(3, "init")).unwrap();
        assert_eq!(m.forward(&[1]).unwrap().shape(), &[1, 20]);
        assert_eq!(m.forward_batch(&[vec![1]]).unwrap().shape(), &[1, 1, 20]);
        match m.forward(&[1, 2, 25]) {
            Err(Error::TokenOutOfRange { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
        assert!(m.forward(&[0; 13]).is_err());
    }

    #[test]
    fn distributions_and_maps() {
        let c = tiny(20);
        let m = Gpt::init(&c, &Rng::new(3, "init")).unwrap();
        let prefix = [1u32, 5, 7, 9];
        let p = m.next_token_distribution(&prefix).unwrap();
        assert!((p.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        let logits = m.forward(&prefix).unwrap();
        let last = Tensor::new(&[1, 20], logits.data()[3 * 20..].to_vec()).unwrap();
        assert_eq!(crate::nn::ops::softmax(&last).unwrap().data(), &p[..]);
        let maps = m.attention_maps(&prefix).unwrap();
        assert_eq!(maps.shape(), &[2, 2, 4, 4]);
        for (r, row) in maps.data().chunks(4).enumerate() {
            let i = r % 4;
            assert!((row.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row[i + 1..].iter().all(|&x| x == 0.0));
        }
        assert!(m.attention_maps(&[3]).unwrap().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn init_loss_near_uniform() {
        for v in [160usize, 8192] {
            let c = ModelConfig::paper(16, v);
            let m = Gpt::init(&c, &Rng::new(11, "init")).unwrap();
            let mut rng = Rng::new(11, "data");
            let chunk: Vec<u32> = (0..257).map(|_| rng.index(v) as u32).collect();
            let loss = m.chunk_loss(&chunk).unwrap() / 256.0;
            assert!((loss - (v as f64).ln()).abs() < 0.2, "{v}: {loss}");
        }
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let c = ModelConfig {
            d_model: 4,
            n_heads: 2,
            n_layers: 2,
            d_ff: 8,
            vocab_size: 7,
            seq_len: 6,
        };
        let mut m = Gpt::init(&c, &Rng::new(5, "init")).unwrap().cast::<f64>();
        // larger weights than init so every path carries signal
        let mut rng = Rng::new(5, "perturb");
        for t in m.tensors_mut() {
            for x in t.data_mut() {
                *x += 0.3 * rng.normal();
            }
        }
        let chunk = [1u32, 4, 2, 6, 0, 3, 5];
        let mut g = m.zeros_like();
        m.chunk_loss_grad(&chunk, 1.0, &mut g).unwrap();
        let h = 1e-3;
        let mut worst = 0.0f64;
        let n = m.tensors().len();
        for ti in 0..n {
            for j in 0..m.tensors()[ti].numel() {
                let orig = m.tensors()[ti].data()[j];
                let mut at = |dx: f64| {
                    m.tensors_mut()[ti].data_mut()[j] = orig + dx;
                    m.chunk_loss(&chunk).unwrap()
                };
                let num = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
                m.tensors_mut()[ti].data_mut()[j] = orig;
                worst = worst.max(rel_err(g.tensors()[ti].data()[j], num));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }
}
