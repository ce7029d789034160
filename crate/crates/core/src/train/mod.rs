//! Phase training: AdamW with warmup + cosine schedule, global-norm
//! clipping, micro-batch accumulation, per-epoch evaluation and the three
//! stop rules.

mod metrics;
mod optim;
mod schedule;
mod stop;

pub use metrics::{EpochRecord, MetricsLog};
pub use optim::{clip_gradients, AdamW, AdamWConfig};
pub use schedule::lr_at;
pub use stop::{best_epoch, StopReason, StopRule};

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkSet;
use crate::model::Gpt;
use crate::nn::{Rng, Tensor};
use crate::par::{self, Execution};
use crate::{Error, Result, CHUNK_LEN};

/// Supervised positions per chunk.
pub const TARGETS_PER_CHUNK: usize = CHUNK_LEN - 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Micro-batches per optimizer step.
    pub accum: usize,
    /// Chunks per micro-batch.
    pub micro_batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            final_lr: 1e-4,
            warmup_steps: 200,
            weight_decay: 0.1,
            clip_norm: 1.0,
            accum: 2,
            micro_batch: 16,
            seed: 42,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && self.final_lr > 0.0
            && self.final_lr < self.peak_lr
            && self.weight_decay >= 0.0
            && self.clip_norm > 0.0
            && self.accum > 0
            && self.micro_batch > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }

    pub fn micro_batches_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.micro_batch)
    }

    /// Optimizer steps per epoch; a trailing partial accumulation group is
    /// flushed at epoch end and counts as a step.
    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        self.micro_batches_per_epoch(n_train).div_ceil(self.accum)
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Anything the phase loop can train: a set of f32 tensors plus a per-chunk
/// loss and its gradient. The gradient container is a zeroed value of the
/// same type.
pub trait Learner: Clone + Send + Sync {
    fn vocab_size(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Tensor<f32>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>>;
    fn zeros_like(&self) -> Self;
    /// Summed loss over the chunk's target positions.
    fn chunk_loss(&self, chunk: &[u32]) -> Result<f64>;
    /// Summed loss; adds `scale * gradient` into `grads`.
    fn chunk_loss_grad(&self, chunk: &[u32], scale: f64, grads: &mut Self) -> Result<f64>;

    fn add_grads(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b);
        }
    }
}

impl Learner for Gpt<f32> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn param_names(&self) -> Vec<String> {
        crate::model::param_names(&self.config)
    }

    fn params(&self) -> Vec<&Tensor<f32>> {
        self.tensors()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        self.tensors_mut()
    }

    fn zeros_like(&self) -> Self {
        Gpt::zeros_like(self)
    }

    fn chunk_loss(&self, chunk: &[u32]) -> Result<f64> {
        Gpt::chunk_loss(self, chunk)
    }

    fn chunk_loss_grad(&self, chunk: &[u32], scale: f64, grads: &mut Self) -> Result<f64> {
        Gpt::chunk_loss_grad(self, chunk, scale, grads)
    }
}

/// Context-free model: one logit per token. Cheap enough to run paper-sized
/// epoch counts in tests of the loop's bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramLearner {
    pub logits: Tensor<f32>,
}

impl UnigramLearner {
    pub fn new(vocab: usize) -> Self {
        Self {
            logits: Tensor::zeros(&[vocab]),
        }
    }

    fn log_z(&self) -> f64 {
        let l = self.logits.data();
        let m = l.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        m + l.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln()
    }

    fn check(&self, chunk: &[u32]) -> Result<()> {
        let v = self.logits.numel();
        match chunk.iter().position(|&t| t as usize >= v) {
            Some(position) => Err(Error::TokenOutOfRange {
                position,
                token: chunk[position],
                vocab: v,
            }),
            None => Ok(()),
        }
    }
}

impl Learner for UnigramLearner {
    fn vocab_size(&self) -> usize {
        self.logits.numel()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["logits".into()]
    }

    fn params(&self) -> Vec<&Tensor<f32>> {
        vec![&self.logits]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        vec![&mut self.logits]
    }

    fn zeros_like(&self) -> Self {
        Self::new(self.logits.numel())
    }

    fn chunk_loss(&self, chunk: &[u32]) -> Result<f64> {
        self.check(chunk)?;
        let lz = self.log_z();
        let l = self.logits.data();
        Ok(chunk[1..].iter().map(|&t| lz - l[t as usize] as f64).sum())
    }

    fn chunk_loss_grad(&self, chunk: &[u32], scale: f64, grads: &mut Self) -> Result<f64> {
        let loss = self.chunk_loss(chunk)?;
        let lz = self.log_z();
        let n = (chunk.len() - 1) as f64;
        let g = grads.logits.data_mut();
        for (gi, &x) in g.iter_mut().zip(self.logits.data()) {
            *gi += (scale * n * (x as f64 - lz).exp()) as f32;
        }
        for &t in &chunk[1..] {
            g[t as usize] -= scale as f32;
        }
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub ppl: f64,
}

impl Evaluation {
    pub fn from_loss(loss: f64) -> Self {
        Self { loss, ppl: loss.exp() }
    }
}

fn check_data<L: Learner>(learner: &L, data: &ChunkSet, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData(what.into()));
    }
    if data.vocab_size() != learner.vocab_size() {
        return Err(Error::VocabMismatch {
            model: learner.vocab_size(),
            data: data.vocab_size(),
        });
    }
    Ok(())
}

/// Mean per-token cross-entropy over every target position of `val`.
pub fn evaluate<L: Learner>(learner: &L, val: &ChunkSet, exec: Execution) -> Result<Evaluation> {
    evaluate_batched(learner, val, val.len().max(1), exec)
}

/// [`evaluate`], reducing per batch of `batch` chunks first.
pub fn evaluate_batched<L: Learner>(learner: &L, val: &ChunkSet, batch: usize, exec: Execution) -> Result<Evaluation> {
    check_data(learner, val, "validation set")?;
    let per_chunk: Vec<f64> = par::map_indexed(exec, val.len(), |i| learner.chunk_loss(val.row(i)))
        .into_iter()
        .collect::<Result<_>>()?;
    let total: f64 = per_chunk.chunks(batch.max(1)).map(|g| g.iter().sum::<f64>()).sum();
    let loss = total / (val.len() * TARGETS_PER_CHUNK) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("evaluation loss".into()));
    }
    Ok(Evaluation::from_loss(loss))
}

/// Everything a finished phase produces.
#[derive(Clone, Debug)]
pub struct PhaseResult<L> {
    /// Weights of the best validation epoch.
    pub best: L,
    /// Weights after the last epoch.
    pub last: L,
    pub rule: StopRule,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss of the incoming model before any update.
    pub initial: Evaluation,
    pub log: MetricsLog,
    pub stop: StopReason,
    pub optimizer_steps: u64,
    pub micro_batches: u64,
}

impl<L> PhaseResult<L> {
    /// The phase's output: best weights under early stopping, last otherwise.
    pub fn output(&self) -> &L {
        if self.rule.keeps_best() {
            &self.best
        } else {
            &self.last
        }
    }

    pub fn into_output(self) -> L {
        if self.rule.keeps_best() {
            self.best
        } else {
            self.last
        }
    }
}

/// Train one phase. An epoch is one pass over `train` in a per-epoch
/// shuffled order drawn from `Rng(seed, "shuffle/epoch{e}")`.
pub fn train_phase<L: Learner>(
    learner: L,
    train: &ChunkSet,
    val: &ChunkSet,
    cfg: &TrainConfig,
    rule: StopRule,
    phase: &str,
) -> Result<PhaseResult<L>> {
    train_phase_with(learner, train, val, cfg, rule, phase, |_, _| Ok(()))
}

/// [`train_phase`] with a callback after every epoch's evaluation.
pub fn train_phase_with<L: Learner>(
    mut learner: L,
    train: &ChunkSet,
    val: &ChunkSet,
    cfg: &TrainConfig,
    rule: StopRule,
    phase: &str,
    mut on_epoch: impl FnMut(&EpochRecord, &L) -> Result<()>,
) -> Result<PhaseResult<L>> {
    cfg.validate()?;
    check_data(&learner, train, "training set")?;
    check_data(&learner, val, "validation set")?;
    if rule.max_epochs() == 0 {
        return Err(Error::Config("phase needs at least one epoch".into()));
    }
    let names = learner.param_names();
    let n = train.len();
    let total_steps = rule.max_epochs() * cfg.steps_per_epoch(n);
    let lr = |s: u64| lr_at(s as usize, cfg.peak_lr, cfg.final_lr, cfg.warmup_steps, total_steps);
    let mut opt = AdamW::new(cfg.adamw());
    let initial = evaluate(&learner, val, cfg.exec)?;
    log::info!("{phase}: initial val loss {:.4} ppl {:.2}", initial.loss, initial.ppl);

    let mut log = MetricsLog::default();
    let mut best: Option<(usize, f64, L)> = None;
    let (mut steps, mut micro) = (0u64, 0u64);
    let mut acc = learner.zeros_like();
    let mut pending = 0usize;
    let mut val_losses = Vec::new();
    let mut epoch = 0;
    let stop = loop {
        let order = Rng::new(cfg.seed, format!("shuffle/epoch{epoch}")).permutation(n);
        let mut train_sum = 0.0;
        for mb in order.chunks(cfg.micro_batch) {
            let scale = 1.0 / (mb.len() * TARGETS_PER_CHUNK) as f64;
            let parts = par::map(cfg.exec, mb, |&i| {
                let mut g = learner.zeros_like();
                learner.chunk_loss_grad(train.row(i), scale, &mut g).map(|l| (l, g))
            });
            for part in parts {
                let (l, g) = part?;
                train_sum += l;
                acc.add_grads(&g);
            }
            micro += 1;
            pending += 1;
            if pending == cfg.accum {
                apply_step(&mut learner, &mut acc, &mut opt, &names, pending, cfg.clip_norm, lr(steps))?;
                steps += 1;
                pending = 0;
            }
        }
        if pending > 0 {
            apply_step(&mut learner, &mut acc, &mut opt, &names, pending, cfg.clip_norm, lr(steps))?;
            steps += 1;
            pending = 0;
        }
        let ev = evaluate(&learner, val, cfg.exec)?;
        let rec = EpochRecord {
            phase: phase.to_string(),
            epoch,
            train_loss: train_sum / (n * TARGETS_PER_CHUNK) as f64,
            val_loss: ev.loss,
            val_ppl: ev.ppl,
            optimizer_steps: steps,
            micro_batches: micro,
            lr: lr(steps),
        };
        log::info!(
            "{phase} epoch {epoch}: train {:.4} val {:.4} ppl {:.2}",
            rec.train_loss,
            rec.val_loss,
            rec.val_ppl
        );
        on_epoch(&rec, &learner)?;
        log.push(rec);
        val_losses.push(ev.loss);
        if best.as_ref().is_none_or(|(_, b, _)| ev.loss < *b) {
            best = Some((epoch, ev.loss, learner.clone()));
        }
        if let Some(reason) = rule.check(&val_losses) {
            break reason;
        }
        epoch += 1;
    };
    let (best_epoch, best_val_loss, best_model) = best.expect("at least one epoch ran");
    Ok(PhaseResult {
        best: best_model,
        last: learner,
        rule,
        best_epoch,
        best_val_loss,
        initial,
        log,
        stop,
        optimizer_steps: steps,
        micro_batches: micro,
    })
}

fn apply_step<L: Learner>(
    learner: &mut L,
    acc: &mut L,
    opt: &mut AdamW,
    names: &[String],
    k: usize,
    clip: f64,
    lr: f64,
) -> Result<()> {
    let inv = 1.0 / k as f32;
    for g in acc.params_mut() {
        g.scale(inv);
    }
    clip_gradients(acc.params_mut(), clip);
    opt.step(names, learner.params_mut(), acc.params(), lr)?;
    for g in acc.params_mut() {
        g.fill(0.0);
    }
    Ok(())
}
