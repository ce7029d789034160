//! Executes conditions into a run root:
//!
//! ```text
//! <root>/runs/<condition>/seed<seed>/
//!     config.snapshot.json
//!     <k>-<phase>/{metrics.jsonl, ckpt/best.ckpt, ckpt/final.ckpt, summary.json, DONE}
//!     metrics.jsonl        language phases of this run, concatenated
//!     summary.json, DONE
//! <root>/shared/<phase>-<data>-d<d>-seed<s>/   phases reused across seeds
//! ```
//!
//! A phase directory with a `DONE` marker is never retrained; anything else
//! in an unfinished phase directory is discarded and the phase restarts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{Condition, Manifest, PhaseSpec};
use crate::corpus::{ChunkSet, VocabId};
use crate::model::{Checkpoint, CheckpointMeta, Gpt, LineageEntry, ModelConfig};
use crate::nn::Rng;
use crate::par::Execution;
use crate::train::{train_phase_with, Evaluation, MetricsLog, StopReason, StopRule, TrainConfig};
use crate::transfer::{selective_transfer, TransferSpec};
use crate::{Error, Result};

pub const DONE: &str = "DONE";
pub const LOCK: &str = "LOCK";
pub const SNAPSHOT: &str = "config.snapshot.json";
pub const METRICS: &str = "metrics.jsonl";
pub const SUMMARY: &str = "summary.json";

/// Stream that fixes the train/validation split of registry entries, so
/// every condition and seed sees the same split.
const SPLIT_SEED: u64 = 42;

/// Directory of prepared chunk sets. An entry `key` is either the pair
/// `key.train.chunks` + `key.val.chunks`, or a single `key.chunks` that is
/// split on load.
#[derive(Clone, Debug)]
pub struct Registry {
    pub root: PathBuf,
}

impl Registry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, key: &str, part: Option<&str>) -> PathBuf {
        match part {
            Some(p) => self.root.join(format!("{key}.{p}.chunks")),
            None => self.root.join(format!("{key}.chunks")),
        }
    }

    pub fn put(&self, key: &str, train: &ChunkSet, val: &ChunkSet) -> Result<()> {
        train.save(&self.path(key, Some("train")))?;
        val.save(&self.path(key, Some("val")))
    }

    pub fn put_whole(&self, key: &str, all: &ChunkSet) -> Result<()> {
        all.save(&self.path(key, None))
    }

    pub fn load(&self, key: &str, val_fraction: f64) -> Result<(ChunkSet, ChunkSet)> {
        let (tp, vp) = (self.path(key, Some("train")), self.path(key, Some("val")));
        if tp.exists() {
            if !vp.exists() {
                return Err(Error::MissingArtifact(vp));
            }
            return Ok((ChunkSet::load(&tp)?, ChunkSet::load(&vp)?));
        }
        let whole = self.path(key, None);
        if !whole.exists() {
            return Err(Error::MissingArtifact(tp));
        }
        ChunkSet::load(&whole)?.split_train_val(val_fraction, &mut Rng::new(SPLIT_SEED, format!("split/{key}")))
    }
}

/// Outcome of one phase, as stored in its `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub name: String,
    pub data: String,
    pub seed: u64,
    pub initial: Evaluation,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub optimizer_steps: u64,
    pub micro_batches: u64,
    /// `best` or `final`: which checkpoint feeds the next phase.
    pub output: String,
    pub output_sha256: String,
    pub shared: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub condition: String,
    pub seed: u64,
    pub d_model: usize,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub condition: Condition,
    pub seed: u64,
    pub train: TrainConfig,
    pub val_fraction: f64,
}

/// Exclusive ownership of a directory for the lifetime of the guard. The
/// lock file holds the owner's pid; a lock whose owner no longer runs (a
/// killed job) is taken over.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => {
                    fs::write(&path, std::process::id().to_string()).map_err(|e| Error::io(&path, e))?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if !owner_gone(&path) {
                        break;
                    }
                    log::warn!("removing stale lock {}", path.display());
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::Locked(dir.to_path_buf()))
    }
}

/// Only decidable where `/proc` exists; elsewhere every lock counts as live.
fn owner_gone(lock: &Path) -> bool {
    let proc_root = Path::new("/proc");
    if !proc_root.join("self").exists() {
        return false;
    }
    match fs::read_to_string(lock).ok().and_then(|s| s.trim().parse::<u32>().ok()) {
        Some(pid) => !proc_root.join(pid.to_string()).exists(),
        // empty: the owner died between creating and writing the file, or is
        // writing it right now
        None => false,
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub struct Runner {
    pub root: PathBuf,
    pub registry: Registry,
    pub train: TrainConfig,
    pub val_fraction: f64,
}

impl Runner {
    pub fn new(root: impl Into<PathBuf>, registry: Registry, manifest: &Manifest) -> Self {
        Self {
            root: root.into(),
            registry,
            train: manifest.train,
            val_fraction: manifest.val_fraction,
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.train.exec = exec;
        self
    }

    pub fn run_dir(&self, condition: &str, seed: u64) -> PathBuf {
        self.root.join("runs").join(condition).join(format!("seed{seed}"))
    }

    fn phase_dir(&self, run_dir: &Path, cond: &Condition, k: usize, p: &PhaseSpec) -> PathBuf {
        match p.shared_seed {
            Some(s) => self
                .root
                .join("shared")
                .join(format!("{}-{}-d{}-seed{s}", p.name, p.data, cond.d_model)),
            None => run_dir.join(format!("{k}-{}", p.name)),
        }
    }

    /// Run (or resume) every seed of `cond`.
    pub fn run_all(&self, cond: &Condition) -> Result<Vec<RunSummary>> {
        cond.seeds.iter().map(|&s| self.run(cond, s)).collect()
    }

    /// Run one seed of `cond`. A finished run is loaded, not retrained.
    pub fn run(&self, cond: &Condition, seed: u64) -> Result<RunSummary> {
        let dir = self.run_dir(&cond.name, seed);
        if dir.join(DONE).exists() {
            return read_json(&dir.join(SUMMARY));
        }
        let _lock = DirLock::acquire(&dir)?;
        let snapshot = RunSnapshot {
            condition: cond.clone(),
            seed,
            train: TrainConfig {
                seed,
                ..self.train
            },
            val_fraction: self.val_fraction,
        };
        let snap_path = dir.join(SNAPSHOT);
        if snap_path.exists() {
            let old: RunSnapshot = read_json(&snap_path)?;
            // execution mode does not change results
            let same = RunSnapshot {
                train: TrainConfig {
                    exec: snapshot.train.exec,
                    ..old.train
                },
                ..old
            } == snapshot;
            if !same {
                return Err(Error::Config(format!(
                    "{} holds a run with a different configuration",
                    dir.display()
                )));
            }
        }
        write_json(&snap_path, &snapshot)?;

        let mut prev: Option<Checkpoint> = None;
        let mut phases = Vec::new();
        let mut log = MetricsLog::default();
        for (k, p) in cond.phases.iter().enumerate() {
            let pdir = self.phase_dir(&dir, cond, k, p);
            let (summary, out) = if pdir.join(DONE).exists() {
                let s: PhaseSummary = read_json(&pdir.join(SUMMARY))?;
                let ck = Checkpoint::load(&pdir.join("ckpt").join(format!("{}.ckpt", s.output)))?;
                (s, ck)
            } else {
                let _plock = if p.shared_seed.is_some() { Some(DirLock::acquire(&pdir)?) } else { None };
                self.run_phase(cond, p, p.shared_seed.unwrap_or(seed), prev.as_ref(), &pdir)?
            };
            if !summary.shared {
                log.extend(&MetricsLog::load(&pdir.join(METRICS))?);
            }
            phases.push(summary);
            prev = Some(out);
        }
        log.save(&dir.join(METRICS))?;
        let summary = RunSummary {
            condition: cond.name.clone(),
            seed,
            d_model: cond.d_model,
            phases,
        };
        write_json(&dir.join(SUMMARY), &summary)?;
        fs::write(dir.join(DONE), b"").map_err(|e| Error::io(&dir, e))?;
        Ok(summary)
    }

    fn run_phase(
        &self,
        cond: &Condition,
        p: &PhaseSpec,
        seed: u64,
        prev: Option<&Checkpoint>,
        pdir: &Path,
    ) -> Result<(PhaseSummary, Checkpoint)> {
        let (train, val) = self.registry.load(&p.data, self.val_fraction)?;
        let config = ModelConfig::paper(cond.d_model, train.vocab_size());
        let (model, lineage) = prepare_model(prev, &config, train.vocab(), seed)?;
        let job = PhaseJob {
            name: &p.name,
            data: &p.data,
            stop: p.stop,
            train: TrainConfig { seed, ..self.train },
            shared: p.shared_seed.is_some(),
        };
        train_into_dir(pdir, model, lineage, &train, &val, &job)
    }
}

/// Starting point of a phase: fresh init, the previous model unchanged
/// (same vocabulary and shape), or a selective transfer into `config`.
pub fn prepare_model(
    prev: Option<&Checkpoint>,
    config: &ModelConfig,
    vocab: VocabId,
    seed: u64,
) -> Result<(Gpt<f32>, Vec<LineageEntry>)> {
    Ok(match prev {
        None => (Gpt::init(config, &Rng::new(seed, "init"))?, Vec::new()),
        Some(ck) if ck.meta.vocab == vocab && ck.meta.config == *config => (ck.to_model()?, ck.child_lineage()?),
        Some(ck) => {
            let t = selective_transfer(ck, config, vocab, &TransferSpec::default(), seed)?;
            let mut lineage = t.meta.lineage.clone();
            let transfer_ck = Checkpoint::from_model(&t.model, t.meta);
            lineage.push(LineageEntry {
                phase: "transfer".into(),
                sha256: transfer_ck.sha256()?,
            });
            (t.model, lineage)
        }
    })
}

/// What a phase directory is trained with.
#[derive(Clone, Debug)]
pub struct PhaseJob<'a> {
    pub name: &'a str,
    pub data: &'a str,
    pub stop: StopRule,
    pub train: TrainConfig,
    pub shared: bool,
}

/// Train `model` into `pdir`: per-epoch `metrics.jsonl`, `ckpt/best.ckpt`,
/// `ckpt/final.ckpt`, `summary.json`, then `DONE`. Leftovers of an earlier
/// unfinished attempt are discarded. Returns the checkpoint the next phase
/// starts from.
pub fn train_into_dir(
    pdir: &Path,
    model: Gpt<f32>,
    lineage: Vec<LineageEntry>,
    train: &ChunkSet,
    val: &ChunkSet,
    job: &PhaseJob,
) -> Result<(PhaseSummary, Checkpoint)> {
    let ckpt_dir = pdir.join("ckpt");
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let metrics_path = pdir.join(METRICS);
    if metrics_path.exists() {
        fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let config = model.config;
    let vocab = train.vocab();
    let seed = job.train.seed;
    let result = train_phase_with(model, train, val, &job.train, job.stop, job.name, |rec, _| {
        let mut one = MetricsLog::default();
        one.push(rec.clone());
        one.append_to(&metrics_path)
    })?;

    let meta = |epoch: usize| {
        let mut m = CheckpointMeta::new(config, vocab, seed, job.name);
        m.epoch = Some(epoch);
        m.best_val_loss = Some(result.best_val_loss);
        m.lineage = lineage.clone();
        m
    };
    let last_epoch = result.log.records.len() - 1;
    let best_ck = Checkpoint::from_model(&result.best, meta(result.best_epoch));
    let last_ck = Checkpoint::from_model(&result.last, meta(last_epoch));
    let best_hash = best_ck.save(&ckpt_dir.join("best.ckpt"))?;
    let last_hash = last_ck.save(&ckpt_dir.join("final.ckpt"))?;
    let keeps_best = job.stop.keeps_best();
    let summary = PhaseSummary {
        name: job.name.into(),
        data: job.data.into(),
        seed,
        initial: result.initial,
        epochs: result.log.records.len(),
        best_epoch: result.best_epoch,
        best_val_loss: result.best_val_loss,
        stop: result.stop,
        optimizer_steps: result.optimizer_steps,
        micro_batches: result.micro_batches,
        output: if keeps_best { "best" } else { "final" }.into(),
        output_sha256: if keeps_best { best_hash } else { last_hash },
        shared: job.shared,
    };
    write_json(&pdir.join(SUMMARY), &summary)?;
    fs::write(pdir.join(DONE), b"").map_err(|e| Error::io(pdir, e))?;
    Ok((summary, if keeps_best { best_ck } else { last_ck }))
}
