//! Desk-scale version of the transfer experiment: word-level text from a
//! small public-domain corpus, synthetic music, d=16.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{Condition, Manifest, PhaseSpec, PAPER_SEEDS};
use super::runner::{Registry, Runner, METRICS};
use crate::corpus::{ChunkSet, Provenance, VocabId, WordCodec};
use crate::nn::Rng;
use crate::par::Execution;
use crate::synth::{gen_corpus, GenConfig};
use crate::train::{MetricsLog, StopRule, TrainConfig};
use crate::{Error, Result};

/// Verse files form the poetry-like stage, the rest is prose.
pub const POETRY_FILES: [&str; 2] = ["plrabn12.txt", "asyoulik.txt"];
pub const PROSE_FILES: [&str; 2] = ["alice29.txt", "lcet10.txt"];
pub const DESK_VOCAB: usize = 2048;
pub const DESK_SYNTH_CHUNKS: usize = 3000;

fn read_all(dir: &Path, files: &[&str]) -> Result<Vec<String>> {
    files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            fs::read(&p)
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .map_err(|e| Error::io(&p, e))
        })
        .collect()
}

/// Fill `registry` with `synth-3k`, `poetry` and `prose`, unless present.
/// Returns the word codec, built over both text sets.
pub fn prepare_registry(text_dir: &Path, registry: &Registry, exec: Execution) -> Result<WordCodec> {
    fs::create_dir_all(&registry.root).map_err(|e| Error::io(&registry.root, e))?;
    let poetry = read_all(text_dir, &POETRY_FILES)?;
    let prose = read_all(text_dir, &PROSE_FILES)?;
    let codec = WordCodec::build(poetry.iter().chain(&prose).map(|s| s.as_str()), DESK_VOCAB)?;
    codec.save(&registry.root.join("words.json"))?;
    for (key, docs) in [("poetry", &poetry), ("prose", &prose)] {
        if registry.path(key, None).exists() {
            continue;
        }
        let stream: Vec<u32> = docs.iter().flat_map(|d| codec.encode(d)).collect();
        let set = ChunkSet::chunk(
            &stream,
            VocabId::WordLevel,
            codec.vocab_size(),
            Provenance {
                source: format!("canterbury-{key}"),
                seed: 0,
            },
        )?;
        registry.put_whole(key, &set)?;
    }
    if !registry.path("synth-3k", None).exists() {
        let set = gen_corpus(&Rng::new(42, "synth"), &GenConfig::default(), DESK_SYNTH_CHUNKS, exec)?;
        registry.put_whole("synth-3k", &set)?;
    }
    Ok(codec)
}

/// Training settings scaled to a few hundred chunks per phase.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        micro_batch: 4,
        accum: 2,
        warmup_steps: 20,
        ..TrainConfig::default()
    }
}

pub fn desk_music_stop() -> StopRule {
    StopRule::EarlyStop {
        patience: 3,
        max_epochs: 20,
    }
}

pub fn desk_manifest() -> Manifest {
    let three = StopRule::FixedEpochs { epochs: 3 };
    let prose = PhaseSpec::language("prose", "prose", three);
    let music = PhaseSpec::music("synth-3k", desk_music_stop());
    let cond = |name: &str, label: &str, phases: Vec<PhaseSpec>| Condition {
        name: name.into(),
        label: label.into(),
        d_model: 16,
        phases,
        seeds: PAPER_SEEDS.to_vec(),
    };
    Manifest {
        name: "desk".into(),
        train: desk_train(),
        val_fraction: 0.1,
        conditions: vec![
            cond("desk-random", "Random → Prose", vec![prose.clone()]),
            cond("desk-synth", "Synth-3k → Prose", vec![music.clone(), prose.clone()]),
            cond(
                "desk-pipeline",
                "Synth-3k → Poetry → Prose",
                vec![music, PhaseSpec::language("poetry", "poetry", three), prose],
            ),
        ],
    }
}

/// Per-seed prose curves of the three desk conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTrend {
    pub seed: u64,
    pub random: Vec<f64>,
    pub pretrained: Vec<f64>,
    pub pipeline: Vec<f64>,
    /// Prose validation PPL of the pipeline model before prose training.
    pub pipeline_start: f64,
}

impl SeedTrend {
    pub fn pretrained_wins_every_epoch(&self) -> bool {
        self.random.len() == self.pretrained.len() && self.random.iter().zip(&self.pretrained).all(|(r, p)| p < r)
    }

    pub fn pipeline_starts_below_random_e0(&self) -> bool {
        self.random.first().is_some_and(|&r| self.pipeline_start < r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub seeds: Vec<SeedTrend>,
}

impl TrendReport {
    pub fn pretrained_wins(&self) -> usize {
        self.seeds.iter().filter(|s| s.pretrained_wins_every_epoch()).count()
    }

    pub fn pipeline_start_wins(&self) -> usize {
        self.seeds.iter().filter(|s| s.pipeline_starts_below_random_e0()).count()
    }

    /// Both orderings hold in all but at most one seed.
    pub fn holds(&self) -> bool {
        let need = self.seeds.len().saturating_sub(1).max(1);
        self.pretrained_wins() >= need && self.pipeline_start_wins() >= need
    }
}

fn prose_curve(runner: &Runner, cond: &str, seed: u64) -> Result<Vec<f64>> {
    let log = MetricsLog::load(&runner.run_dir(cond, seed).join(METRICS))?;
    Ok(log.phase("prose").iter().map(|r| r.val_ppl).collect())
}

/// Run (or load) every desk condition and seed and compare the curves.
pub fn run_trend(runner: &Runner, manifest: &Manifest) -> Result<TrendReport> {
    let [random, pretrained, pipeline] = ["desk-random", "desk-synth", "desk-pipeline"].map(|n| manifest.condition(n));
    let (random, pretrained, pipeline) = (random?, pretrained?, pipeline?);
    let mut seeds = Vec::new();
    for &seed in &random.seeds {
        runner.run(random, seed)?;
        runner.run(pretrained, seed)?;
        let pipe = runner.run(pipeline, seed)?;
        let start = pipe
            .phases
            .last()
            .ok_or_else(|| Error::EmptyData("pipeline has no phases".into()))?
            .initial
            .ppl;
        seeds.push(SeedTrend {
            seed,
            random: prose_curve(runner, &random.name, seed)?,
            pretrained: prose_curve(runner, &pretrained.name, seed)?,
            pipeline: prose_curve(runner, &pipeline.name, seed)?,
            pipeline_start: start,
        });
    }
    Ok(TrendReport { seeds })
}
