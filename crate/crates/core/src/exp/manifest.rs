use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::train::{StopRule, TrainConfig};
use crate::{Error, Result};

pub const PAPER_SEEDS: [u64; 5] = [42, 123, 456, 789, 1024];
/// Music checkpoints are trained once with this seed and shared.
pub const MUSIC_SEED: u64 = 42;

/// One stage of a condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    /// `music`, `poetry` or `prose`.
    pub name: String,
    /// Data registry key, e.g. `synth-3k`, `maestro-12k`, `poetry`, `prose`.
    pub data: String,
    pub stop: StopRule,
    /// Train once with this seed and reuse the result for every run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_seed: Option<u64>,
}

impl PhaseSpec {
    pub fn music(data: &str, stop: StopRule) -> Self {
        Self {
            name: "music".into(),
            data: data.into(),
            stop,
            shared_seed: Some(MUSIC_SEED),
        }
    }

    pub fn language(name: &str, data: &str, stop: StopRule) -> Self {
        Self {
            name: name.into(),
            data: data.into(),
            stop,
            shared_seed: None,
        }
    }
}

/// A pipeline run for each seed. Phases chain in order; a vocabulary change
/// between phases goes through selective transfer, a same-vocabulary
/// change continues the model as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub label: String,
    pub d_model: usize,
    pub phases: Vec<PhaseSpec>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestKind {
    Phase1,
    Phase2,
    Phase3,
    Convergence,
    ComputeMatched,
}

impl FromStr for ManifestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "1" | "phase1" => ManifestKind::Phase1,
            "2" | "phase2" => ManifestKind::Phase2,
            "3" | "phase3" => ManifestKind::Phase3,
            "convergence" => ManifestKind::Convergence,
            "compute-matched" => ManifestKind::ComputeMatched,
            _ => return Err(Error::Config(format!("unknown manifest {s}"))),
        })
    }
}

fn music_stop() -> StopRule {
    StopRule::early_stop(20)
}

fn three_epochs() -> StopRule {
    StopRule::FixedEpochs { epochs: 3 }
}

fn prose(stop: StopRule) -> PhaseSpec {
    PhaseSpec::language("prose", "prose", stop)
}

fn poetry() -> PhaseSpec {
    PhaseSpec::language("poetry", "poetry", three_epochs())
}

fn cond(name: &str, label: &str, d: usize, phases: Vec<PhaseSpec>, seeds: &[u64]) -> Condition {
    Condition {
        name: name.into(),
        label: label.into(),
        d_model: d,
        phases,
        seeds: seeds.to_vec(),
    }
}

fn compute_matched() -> Condition {
    cond(
        "compute-matched",
        "Compute-matched (5 ep prose)",
        16,
        vec![prose(StopRule::FixedEpochs { epochs: 5 })],
        &PAPER_SEEDS,
    )
}

/// The paper's condition grid for one experiment.
pub fn build_manifest(kind: ManifestKind) -> Vec<Condition> {
    let s42 = [MUSIC_SEED];
    match kind {
        ManifestKind::Phase1 => {
            let mut v = vec![cond("random", "Random (baseline)", 16, vec![prose(three_epochs())], &s42)];
            for src in ["synth", "maestro"] {
                for k in ["3k", "12k", "36k"] {
                    let data = format!("{src}-{k}");
                    let label = format!("{}-{k}", if src == "synth" { "Synth" } else { "MAESTRO" });
                    v.push(cond(
                        &data,
                        &label,
                        16,
                        vec![PhaseSpec::music(&data, music_stop()), prose(three_epochs())],
                        &s42,
                    ));
                }
            }
            v
        }
        ManifestKind::Phase2 => vec![
            cond("A", "Random (baseline)", 16, vec![prose(three_epochs())], &PAPER_SEEDS),
            cond(
                "B",
                "MAESTRO-12k → Prose",
                16,
                vec![PhaseSpec::music("maestro-12k", music_stop()), prose(three_epochs())],
                &PAPER_SEEDS,
            ),
            cond(
                "C",
                "MAESTRO → Poetry → Prose",
                16,
                vec![
                    PhaseSpec::music("maestro-36k", music_stop()),
                    poetry(),
                    prose(three_epochs()),
                ],
                &PAPER_SEEDS,
            ),
            cond(
                "D",
                "Synth-36k → Prose",
                16,
                vec![PhaseSpec::music("synth-36k", music_stop()), prose(three_epochs())],
                &PAPER_SEEDS,
            ),
            compute_matched(),
        ],
        ManifestKind::ComputeMatched => vec![compute_matched()],
        ManifestKind::Phase3 => {
            let mut v = Vec::new();
            for d in [16, 32, 64] {
                v.push(cond(&format!("d{d}-random"), "Random", d, vec![prose(three_epochs())], &s42));
                for k in ["12k", "36k"] {
                    let data = format!("maestro-{k}");
                    v.push(cond(
                        &format!("d{d}-{data}"),
                        &format!("MAESTRO-{k}"),
                        d,
                        vec![PhaseSpec::music(&data, music_stop()), prose(three_epochs())],
                        &s42,
                    ));
                }
            }
            v
        }
        ManifestKind::Convergence => {
            let plateau = StopRule::plateau(50);
            let pipeline = |music: &str| {
                vec![
                    PhaseSpec::music(music, music_stop()),
                    poetry(),
                    prose(plateau),
                ]
            };
            vec![
                cond("conv-d16-random", "Random", 16, vec![prose(plateau)], &s42),
                cond("conv-d16-pipeline", "Pipeline", 16, pipeline("maestro-12k"), &s42),
                cond("conv-d64-random", "Random", 64, vec![prose(plateau)], &PAPER_SEEDS),
                cond("conv-d64-pipeline", "Pipeline", 64, pipeline("maestro-36k"), &PAPER_SEEDS),
            ]
        }
    }
}

/// A runnable set of conditions with shared hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub train: TrainConfig,
    /// Validation fraction used when a registry entry lacks a validation set.
    pub val_fraction: f64,
    pub conditions: Vec<Condition>,
}

impl Manifest {
    pub fn paper(kind: ManifestKind) -> Self {
        Self {
            name: serde_json::to_value(kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
            conditions: build_manifest(kind),
        }
    }

    pub fn condition(&self, name: &str) -> Result<&Condition> {
        self.conditions
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("manifest {} has no condition {name}", self.name)))
    }

    /// Line-delimited: a header record, then one record per condition.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Head<'a> {
            name: &'a str,
            train: &'a TrainConfig,
            val_fraction: f64,
        }
        let mut s = serde_json::to_string(&Head {
            name: &self.name,
            train: &self.train,
            val_fraction: self.val_fraction,
        })?;
        s.push('\n');
        for c in &self.conditions {
            s.push_str(&serde_json::to_string(c)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Head {
            name: String,
            train: TrainConfig,
            val_fraction: f64,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Head = serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?)?;
        let conditions = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            name: head.name,
            train: head.train,
            val_fraction: head.val_fraction,
            conditions,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase1_grid() {
        let m = build_manifest(ManifestKind::Phase1);
        assert_eq!(m.len(), 7);
        let volumes: Vec<&str> = m.iter().skip(1).map(|c| c.phases[0].data.as_str()).collect();
        assert_eq!(
            volumes,
            ["synth-3k", "synth-12k", "synth-36k", "maestro-3k", "maestro-12k", "maestro-36k"]
        );
        assert!(m.iter().all(|c| c.d_model == 16 && c.seeds == [42]));
        assert_eq!(m[0].phases.len(), 1);
    }

    #[test]
    fn phase2_grid() {
        let m = build_manifest(ManifestKind::Phase2);
        assert_eq!(m.len(), 5);
        assert!(m.iter().all(|c| c.seeds == PAPER_SEEDS));
        assert_eq!(m[0].phases.len(), 1);
        assert_eq!(m[1].phases[0].data, "maestro-12k");
        let c: Vec<&str> = m[2].phases.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(c, ["music", "poetry", "prose"]);
        assert_eq!(m[2].phases[0].data, "maestro-36k");
        assert_eq!(m[3].phases[0].data, "synth-36k");
        assert_eq!(m[4].phases[0].stop, StopRule::FixedEpochs { epochs: 5 });
        assert!(m.iter().flat_map(|c| &c.phases).filter(|p| p.name == "music").all(|p| p.shared_seed == Some(42)));
        assert_eq!(build_manifest(ManifestKind::ComputeMatched).len(), 1);
    }

    #[test]
    fn phase3_and_convergence_grids() {
        let m = build_manifest(ManifestKind::Phase3);
        assert_eq!(m.len(), 9);
        let ds: Vec<usize> = m.iter().map(|c| c.d_model).collect();
        assert_eq!(ds, [16, 16, 16, 32, 32, 32, 64, 64, 64]);
        let m = build_manifest(ManifestKind::Convergence);
        assert_eq!(m.len(), 4);
        assert_eq!(m[3].seeds, PAPER_SEEDS);
        assert_eq!(m[3].phases[0].data, "maestro-36k");
        assert_eq!(m[1].phases[0].data, "maestro-12k");
        assert!(matches!(m[3].phases[2].stop, StopRule::Plateau { .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        for kind in [ManifestKind::Phase1, ManifestKind::Phase2, ManifestKind::Convergence] {
            let m = Manifest::paper(kind);
            assert_eq!(Manifest::from_jsonl(&m.to_jsonl().unwrap()).unwrap(), m);
        }
        assert_eq!(Manifest::paper(ManifestKind::ComputeMatched).name, "compute-matched");
        assert_eq!("2".parse::<ManifestKind>().unwrap(), ManifestKind::Phase2);
    }
}
