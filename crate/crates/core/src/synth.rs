//! Rule-based synthetic music.
//!
//! A piece picks a root in C3..=C5 and a scale, writes a 1-2 bar motif, then
//! extends it by repeatedly applying one of four operations to the motif
//! (repeat, diatonic transposition, pitch variation, contrasting phrase)
//! until a bar budget drawn uniformly from 4..=16 is met. Overshoot is cut at
//! the bar boundary.

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkSet, Provenance, VocabId};
use crate::midi::{self, QuantizedNote, SLOTS_PER_BAR};
use crate::nn::Rng;
use crate::par::{self, Execution};
use crate::{Error, Result, CHUNK_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
    Pentatonic,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Major, Mode::Minor, Mode::Pentatonic];

    pub fn intervals(self) -> &'static [i32] {
        match self {
            Mode::Major => &[0, 2, 4, 5, 7, 9, 11],
            Mode::Minor => &[0, 2, 3, 5, 7, 8, 10],
            Mode::Pentatonic => &[0, 2, 4, 7, 9],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub root: u8,
    pub mode: Mode,
}

pub const ROOT_RANGE: (u8, u8) = (48, 72);

impl Scale {
    pub fn new(root: u8, mode: Mode) -> Self {
        Self { root, mode }
    }

    pub fn random(rng: &mut Rng) -> Self {
        let root = rng.range_inclusive(ROOT_RANGE.0 as i64, ROOT_RANGE.1 as i64) as u8;
        let mode = Mode::ALL[rng.index(3)];
        Self { root, mode }
    }

    pub fn contains(&self, pitch: u8) -> bool {
        let rel = (pitch as i32 - self.root as i32).rem_euclid(12);
        self.mode.intervals().contains(&rel)
    }

    /// Every MIDI pitch in the scale, ascending.
    pub fn members(&self) -> Vec<u8> {
        (0..=127u8).filter(|&p| self.contains(p)).collect()
    }

    /// Members in the motif register `[root, root + 12]`.
    pub fn register(&self) -> Vec<u8> {
        (self.root..=self.root + 12).filter(|&p| self.contains(p)).collect()
    }
}

/// A short phrase. Note `bar` fields are relative to the motif start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub bars: u32,
    pub notes: Vec<QuantizedNote>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Repeat,
    Transpose,
    Vary,
    Contrast,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Self::Repeat, Self::Transpose, Self::Vary, Self::Contrast];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Probabilities of repeat, transpose, vary, contrast.
    pub op_probs: [f64; 4],
    pub vary_rate: f64,
    pub min_bars: u32,
    pub max_bars: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            op_probs: [0.40, 0.20, 0.25, 0.15],
            vary_rate: 0.30,
            min_bars: 4,
            max_bars: 16,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.op_probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.op_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Config(format!("operation probabilities must sum to 1, got {s}")));
        }
        if !(0.0..=1.0).contains(&self.vary_rate) || self.min_bars < 2 || self.min_bars > self.max_bars {
            return Err(Error::Config("bad vary rate or bar range".into()));
        }
        Ok(())
    }
}

/// Draw a fresh motif: 1-2 bars, 2-6 notes at distinct slots, pitches from
/// the scale register, durations uniform 1..=8, velocity bins uniform.
pub fn random_motif(rng: &mut Rng, scale: &Scale) -> Motif {
    let bars = rng.range_inclusive(1, 2) as u32;
    let n = rng.range_inclusive(2, 6) as usize;
    let register = scale.register();
    let slots = rng.sample_sorted((SLOTS_PER_BAR * bars) as usize, n);
    let notes = slots
        .into_iter()
        .map(|s| QuantizedNote {
            bar: s as u32 / SLOTS_PER_BAR,
            pos: (s as u32 % SLOTS_PER_BAR) as u8,
            pitch: register[rng.index(register.len())],
            dur: rng.range_inclusive(1, 8) as u8,
            vel_bin: rng.index(4) as u8,
        })
        .collect();
    Motif { bars, notes }
}

/// Move a scale pitch `steps` degrees along the scale, folding by octaves
/// back into 0..=127.
pub fn transpose_pitch(pitch: u8, scale: &Scale, steps: i32) -> u8 {
    let iv = scale.mode.intervals();
    let n = iv.len() as i32;
    let rel = pitch as i32 - scale.root as i32;
    let deg = iv
        .iter()
        .position(|&x| x == rel.rem_euclid(12))
        .expect("pitch not in scale") as i32;
    let total = rel.div_euclid(12) * n + deg + steps;
    let mut p = scale.root as i32 + 12 * total.div_euclid(n) + iv[total.rem_euclid(n) as usize];
    while p > 127 {
        p -= 12;
    }
    while p < 0 {
        p += 12;
    }
    p as u8
}

pub fn transpose_diatonic(motif: &Motif, scale: &Scale, steps: i32) -> Motif {
    Motif {
        bars: motif.bars,
        notes: motif
            .notes
            .iter()
            .map(|n| QuantizedNote {
                pitch: transpose_pitch(n.pitch, scale, steps),
                ..*n
            })
            .collect(),
    }
}

/// Replace each note's pitch with probability `rate` by a different member
/// of the scale register, chosen uniformly.
pub fn vary_pitches(motif: &Motif, scale: &Scale, rate: f64, rng: &mut Rng) -> Motif {
    let register = scale.register();
    let notes = motif
        .notes
        .iter()
        .map(|n| {
            if !rng.bernoulli(rate) {
                return *n;
            }
            let alts: Vec<u8> = register.iter().copied().filter(|&p| p != n.pitch).collect();
            QuantizedNote {
                pitch: alts[rng.index(alts.len())],
                ..*n
            }
        })
        .collect();
    Motif {
        bars: motif.bars,
        notes,
    }
}

/// Categorical draw: the first operation whose cumulative probability
/// exceeds `u ~ U[0,1)`. A `u` at or past the last threshold (possible only
/// through rounding) falls to the last operation.
pub fn sample_operation(rng: &mut Rng, cfg: &GenConfig) -> Operation {
    let u = rng.uniform();
    let mut cum = 0.0;
    for (op, p) in Operation::ALL.iter().zip(cfg.op_probs) {
        cum += p;
        if u < cum {
            return *op;
        }
    }
    Operation::Contrast
}

/// Draw a non-zero transposition in ±1..=4 scale steps.
fn transpose_steps(rng: &mut Rng) -> i32 {
    let k = rng.range_inclusive(1, 4) as i32;
    if rng.bernoulli(0.5) {
        k
    } else {
        -k
    }
}

/// A generated piece before tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub scale: Scale,
    pub bars: u32,
    pub motif: Motif,
    pub operations: Vec<Operation>,
    pub notes: Vec<QuantizedNote>,
}

impl Piece {
    pub fn tokens(&self) -> Vec<u32> {
        midi::encode_bars(&self.notes, self.bars)
    }
}

pub fn gen_piece_notes(rng: &mut Rng, cfg: &GenConfig) -> Piece {
    let scale = Scale::random(rng);
    let motif = random_motif(rng, &scale);
    let target = rng.range_inclusive(cfg.min_bars as i64, cfg.max_bars as i64) as u32;
    let mut notes = motif.notes.clone();
    let mut bar = motif.bars;
    let mut operations = Vec::new();
    while bar < target {
        let op = sample_operation(rng, cfg);
        let seg = match op {
            Operation::Repeat => motif.clone(),
            Operation::Transpose => transpose_diatonic(&motif, &scale, transpose_steps(rng)),
            Operation::Vary => vary_pitches(&motif, &scale, cfg.vary_rate, rng),
            Operation::Contrast => random_motif(rng, &scale),
        };
        operations.push(op);
        notes.extend(seg.notes.iter().map(|n| QuantizedNote { bar: n.bar + bar, ..*n }));
        bar += seg.bars;
    }
    notes.retain(|n| n.bar < target);
    Piece {
        scale,
        bars: target,
        motif,
        operations,
        notes,
    }
}

pub fn gen_piece(rng: &mut Rng, cfg: &GenConfig) -> Vec<u32> {
    gen_piece_notes(rng, cfg).tokens()
}

const BATCH: usize = 256;

/// Generate pieces from streams `piece{i}` of `rng`, concatenate their
/// tokens in index order and cut `n_chunks` chunks.
pub fn gen_corpus(rng: &Rng, cfg: &GenConfig, n_chunks: usize, exec: Execution) -> Result<ChunkSet> {
    cfg.validate()?;
    if n_chunks == 0 {
        return Err(Error::Config("n_chunks must be positive".into()));
    }
    let need = n_chunks * CHUNK_LEN;
    let mut stream: Vec<u32> = Vec::with_capacity(need + 4096);
    let mut next = 0usize;
    while stream.len() < need {
        let pieces = par::map_indexed(exec, BATCH, |i| {
            gen_piece(&mut rng.derive(&format!("piece{}", next + i)), cfg)
        });
        for p in pieces {
            stream.extend(p);
            if stream.len() >= need {
                break;
            }
        }
        next += BATCH;
    }
    stream.truncate(need);
    ChunkSet::from_stream(
        &stream,
        VocabId::Music160,
        Provenance {
            source: format!("synth:{n_chunks}"),
            seed: rng.seed(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_members() {
        let c = Scale::new(60, Mode::Major);
        assert!(c.contains(60) && c.contains(72) && !c.contains(61));
        assert_eq!(c.register(), vec![60, 62, 64, 65, 67, 69, 71, 72]);
        assert!(c.members().iter().all(|&p| c.contains(p)));
        assert_eq!(Scale::new(48, Mode::Pentatonic).register().len(), 6);
    }

    #[test]
    fn transposition() {
        let c = Scale::new(60, Mode::Major);
        let m = Motif {
            bars: 1,
            notes: [60, 64, 67]
                .iter()
                .enumerate()
                .map(|(i, &p)| QuantizedNote {
                    bar: 0,
                    pos: i as u8 * 4,
                    pitch: p,
                    dur: 2,
                    vel_bin: 2,
                })
                .collect(),
        };
        assert_eq!(transpose_diatonic(&m, &c, 0), m);
        let up: Vec<u8> = transpose_diatonic(&m, &c, 1).notes.iter().map(|n| n.pitch).collect();
        assert_eq!(up, vec![62, 65, 69]);
        let down: Vec<u8> = transpose_diatonic(&m, &c, -1).notes.iter().map(|n| n.pitch).collect();
        assert_eq!(down, vec![59, 62, 65]);
        // folding at the top of the MIDI range stays in scale
        for steps in -30..30 {
            let p = transpose_pitch(127, &Scale::new(67, Mode::Major), steps);
            assert!(Scale::new(67, Mode::Major).contains(p));
        }
    }

    #[test]
    fn variation_rate() {
        let mut rng = Rng::new(9, "vary");
        let scale = Scale::new(60, Mode::Minor);
        let (mut changed, mut total) = (0usize, 0usize);
        while total < 10_000 {
            let m = random_motif(&mut rng, &scale);
            let v = vary_pitches(&m, &scale, 0.3, &mut rng);
            for (a, b) in m.notes.iter().zip(&v.notes) {
                assert_eq!((a.bar, a.pos, a.dur, a.vel_bin), (b.bar, b.pos, b.dur, b.vel_bin));
                assert!(scale.contains(b.pitch));
                changed += (a.pitch != b.pitch) as usize;
                total += 1;
            }
        }
        let frac = changed as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.02, "{frac}");
    }

    #[test]
    fn pieces_are_valid_and_in_scale() {
        let cfg = GenConfig::default();
        let root = Rng::new(42, "synth");
        for i in 0..500 {
            let p = gen_piece_notes(&mut root.derive(&format!("piece{i}")), &cfg);
            assert!((4..=16).contains(&p.bars));
            let toks = p.tokens();
            assert_eq!(midi::validate_grammar(&toks), Ok(()));
            assert_eq!(toks.iter().filter(|&&t| t == midi::BAR).count() as u32, p.bars);
            assert!(p.notes.iter().all(|n| p.scale.contains(n.pitch)));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = GenConfig::default();
        let a = gen_piece(&mut Rng::new(5, "p"), &cfg);
        let b = gen_piece(&mut Rng::new(5, "p"), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_shape_and_modes_agree() {
        let cfg = GenConfig::default();
        let rng = Rng::new(42, "synth");
        let a = gen_corpus(&rng, &cfg, 50, Execution::Sequential).unwrap();
        let b = gen_corpus(&rng, &cfg, 50, Execution::Parallel).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        assert!(a.tokens().iter().all(|&t| t < 160));
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = GenConfig::default();
        cfg.op_probs[0] = 0.5;
        assert!(cfg.validate().is_err());
    }
}
