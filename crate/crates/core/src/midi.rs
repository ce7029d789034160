//! Simplified REMI tokenizer over a fixed 160-token vocabulary.
//!
//! | ids      | meaning                  |
//! |----------|--------------------------|
//! | 0..4     | PAD, BOS, EOS, BAR       |
//! | 4..20    | POS_0 ..= POS_15         |
//! | 20..148  | PITCH_0 ..= PITCH_127    |
//! | 148..156 | DUR_1 ..= DUR_8          |
//! | 156..160 | VEL_pp, VEL_p, VEL_f, VEL_ff |
//!
//! A piece is `BOS (BAR (POS PITCH DUR VEL)*)* EOS PAD*`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const VOCAB_SIZE: usize = 160;
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const BAR: u32 = 3;
pub const POS_BASE: u32 = 4;
pub const PITCH_BASE: u32 = 20;
pub const DUR_BASE: u32 = 148;
pub const VEL_BASE: u32 = 156;

pub const SLOTS_PER_BAR: u32 = 16;
pub const MAX_DUR: u8 = 8;
/// Longest run of empty bars kept inside one segment by [`encode_segments`].
pub const MAX_EMPTY_BARS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenType {
    Special,
    Pos,
    Pitch,
    Dur,
    Vel,
}

impl TokenType {
    pub const ALL: [TokenType; 5] = [Self::Special, Self::Pos, Self::Pitch, Self::Dur, Self::Vel];

    pub fn range(self) -> Range<u32> {
        match self {
            Self::Special => 0..POS_BASE,
            Self::Pos => POS_BASE..PITCH_BASE,
            Self::Pitch => PITCH_BASE..DUR_BASE,
            Self::Dur => DUR_BASE..VEL_BASE,
            Self::Vel => VEL_BASE..VOCAB_SIZE as u32,
        }
    }
}

pub fn token_type(id: u32) -> Result<TokenType> {
    Ok(match id {
        0..4 => TokenType::Special,
        4..20 => TokenType::Pos,
        20..148 => TokenType::Pitch,
        148..156 => TokenType::Dur,
        156..160 => TokenType::Vel,
        _ => {
            return Err(Error::TokenOutOfRange {
                position: 0,
                token: id,
                vocab: VOCAB_SIZE,
            })
        }
    })
}

pub fn pos_token(pos: u8) -> u32 {
    debug_assert!((pos as u32) < SLOTS_PER_BAR);
    POS_BASE + pos as u32
}

pub fn pitch_token(pitch: u8) -> u32 {
    debug_assert!(pitch < 128);
    PITCH_BASE + pitch as u32
}

/// `dur` in 1..=8 sixteenth notes.
pub fn dur_token(dur: u8) -> u32 {
    debug_assert!((1..=MAX_DUR).contains(&dur));
    DUR_BASE + dur as u32 - 1
}

pub fn vel_token(bin: u8) -> u32 {
    debug_assert!(bin < 4);
    VEL_BASE + bin as u32
}

/// A performed note in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset: f64,
    pub offset: f64,
    pub pitch: u8,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(onset: f64, offset: f64, pitch: u8, velocity: u8) -> Result<Self> {
        if !(onset.is_finite() && offset.is_finite()) || onset < 0.0 || offset <= onset {
            return Err(Error::Config(format!("bad note timing: onset {onset}, offset {offset}")));
        }
        if pitch > 127 || velocity > 127 {
            return Err(Error::Config(format!("pitch {pitch} / velocity {velocity} outside 0..=127")));
        }
        Ok(Self {
            onset,
            offset,
            pitch,
            velocity,
        })
    }
}

/// Fixed-tempo grid mapping seconds to sixteenth-note slots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub seconds_per_slot: f64,
}

impl GridSpec {
    /// Sixteenth-note grid at `bpm` quarter notes per minute.
    pub fn from_bpm(bpm: f64) -> Self {
        Self {
            seconds_per_slot: 60.0 / bpm / 4.0,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::from_bpm(120.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantizedNote {
    pub bar: u32,
    pub pos: u8,
    pub pitch: u8,
    pub dur: u8,
    pub vel_bin: u8,
}

impl QuantizedNote {
    fn sort_key(&self) -> (u32, u8, u8, u8, u8) {
        (self.bar, self.pos, self.pitch, self.dur, self.vel_bin)
    }
}

pub fn velocity_bin(velocity: u8) -> u8 {
    (velocity / 32).min(3)
}

pub fn quantize(note: &NoteEvent, grid: &GridSpec) -> QuantizedNote {
    let slot = (note.onset / grid.seconds_per_slot).round().max(0.0) as u64;
    let dur = ((note.offset - note.onset) / grid.seconds_per_slot).round();
    QuantizedNote {
        bar: (slot / SLOTS_PER_BAR as u64) as u32,
        pos: (slot % SLOTS_PER_BAR as u64) as u8,
        pitch: note.pitch,
        dur: dur.clamp(1.0, MAX_DUR as f64) as u8,
        vel_bin: velocity_bin(note.velocity),
    }
}

fn push_note(out: &mut Vec<u32>, n: &QuantizedNote) {
    out.extend([pos_token(n.pos), pitch_token(n.pitch), dur_token(n.dur), vel_token(n.vel_bin)]);
}

/// Encode quantized notes. Every bar from 0 through the last occupied bar
/// gets a BAR token, so bar indices survive a round-trip.
pub fn encode_quantized(notes: &[QuantizedNote]) -> Vec<u32> {
    encode_bars(notes, 0)
}

/// Like [`encode_quantized`] but emits at least `min_bars` BAR tokens,
/// padding with empty trailing bars.
pub fn encode_bars(notes: &[QuantizedNote], min_bars: u32) -> Vec<u32> {
    let mut sorted = notes.to_vec();
    sorted.sort_by_key(QuantizedNote::sort_key);
    let n_bars = sorted.last().map_or(0, |n| n.bar + 1).max(min_bars);
    let mut out = vec![BOS];
    let mut it = sorted.iter().peekable();
    for bar in 0..n_bars {
        out.push(BAR);
        while let Some(n) = it.next_if(|n| n.bar == bar) {
            push_note(&mut out, n);
        }
    }
    out.push(EOS);
    out
}

pub fn encode_piece(notes: &[NoteEvent], grid: &GridSpec) -> Vec<u32> {
    let q: Vec<QuantizedNote> = notes.iter().map(|n| quantize(n, grid)).collect();
    encode_quantized(&q)
}

/// Encode a performance, splitting it wherever more than
/// [`MAX_EMPTY_BARS`] consecutive bars are empty. Each segment is rebased so
/// its first occupied bar is bar 0.
pub fn encode_segments(notes: &[NoteEvent], grid: &GridSpec) -> Vec<Vec<u32>> {
    let mut q: Vec<QuantizedNote> = notes.iter().map(|n| quantize(n, grid)).collect();
    q.sort_by_key(QuantizedNote::sort_key);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=q.len() {
        let split = i == q.len() || q[i].bar - q[i - 1].bar > MAX_EMPTY_BARS + 1;
        if split && start < i {
            let base = q[start].bar;
            let seg: Vec<QuantizedNote> = q[start..i]
                .iter()
                .map(|n| QuantizedNote { bar: n.bar - base, ..*n })
                .collect();
            out.push(encode_quantized(&seg));
            start = i;
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    AfterBos,
    InBar,
    Pos,
    Pitch,
    Dur,
    Done,
}

/// Run the grammar automaton, calling `on_note` for each complete note.
fn parse(tokens: &[u32], mut on_note: impl FnMut(QuantizedNote)) -> std::result::Result<(), usize> {
    let mut state = State::Start;
    let mut bar: Option<u32> = None;
    let mut cur = QuantizedNote {
        bar: 0,
        pos: 0,
        pitch: 0,
        dur: 1,
        vel_bin: 0,
    };
    for (i, &tok) in tokens.iter().enumerate() {
        let ty = token_type(tok).map_err(|_| i)?;
        state = match (state, ty, tok) {
            (State::Start, _, BOS) => State::AfterBos,
            (State::AfterBos | State::InBar, _, BAR) => {
                bar = Some(bar.map_or(0, |b| b + 1));
                State::InBar
            }
            (State::AfterBos | State::InBar, _, EOS) => State::Done,
            (State::InBar, TokenType::Pos, _) => {
                cur.bar = bar.unwrap_or(0);
                cur.pos = (tok - POS_BASE) as u8;
                State::Pos
            }
            (State::Pos, TokenType::Pitch, _) => {
                cur.pitch = (tok - PITCH_BASE) as u8;
                State::Pitch
            }
            (State::Pitch, TokenType::Dur, _) => {
                cur.dur = (tok - DUR_BASE + 1) as u8;
                State::Dur
            }
            (State::Dur, TokenType::Vel, _) => {
                cur.vel_bin = (tok - VEL_BASE) as u8;
                on_note(cur);
                State::InBar
            }
            (State::Done, _, PAD) => State::Done,
            _ => return Err(i),
        };
    }
    if state == State::Done {
        Ok(())
    } else {
        Err(tokens.len())
    }
}

/// `Ok` if `tokens` is a complete piece, otherwise the index of the first
/// offending token (`tokens.len()` when the input ends early).
pub fn validate_grammar(tokens: &[u32]) -> std::result::Result<(), usize> {
    parse(tokens, |_| {})
}

pub fn decode(tokens: &[u32]) -> Result<Vec<QuantizedNote>> {
    let mut notes = Vec::new();
    parse(tokens, |n| notes.push(n)).map_err(Error::Grammar)?;
    Ok(notes)
}

/// Serialize token ids as little-endian u16.
pub fn to_u16_le(tokens: &[u32]) -> Vec<u8> {
    tokens.iter().flat_map(|&t| (t as u16).to_le_bytes()).collect()
}

pub fn from_u16_le(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::Format("odd byte count for u16 token stream".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as u32)
        .collect())
}
