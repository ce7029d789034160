use serde::{Deserialize, Serialize};

use crate::corpus::ChunkSet;
use crate::midi::{self, TokenType, BAR, BOS, EOS};
use crate::model::Gpt;
use crate::nn::kernels::softmax_in_place;
use crate::par::{self, Execution};
use crate::{Error, Result};

/// The four deterministic grammar transitions.
pub const TRANSITIONS: [(TokenType, TokenType); 4] = [
    (TokenType::Special, TokenType::Pos),
    (TokenType::Pos, TokenType::Pitch),
    (TokenType::Pitch, TokenType::Dur),
    (TokenType::Dur, TokenType::Vel),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarProbe {
    pub bar_to_pos: f64,
    pub pos_to_pitch: f64,
    pub pitch_to_dur: f64,
    pub dur_to_vel: f64,
    /// Occurrences behind each mean, in the same order.
    pub counts: [usize; 4],
}

impl GrammarProbe {
    pub fn values(&self) -> [f64; 4] {
        [self.bar_to_pos, self.pos_to_pitch, self.pitch_to_dur, self.dur_to_vel]
    }
}

fn require_music(model: &Gpt<f32>) -> Result<()> {
    if model.config.vocab_size != midi::VOCAB_SIZE {
        return Err(Error::VocabMismatch {
            model: model.config.vocab_size,
            data: midi::VOCAB_SIZE,
        });
    }
    Ok(())
}

/// Mean probability mass the model puts on the grammatical successor type
/// after each BAR, POS, PITCH and DUR token in the first `max_chunks` rows.
pub fn probe_grammar(model: &Gpt<f32>, val: &ChunkSet, max_chunks: usize, exec: Execution) -> Result<GrammarProbe> {
    require_music(model)?;
    let n = val.len().min(max_chunks);
    if n == 0 {
        return Err(Error::EmptyData("grammar probe needs at least one chunk".into()));
    }
    let v = midi::VOCAB_SIZE;
    let per_chunk = par::map_indexed(exec, n, |i| -> Result<([f64; 4], [usize; 4])> {
        let row = val.row(i);
        let input = &row[..row.len() - 1];
        let logits = model.forward(input)?;
        let (mut sums, mut counts) = ([0.0; 4], [0usize; 4]);
        for (t, &tok) in input.iter().enumerate() {
            let k = match tok {
                BAR => 0,
                _ => match midi::token_type(tok)? {
                    TokenType::Pos => 1,
                    TokenType::Pitch => 2,
                    TokenType::Dur => 3,
                    _ => continue,
                },
            };
            let mut p = logits.data()[t * v..(t + 1) * v].to_vec();
            softmax_in_place(&mut p);
            let range = TRANSITIONS[k].1.range();
            sums[k] += p[range.start as usize..range.end as usize].iter().map(|&x| x as f64).sum::<f64>();
            counts[k] += 1;
        }
        Ok((sums, counts))
    });
    let (mut sums, mut counts) = ([0.0; 4], [0usize; 4]);
    for r in per_chunk {
        let (s, c) = r?;
        for k in 0..4 {
            sums[k] += s[k];
            counts[k] += c[k];
        }
    }
    let mean = |k: usize| if counts[k] == 0 { f64::NAN } else { sums[k] / counts[k] as f64 };
    Ok(GrammarProbe {
        bar_to_pos: mean(0),
        pos_to_pitch: mean(1),
        pitch_to_dur: mean(2),
        dur_to_vel: mean(3),
        counts,
    })
}

/// C-E-G at positions 0/4/8, duration two 16ths, velocity f, repeated in
/// three bars. Returned without a closing EOS.
pub fn motif_prompt() -> Vec<u32> {
    let mut v = vec![BOS];
    for _ in 0..3 {
        v.push(BAR);
        for (pos, pitch) in [(0u8, 60u8), (4, 64), (8, 67)] {
            v.extend([
                midi::pos_token(pos),
                midi::pitch_token(pitch),
                midi::dur_token(2),
                midi::vel_token(2),
            ]);
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifProbe {
    /// P(BAR) after the third repetition.
    pub p_bar: f64,
    /// P(POS_0) once that BAR is appended.
    pub p_pos: f64,
}

pub fn probe_motif(model: &Gpt<f32>) -> Result<MotifProbe> {
    require_music(model)?;
    let mut prompt = motif_prompt();
    let p_bar = model.next_token_distribution(&prompt)?[BAR as usize] as f64;
    prompt.push(BAR);
    let p_pos = model.next_token_distribution(&prompt)?[midi::pos_token(0) as usize] as f64;
    Ok(MotifProbe { p_bar, p_pos })
}

/// `[layer][head]` fraction of attention mass on keys more than `threshold`
/// positions back, averaged over query positions `t >= threshold`.
pub fn probe_attention_distance(
    model: &Gpt<f32>,
    val: &ChunkSet,
    threshold: usize,
    max_chunks: usize,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let n = val.len().min(max_chunks);
    if n == 0 {
        return Err(Error::EmptyData("attention probe needs at least one chunk".into()));
    }
    let (l, h) = (model.config.n_layers, model.config.n_heads);
    let per_chunk = par::map_indexed(exec, n, |i| -> Result<(Vec<f64>, usize)> {
        let row = val.row(i);
        let input = &row[..row.len() - 1];
        let maps = model.attention_maps(input)?;
        let t_len = input.len();
        let mut acc = vec![0.0; l * h];
        let mut queries = 0;
        for t in threshold..t_len {
            queries += 1;
            for (lh, a) in acc.iter_mut().enumerate() {
                let base = (lh * t_len + t) * t_len;
                // keys s with t - s > threshold
                *a += maps.data()[base..base + (t - threshold)].iter().map(|&x| x as f64).sum::<f64>();
            }
        }
        Ok((acc, queries))
    });
    let mut acc = vec![0.0; l * h];
    let mut queries = 0usize;
    for r in per_chunk {
        let (a, q) = r?;
        for (x, y) in acc.iter_mut().zip(a) {
            *x += y;
        }
        queries += q;
    }
    let q = queries.max(1) as f64;
    Ok(acc.chunks(h.max(1)).map(|row| row.iter().map(|x| x / q).collect()).collect())
}

/// Prompt followed by EOS, for grammar validation of the probe input.
pub fn closed_motif_prompt() -> Vec<u32> {
    let mut p = motif_prompt();
    p.push(EOS);
    p
}
