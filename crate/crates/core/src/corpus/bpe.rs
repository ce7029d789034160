use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use fancy_regex::Regex;

use crate::{Error, Result};

pub const GPT2_VOCAB_SIZE: usize = 50_257;

/// Pre-tokenization pattern of the GPT-2 byte-level BPE.
pub const GPT2_PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// The reversible byte -> printable-char table used by byte-level BPE.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars = printable.clone();
    let mut n = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + n);
            n += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, c) in printable.into_iter().zip(chars) {
        table[b as usize] = char::from_u32(c).unwrap();
    }
    table
}

/// Byte-level BPE codec loaded from the standard `encoder.json` +
/// `vocab.bpe` pair.
pub struct SubwordCodec {
    byte_ids: [u32; 256],
    merges: HashMap<(u32, u32), (u32, u32)>,
    id_bytes: Vec<Vec<u8>>,
    pattern: Regex,
    cache: Mutex<HashMap<Vec<u8>, Vec<u32>>>,
}

impl std::fmt::Debug for SubwordCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubwordCodec")
            .field("vocab_size", &self.vocab_size())
            .field("merges", &self.merges.len())
            .finish()
    }
}

impl SubwordCodec {
    pub fn load(encoder_json: &Path, merges: &Path) -> Result<Self> {
        let enc = fs::read_to_string(encoder_json).map_err(|e| Error::io(encoder_json, e))?;
        let mer = fs::read_to_string(merges).map_err(|e| Error::io(merges, e))?;
        Self::from_strings(&enc, &mer)
    }

    /// Load from `dir/encoder.json` and `dir/vocab.bpe`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join("encoder.json"), &dir.join("vocab.bpe"))
    }

    pub fn from_strings(encoder_json: &str, merges: &str) -> Result<Self> {
        let vocab: HashMap<String, u32> = serde_json::from_str(encoder_json)?;
        let size = vocab.values().max().map_or(0, |&m| m as usize + 1);
        let table = bytes_to_unicode();
        let mut byte_decoder = HashMap::new();
        for (b, c) in table.iter().enumerate() {
            byte_decoder.insert(*c, b as u8);
        }
        let mut id_bytes = vec![Vec::new(); size];
        for (tok, &id) in &vocab {
            // special tokens such as <|endoftext|> are not byte-mapped
            id_bytes[id as usize] = tok
                .chars()
                .map(|c| byte_decoder.get(&c).copied())
                .collect::<Option<Vec<u8>>>()
                .unwrap_or_else(|| tok.as_bytes().to_vec());
        }
        let lookup = |s: &str| vocab.get(s).copied().ok_or_else(|| Error::Format(format!("merge symbol {s:?} not in vocabulary")));
        let mut byte_ids = [0u32; 256];
        for (b, c) in table.iter().enumerate() {
            byte_ids[b] = lookup(&c.to_string())?;
        }
        let mut merge_map = HashMap::new();
        for (rank, line) in merges
            .lines()
            .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
            .enumerate()
        {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad merge line {line:?}")))?;
            let merged = lookup(&format!("{a}{b}"))?;
            merge_map.insert((lookup(a)?, lookup(b)?), (rank as u32, merged));
        }
        Ok(Self {
            byte_ids,
            merges: merge_map,
            id_bytes,
            pattern: Regex::new(GPT2_PATTERN).map_err(|e| Error::Config(e.to_string()))?,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_bytes.len()
    }

    fn bpe(&self, piece: &[u8]) -> Vec<u32> {
        if let Some(hit) = self.cache.lock().unwrap().get(piece) {
            return hit.clone();
        }
        let mut syms: Vec<u32> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&(r, m)| (r, (w[0], w[1]), m)))
                .min_by_key(|x| x.0);
            let Some((_, pair, merged)) = best else { break };
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            syms = out;
        }
        self.cache.lock().unwrap().insert(piece.to_vec(), syms.clone());
        syms
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_str_into(text, &mut out);
        out
    }

    fn encode_str_into(&self, text: &str, out: &mut Vec<u32>) {
        for m in self.pattern.find_iter(text) {
            let m = m.expect("pre-tokenizer backtracking limit");
            out.extend(self.bpe(m.as_str().as_bytes()));
        }
    }

    /// Encode arbitrary bytes. Valid UTF-8 runs are pre-tokenized as text;
    /// each invalid byte becomes its own piece.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in bytes.utf8_chunks() {
            self.encode_str_into(chunk.valid(), &mut out);
            for &b in chunk.invalid() {
                out.push(self.byte_ids[b as usize]);
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let b = self.id_bytes.get(id as usize).ok_or(Error::TokenOutOfRange {
                position: 0,
                token: id,
                vocab: self.vocab_size(),
            })?;
            out.extend_from_slice(b);
        }
        Ok(out)
    }
}
