use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};

use crate::nn::Rng;
use crate::{Error, Result};

pub const UNK: &str = "<unk>";
const WORD_PATTERN: &str = r"[\p{L}\p{N}']+|[^\s\p{L}\p{N}']";

/// Small word-level codec for desk-scale runs. Lowercased words and single
/// punctuation marks are tokens; id 0 is `<unk>`. Decoding is lossy
/// (whitespace and case are not kept).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WordCodec {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(WORD_PATTERN).expect("static pattern"));
    let lower = text.to_lowercase();
    re.find_iter(&lower)
        .map(|m| m.expect("word pattern").as_str().to_string())
        .collect::<Vec<_>>()
        .into_iter()
}

impl WordCodec {
    /// Keep the `max_vocab - 1` most frequent tokens of `corpus` (ties broken
    /// alphabetically) after `<unk>`.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, max_vocab: usize) -> Result<Self> {
        if max_vocab < 2 {
            return Err(Error::Config("word vocabulary needs at least 2 entries".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for w in words(doc) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = std::iter::once(UNK.to_string())
            .chain(by_freq.into_iter().map(|(w, _)| w).take(max_vocab - 1))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        words(text).map(|w| self.index.get(&w).copied().unwrap_or(0)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i as usize).map_or(UNK, |s| s.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(&self.tokens)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = serde_json::from_slice(&bytes)?;
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Format(format!("{}: first token must be {UNK}", path.display())));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Split WikiText-style raw text into articles at top-level ` = Title = `
/// heading lines.
pub fn split_wikitext_documents(text: &str) -> Vec<String> {
    let mut docs: Vec<String> = Vec::new();
    let mut cur = String::new();
    for line in text.lines() {
        let t = line.trim();
        let top_heading = t.starts_with("= ") && t.ends_with(" =") && !t.starts_with("= =");
        if top_heading && !cur.trim().is_empty() {
            docs.push(std::mem::take(&mut cur));
        }
        cur.push_str(line);
        cur.push('\n');
    }
    if !cur.trim().is_empty() {
        docs.push(cur);
    }
    docs
}

/// Keep `round(n * fraction)` documents chosen uniformly, in original order.
pub fn subsample_documents<T: Clone>(docs: &[T], fraction: f64, rng: &mut Rng) -> Result<Vec<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = ((docs.len() as f64 * fraction).round() as usize).max(1).min(docs.len());
    Ok(rng.sample_sorted(docs.len(), k).into_iter().map(|i| docs[i].clone()).collect())
}
