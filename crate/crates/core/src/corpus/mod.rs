//! Training data: the [`ChunkSet`] container and the ingestion paths that
//! produce it (MAESTRO note tables, byte-level BPE text, word-level text).

mod bpe;
mod chunks;
mod maestro;
mod words;

pub use bpe::{bytes_to_unicode, SubwordCodec, GPT2_PATTERN, GPT2_VOCAB_SIZE};
pub use chunks::{ChunkSet, Provenance, CHUNKSET_MAGIC};
pub use maestro::{load_maestro, maestro_stream, parse_maestro, MaestroPiece};
pub use words::{split_wikitext_documents, subsample_documents, WordCodec, UNK};

use serde::{Deserialize, Serialize};

/// Which vocabulary a token matrix or model head refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VocabId {
    #[serde(rename = "music160")]
    Music160,
    #[serde(rename = "subword50257")]
    Subword50257,
    #[serde(rename = "wordlevel-test")]
    WordLevel,
}

impl VocabId {
    /// Size for vocabularies with a fixed layout; `None` for corpus-built ones.
    pub fn fixed_size(self) -> Option<usize> {
        match self {
            VocabId::Music160 => Some(crate::midi::VOCAB_SIZE),
            VocabId::Subword50257 => Some(GPT2_VOCAB_SIZE),
            VocabId::WordLevel => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            VocabId::Music160 => 0,
            VocabId::Subword50257 => 1,
            VocabId::WordLevel => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [VocabId::Music160, VocabId::Subword50257, VocabId::WordLevel]
            .into_iter()
            .find(|v| v.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            VocabId::Music160 => "music160",
            VocabId::Subword50257 => "subword50257",
            VocabId::WordLevel => "wordlevel-test",
        }
    }
}

impl std::fmt::Display for VocabId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VocabId {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        [VocabId::Music160, VocabId::Subword50257, VocabId::WordLevel]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown vocabulary {s}")))
    }
}
