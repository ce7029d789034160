use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VocabId;
use crate::nn::Rng;
use crate::{Error, Result, CHUNK_LEN};

/// File layout:
///
/// ```text
/// magic       8 bytes "OVTCHNK\0"
/// version     u32 LE
/// vocab code  u8 (0 music160, 1 subword50257, 2 wordlevel-test)
/// vocab size  u32 LE
/// rows        u64 LE
/// prov len    u32 LE, then that many bytes of JSON provenance
/// payload     rows x 257 ids, u16 LE for music160, u32 LE otherwise
/// ```
pub const CHUNKSET_MAGIC: &[u8; 8] = b"OVTCHNK\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
}

/// `N x 257` token matrix. The first 256 ids of a row are model input and
/// the last 256 the shifted targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkSet {
    vocab: VocabId,
    vocab_size: usize,
    data: Vec<u32>,
    pub provenance: Provenance,
}

impl ChunkSet {
    /// Cut `stream` into `floor(len / 257)` rows, dropping the remainder.
    pub fn chunk(stream: &[u32], vocab: VocabId, vocab_size: usize, provenance: Provenance) -> Result<Self> {
        if stream.len() < CHUNK_LEN {
            return Err(Error::InsufficientTokens {
                needed: CHUNK_LEN,
                got: stream.len(),
            });
        }
        let n = stream.len() / CHUNK_LEN;
        Self::from_rows(stream[..n * CHUNK_LEN].to_vec(), vocab, vocab_size, provenance)
    }

    /// [`ChunkSet::chunk`] for vocabularies with a fixed size.
    pub fn from_stream(stream: &[u32], vocab: VocabId, provenance: Provenance) -> Result<Self> {
        let size = vocab
            .fixed_size()
            .ok_or_else(|| Error::Config(format!("{vocab} needs an explicit vocabulary size")))?;
        Self::chunk(stream, vocab, size, provenance)
    }

    /// Wrap an already row-major matrix; checks width and id range.
    pub fn from_rows(data: Vec<u32>, vocab: VocabId, vocab_size: usize, provenance: Provenance) -> Result<Self> {
        if data.len() % CHUNK_LEN != 0 {
            return Err(Error::Format(format!("{} ids is not a multiple of {CHUNK_LEN}", data.len())));
        }
        if vocab == VocabId::Music160 && vocab_size > u16::MAX as usize + 1 {
            return Err(Error::Config("music vocabulary too large for u16 storage".into()));
        }
        if let Some((position, &token)) = data.iter().enumerate().find(|(_, &t)| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                position,
                token,
                vocab: vocab_size,
            });
        }
        Ok(Self {
            vocab,
            vocab_size,
            data,
            provenance,
        })
    }

    pub fn vocab(&self) -> VocabId {
        self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.data.len() / CHUNK_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * CHUNK_LEN..(i + 1) * CHUNK_LEN]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.data.chunks_exact(CHUNK_LEN)
    }

    /// All ids, row-major.
    pub fn tokens(&self) -> &[u32] {
        &self.data
    }

    /// Rows at `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * CHUNK_LEN);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            vocab: self.vocab,
            vocab_size: self.vocab_size,
            data,
            provenance: self.provenance.clone(),
        }
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Uniform sample of `target` rows without replacement, kept in their
    /// original order.
    pub fn subsample(&self, target: usize, rng: &mut Rng) -> Result<Self> {
        if target == 0 || target > self.len() {
            return Err(Error::Config(format!(
                "subsample target {target} outside 1..={}",
                self.len()
            )));
        }
        let mut out = self.select(&rng.sample_sorted(self.len(), target));
        out.provenance.source = format!("{}|subsample:{target}", self.provenance.source);
        out.provenance.seed = rng.seed();
        Ok(out)
    }

    /// Random disjoint split; `round(N * val_fraction)` rows go to
    /// validation. Both halves keep the original row order.
    pub fn split_train_val(&self, val_fraction: f64, rng: &mut Rng) -> Result<(Self, Self)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction {val_fraction} outside (0, 1)")));
        }
        let n = self.len();
        let n_val = (n as f64 * val_fraction).round() as usize;
        let perm = rng.permutation(n);
        let mut val: Vec<usize> = perm[..n_val].to_vec();
        let mut train: Vec<usize> = perm[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok((self.select(&train), self.select(&val)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let prov = serde_json::to_vec(&self.provenance)?;
        let mut out = Vec::with_capacity(40 + prov.len() + self.data.len() * 4);
        out.extend_from_slice(CHUNKSET_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.vocab.code());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        out.extend_from_slice(&prov);
        if self.vocab == VocabId::Music160 {
            for &t in &self.data {
                out.extend_from_slice(&(t as u16).to_le_bytes());
            }
        } else {
            for &t in &self.data {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("chunk set: {m}"));
        if b.len() < 29 || &b[..8] != CHUNKSET_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let vocab = VocabId::from_code(b[12]).ok_or_else(|| bad("unknown vocabulary code"))?;
        let vocab_size = u32_at(13) as usize;
        let rows = u64::from_le_bytes(b[17..25].try_into().unwrap()) as usize;
        let plen = u32_at(25) as usize;
        let prov_end = 29 + plen;
        let provenance: Provenance = serde_json::from_slice(b.get(29..prov_end).ok_or_else(|| bad("truncated"))?)?;
        let width = if vocab == VocabId::Music160 { 2 } else { 4 };
        let payload = &b[prov_end..];
        if payload.len() != rows * CHUNK_LEN * width {
            return Err(bad("payload length does not match row count"));
        }
        let data = if width == 2 {
            payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect()
        } else {
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        };
        Self::from_rows(data, vocab, vocab_size, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use proptest::prelude::*;

    fn prov() -> Provenance {
        Provenance {
            source: "test".into(),
            seed: 0,
        }
    }

    fn stream(n: usize) -> Vec<u32> {
        (0..n as u32).map(|i| i % 150).collect()
    }

    #[test]
    fn chunking_examples() {
        let s = stream(514);
        let cs = ChunkSet::chunk(&s, VocabId::Music160, 160, prov()).unwrap();
        assert_eq!(cs.len(), 2);
        let cs = ChunkSet::chunk(&stream(600), VocabId::Music160, 160, prov()).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.row(1), &stream(600)[257..514]);
        let err = ChunkSet::chunk(&stream(256), VocabId::Music160, 160, prov()).unwrap_err();
        assert!(err.to_string().starts_with("insufficient tokens"));
        assert!(ChunkSet::chunk(&[200; 300], VocabId::Music160, 160, prov()).is_err());
    }

    #[test]
    fn subsample_and_split() {
        let cs = ChunkSet::chunk(&stream(257 * 100), VocabId::WordLevel, 160, prov()).unwrap();
        let mut rng = Rng::new(42, "sub");
        assert_eq!(cs.subsample(100, &mut rng).unwrap().tokens(), cs.tokens());
        assert!(cs.subsample(0, &mut rng).is_err());
        assert!(cs.subsample(101, &mut rng).is_err());
        let a = cs.subsample(30, &mut Rng::new(42, "sub")).unwrap();
        let b = cs.subsample(30, &mut Rng::new(42, "sub")).unwrap();
        assert_eq!(a, b);

        let (tr, va) = cs.split_train_val(0.1, &mut Rng::new(1, "split")).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
        let mut all: Vec<&[u32]> = tr.rows().chain(va.rows()).collect();
        all.sort();
        let mut orig: Vec<&[u32]> = cs.rows().collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_counts_at_paper_scale() {
        let cs = ChunkSet::from_rows(vec![0; 36_000 * 257], VocabId::Music160, 160, prov()).unwrap();
        let (tr, va) = cs.split_train_val(0.1, &mut Rng::new(42, "split")).unwrap();
        assert_eq!((tr.len(), va.len()), (32_400, 3_600));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (vocab, size) in [(VocabId::Music160, 160), (VocabId::WordLevel, 70_000)] {
            let s: Vec<u32> = (0..257 * 3).map(|i| (i * 7919) % size as u32).collect();
            let cs = ChunkSet::chunk(&s, vocab, size, prov()).unwrap();
            let p = dir.path().join(format!("{vocab}.chunks"));
            cs.save(&p).unwrap();
            assert_eq!(ChunkSet::load(&p).unwrap(), cs);
        }
        assert!(ChunkSet::from_bytes(b"junk").is_err());
    }

    proptest! {
        #[test]
        fn chunking_inverts_concatenation(len in 257usize..3000) {
            let s = stream(len);
            let cs = ChunkSet::chunk(&s, VocabId::Music160, 160, prov()).unwrap();
            prop_assert_eq!(cs.len(), len / 257);
            prop_assert_eq!(cs.tokens(), &s[..cs.len() * 257]);
        }
    }
}
