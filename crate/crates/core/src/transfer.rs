//! Selective weight transfer: carry the vocabulary-independent body of a
//! checkpoint into a model for another vocabulary, reinitializing the token
//! embedding and output head.

use serde::{Deserialize, Serialize};

use crate::corpus::VocabId;
use crate::model::{init_tensor, param_names, Checkpoint, CheckpointMeta, Gpt, ModelConfig};
use crate::nn::Rng;
use crate::{Error, Result};

/// Name patterns. A pattern ending in `*` matches by prefix, any other
/// pattern must match the whole name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub transfer: Vec<String>,
    pub reinit: Vec<String>,
    /// Stream label for the reinitialized tensors.
    pub reinit_stream: String,
}

impl Default for TransferSpec {
    fn default() -> Self {
        Self {
            transfer: vec!["blocks.*".into(), "final_ln.*".into(), "pos_emb".into()],
            reinit: vec!["tok_emb".into(), "lm_head.*".into()],
            reinit_stream: "init".into(),
        }
    }
}

impl TransferSpec {
    /// Copy everything, reinitialize nothing.
    pub fn identity() -> Self {
        Self {
            transfer: vec!["*".into()],
            reinit: Vec::new(),
            reinit_stream: "init".into(),
        }
    }

    pub fn is_transferred(&self, name: &str) -> bool {
        self.transfer.iter().any(|p| pattern_matches(p, name))
    }

    pub fn is_reinit(&self, name: &str) -> bool {
        self.reinit.iter().any(|p| pattern_matches(p, name))
    }

    /// Every parameter of `config` must fall in exactly one of the two sets.
    pub fn check_cover(&self, config: &ModelConfig) -> Result<()> {
        let bad: Vec<String> = param_names(config)
            .into_iter()
            .filter(|n| self.is_transferred(n) == self.is_reinit(n))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "transfer spec must cover each parameter exactly once; offending: {}",
                bad.join(", ")
            )))
        }
    }
}

pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

/// Result of a transfer: the new model and metadata carrying the source's
/// lineage.
#[derive(Clone, Debug)]
pub struct Transferred {
    pub model: Gpt<f32>,
    pub meta: CheckpointMeta,
}

/// Build a `dst_cfg` model from `src`. Transfer-set tensors are copied bit
/// for bit; reinit-set tensors follow the usual init rules drawn from
/// `Rng(seed, spec.reinit_stream)`.
pub fn selective_transfer(
    src: &Checkpoint,
    dst_cfg: &ModelConfig,
    dst_vocab: VocabId,
    spec: &TransferSpec,
    seed: u64,
) -> Result<Transferred> {
    dst_cfg.validate()?;
    let body = src.meta.config.body_mismatches(dst_cfg);
    if !body.is_empty() {
        return Err(Error::DimensionMismatch(body));
    }
    spec.check_cover(dst_cfg)?;
    let rng = Rng::new(seed, spec.reinit_stream.clone());
    let mut model = Gpt::<f32>::zeros(dst_cfg);
    let mut mismatched = Vec::new();
    for (name, slot) in model.named_tensors_mut() {
        if spec.is_reinit(&name) {
            init_tensor(&name, slot, &rng);
            continue;
        }
        let t = src.tensor(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if t.shape() != slot.shape() {
            mismatched.push(format!("{name}: {:?} vs {:?}", t.shape(), slot.shape()));
            continue;
        }
        *slot = t.clone();
    }
    if !mismatched.is_empty() {
        return Err(Error::DimensionMismatch(mismatched));
    }
    let mut meta = CheckpointMeta::new(*dst_cfg, dst_vocab, seed, "transfer");
    meta.lineage = src.child_lineage()?;
    Ok(Transferred { model, meta })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffStatus {
    Equal,
    Changed,
    MissingInA,
    MissingInB,
}

/// Bitwise per-tensor comparison. Names of `a` come first, in order, then
/// names only present in `b`.
pub fn diff_checkpoints(a: &Checkpoint, b: &Checkpoint) -> Vec<(String, DiffStatus)> {
    let mut out = Vec::new();
    for (name, ta) in &a.tensors {
        let status = match b.tensor(name) {
            None => DiffStatus::MissingInB,
            Some(tb) if ta.bit_eq(tb) => DiffStatus::Equal,
            Some(_) => DiffStatus::Changed,
        };
        out.push((name.clone(), status));
    }
    for (name, _) in &b.tensors {
        if a.tensor(name).is_none() {
            out.push((name.clone(), DiffStatus::MissingInA));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn music_ckpt(d: usize) -> Checkpoint {
        let c = ModelConfig::paper(d, 160);
        let m = Gpt::init(&c, &Rng::new(7, "init")).unwrap();
        Checkpoint::from_model(&m, CheckpointMeta::new(c, VocabId::Music160, 7, "music"))
    }

    #[test]
    fn default_spec_covers_model() {
        let spec = TransferSpec::default();
        spec.check_cover(&ModelConfig::paper(16, 160)).unwrap();
        assert!(spec.is_transferred("blocks.3.attn.wq"));
        assert!(spec.is_reinit("lm_head.b"));
        assert!(!pattern_matches("pos_emb", "pos_emb2"));
        let partial = TransferSpec {
            reinit: vec!["tok_emb".into()],
            ..TransferSpec::default()
        };
        assert!(partial.check_cover(&ModelConfig::paper(16, 160)).is_err());
    }

    #[test]
    fn music_to_subword_contract() {
        let src = music_ckpt(16);
        let dst = ModelConfig::paper(16, 50_257);
        let out = selective_transfer(&src, &dst, VocabId::Subword50257, &TransferSpec::default(), 42).unwrap();
        assert_eq!(out.model.tok_emb.shape(), &[50_257, 16]);
        for (name, t) in out.model.named_tensors() {
            if name.starts_with("blocks.") || name.starts_with("final_ln.") || name == "pos_emb" {
                assert!(t.bit_eq(src.tensor(&name).unwrap()), "{name}");
            }
        }
        assert_eq!(out.meta.lineage.len(), 1);
        assert_eq!(out.meta.lineage[0].sha256, src.sha256().unwrap());
        let fresh = Gpt::init(&dst, &Rng::new(42, "init")).unwrap();
        assert!(out.model.tok_emb.bit_eq(&fresh.tok_emb));
    }

    #[test]
    fn identity_transfer() {
        let src = music_ckpt(16);
        let out = selective_transfer(&src, &src.meta.config, VocabId::Music160, &TransferSpec::identity(), 1).unwrap();
        assert!(out.model.bit_eq(&src.to_model().unwrap()));
    }

    #[test]
    fn body_mismatch_lists_dimensions() {
        let src = music_ckpt(16);
        let err = selective_transfer(
            &src,
            &ModelConfig::paper(32, 160),
            VocabId::Music160,
            &TransferSpec::default(),
            1,
        )
        .unwrap_err();
        match err {
            Error::DimensionMismatch(v) => {
                assert!(v.iter().any(|s| s.starts_with("d_model")));
                assert!(v.iter().any(|s| s.starts_with("n_heads")));
            }
            e => panic!("{e}"),
        }
        let mut broken = src.clone();
        broken.tensors.retain(|(n, _)| n != "blocks.0.ln1.g");
        let err = selective_transfer(&broken, &src.meta.config, VocabId::Music160, &TransferSpec::default(), 1).unwrap_err();
        assert!(matches!(err, Error::MissingTensor(n) if n == "blocks.0.ln1.g"));
    }

    #[test]
    fn diff_reports() {
        let a = music_ckpt(16);
        assert!(diff_checkpoints(&a, &a).iter().all(|(_, s)| *s == DiffStatus::Equal));

        let out = selective_transfer(&a, &a.meta.config, VocabId::Music160, &TransferSpec::default(), 99).unwrap();
        let b = Checkpoint::from_model(&out.model, out.meta);
        for (name, s) in diff_checkpoints(&a, &b) {
            let want = if name == "tok_emb" || name == "lm_head.w" {
                DiffStatus::Changed
            } else {
                // zero-initialized head bias is unchanged by reinit
                DiffStatus::Equal
            };
            assert_eq!(s, want, "{name}");
        }

        let mut x = a.clone();
        x.tensors.truncate(1);
        let mut y = a.clone();
        y.tensors = y.tensors.split_off(1);
        let d = diff_checkpoints(&x, &y);
        assert_eq!(d[0].1, DiffStatus::MissingInB);
        assert!(d[1..].iter().all(|(_, s)| *s == DiffStatus::MissingInA));
    }
}
