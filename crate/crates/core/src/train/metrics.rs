use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One line of `metrics.jsonl`. `epoch` is 0-based: epoch 0 is the state
/// after the first full pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ppl: f64,
    pub optimizer_steps: u64,
    pub micro_batches: u64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, other: &MetricsLog) {
        self.records.extend(other.records.iter().cloned());
    }

    pub fn phase(&self, phase: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.phase == phase).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    /// Checks `val_ppl == exp(val_loss)` and contiguous epochs per phase.
    pub fn validate(&self) -> Result<()> {
        let mut last: Option<(&str, usize)> = None;
        for (i, r) in self.records.iter().enumerate() {
            let want = r.val_loss.exp();
            if ((r.val_ppl - want) / want).abs() > 1e-6 {
                return Err(Error::Format(format!("record {i}: val_ppl is not exp(val_loss)")));
            }
            let expected = match last {
                Some((p, e)) if p == r.phase => e + 1,
                _ => 0,
            };
            if r.epoch != expected {
                return Err(Error::Format(format!(
                    "record {i}: phase {} epoch {} (expected {expected})",
                    r.phase, r.epoch
                )));
            }
            last = Some((&r.phase, r.epoch));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: "metrics".into(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }

    /// Append records to an existing file.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(phase: &str, epoch: usize, loss: f64) -> EpochRecord {
        EpochRecord {
            phase: phase.into(),
            epoch,
            train_loss: loss + 0.1,
            val_loss: loss,
            val_ppl: loss.exp(),
            optimizer_steps: 10 * (epoch as u64 + 1),
            micro_batches: 20 * (epoch as u64 + 1),
            lr: 1e-3,
        }
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let mut log = MetricsLog::default();
        log.push(rec("poetry", 0, 6.0));
        log.push(rec("poetry", 1, 5.5));
        log.push(rec("prose", 0, 6.2));
        log.validate().unwrap();
        let text = log.to_jsonl().unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["epoch", "lr", "micro_batches", "optimizer_steps", "phase", "train_loss", "val_loss", "val_ppl"]
        );
        assert_eq!(MetricsLog::from_jsonl(&text).unwrap(), log);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        log.save(&p).unwrap();
        log.append_to(&p).unwrap();
        assert_eq!(MetricsLog::load(&p).unwrap().records.len(), 6);
    }

    #[test]
    fn validation_catches_gaps_and_bad_ppl() {
        let mut log = MetricsLog::default();
        log.push(rec("music", 0, 3.0));
        log.push(rec("music", 2, 2.0));
        assert!(log.validate().is_err());
        let mut log = MetricsLog::default();
        let mut r = rec("music", 0, 3.0);
        r.val_ppl *= 1.001;
        log.push(r);
        assert!(log.validate().is_err());
    }
}
