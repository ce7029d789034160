use serde::{Deserialize, Serialize};

/// When a phase ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Exactly `epochs` epochs.
    FixedEpochs { epochs: usize },
    /// Stop once `patience` epochs pass without a strictly lower validation
    /// loss; the best epoch's weights are kept.
    EarlyStop { patience: usize, max_epochs: usize },
    /// Stop at the first epoch index `>= min_epoch` whose relative
    /// improvement over the previous epoch is below `threshold`.
    Plateau {
        threshold: f64,
        min_epoch: usize,
        max_epochs: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochBudget,
    Patience,
    Plateau,
}

/// `fixed:N`, `early:P[:MAX]` or `plateau[:MAX]`.
impl std::str::FromStr for StopRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        let bad = || crate::Error::Config(format!("bad stop rule {s:?}; expected fixed:N, early:P[:MAX] or plateau[:MAX]"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).map(|x| x.parse::<usize>().map_err(|_| bad())).transpose();
        let rule = match parts[0] {
            "fixed" => StopRule::FixedEpochs { epochs: num(1)?.ok_or_else(bad)? },
            "early" => StopRule::EarlyStop {
                patience: num(1)?.ok_or_else(bad)?,
                max_epochs: num(2)?.unwrap_or(200),
            },
            "plateau" => StopRule::plateau(num(1)?.unwrap_or(50)),
            _ => return Err(bad()),
        };
        if parts.len() > 3 || rule.max_epochs() == 0 {
            return Err(bad());
        }
        Ok(rule)
    }
}

impl StopRule {
    pub fn early_stop(patience: usize) -> Self {
        StopRule::EarlyStop {
            patience,
            max_epochs: 200,
        }
    }

    pub fn plateau(max_epochs: usize) -> Self {
        StopRule::Plateau {
            threshold: 0.025,
            min_epoch: 2,
            max_epochs,
        }
    }

    pub fn max_epochs(&self) -> usize {
        match *self {
            StopRule::FixedEpochs { epochs } => epochs,
            StopRule::EarlyStop { max_epochs, .. } | StopRule::Plateau { max_epochs, .. } => max_epochs,
        }
    }

    /// Whether the best-validation weights (rather than the last) are the
    /// phase's output.
    pub fn keeps_best(&self) -> bool {
        matches!(self, StopRule::EarlyStop { .. })
    }

    /// Decide after the epoch whose loss is `val_losses.last()`.
    pub fn check(&self, val_losses: &[f64]) -> Option<StopReason> {
        let e = val_losses.len().checked_sub(1)?;
        match *self {
            StopRule::EarlyStop { patience, .. } => {
                let best = best_epoch(val_losses)?;
                if e - best >= patience {
                    return Some(StopReason::Patience);
                }
            }
            StopRule::Plateau { threshold, min_epoch, .. } => {
                if e >= min_epoch.max(1) {
                    let (prev, cur) = (val_losses[e - 1], val_losses[e]);
                    if (prev - cur) / prev < threshold {
                        return Some(StopReason::Plateau);
                    }
                }
            }
            StopRule::FixedEpochs { .. } => {}
        }
        (e + 1 >= self.max_epochs()).then_some(StopReason::EpochBudget)
    }

    /// Replay a loss series; the epoch index at which training stops, if it
    /// does within the series.
    pub fn replay(&self, val_losses: &[f64]) -> Option<(usize, StopReason)> {
        (1..=val_losses.len()).find_map(|n| self.check(&val_losses[..n]).map(|r| (n - 1, r)))
    }
}

/// First epoch attaining the minimum: later ties do not count as improvement.
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
