//! Evaluation cadence, early-stopping policy and best-checkpoint tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    /// One evaluation at the end of each epoch.
    PerEpoch,
    /// Ten evaluations per epoch.
    #[default]
    TenPerEpoch,
}

impl Cadence {
    pub fn parse(s: &str) -> Result<Cadence> {
        match s.trim() {
            "per_epoch" | "per-epoch" => Ok(Cadence::PerEpoch),
            "ten_per_epoch" | "ten-per-epoch" => Ok(Cadence::TenPerEpoch),
            other => Err(Error::config("eval_cadence", format!("unknown cadence `{other}`"))),
        }
    }

    /// Steps between evaluations for an epoch of `steps_per_epoch` steps.
    pub fn interval(self, steps_per_epoch: usize) -> usize {
        match self {
            Cadence::PerEpoch => steps_per_epoch.max(1),
            Cadence::TenPerEpoch => steps_per_epoch.div_ceil(10).max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Pure stopping rule over the validation-loss history.
///
/// `PerEpoch` stops once the latest loss exceeds the previous one.
/// `TenPerEpoch` stops once `patience` evaluations have passed since the
/// first occurrence of the minimum. The caller keeps training through the
/// first epoch regardless.
pub fn early_stop_check(history: &[f64], cadence: Cadence, patience: usize) -> StopDecision {
    let stop = match cadence {
        Cadence::PerEpoch => history.len() >= 2 && history[history.len() - 1] > history[history.len() - 2],
        Cadence::TenPerEpoch => {
            let Some(best) = history
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
                    Some((_, b)) if v >= b => acc,
                    _ => Some((i, v)),
                })
            else {
                return StopDecision::Continue;
            };
            history.len() - 1 - best.0 >= patience
        }
    };
    if stop {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[derive(Debug)]
pub struct SaveOutcome {
    pub best: f64,
    pub written: bool,
    /// Storage failure while writing; the caller logs it and carries on.
    pub error: Option<Error>,
}

/// Calls `write` iff `current < best` and returns the updated best.
pub fn save_best<F>(current: f64, best: f64, write: F) -> SaveOutcome
where
    F: FnOnce() -> Result<()>,
{
    if current < best {
        SaveOutcome {
            best: current,
            written: true,
            error: write().err(),
        }
    } else {
        SaveOutcome {
            best,
            written: false,
            error: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_epoch_rule() {
        assert_eq!(early_stop_check(&[3.0, 2.0, 1.0], Cadence::PerEpoch, 5), StopDecision::Continue);
        assert_eq!(early_stop_check(&[3.0, 2.0], Cadence::PerEpoch, 5), StopDecision::Continue);
        assert_eq!(early_stop_check(&[3.0, 2.0, 2.5], Cadence::PerEpoch, 5), StopDecision::Stop);
        assert_eq!(early_stop_check(&[3.0], Cadence::PerEpoch, 5), StopDecision::Continue);
        assert_eq!(early_stop_check(&[2.0, 2.0], Cadence::PerEpoch, 5), StopDecision::Continue);
    }

    #[test]
    fn ten_per_epoch_patience() {
        // minimum at the 4th evaluation, five non-improving ones follow
        let h = [5.0, 4.0, 3.5, 3.0, 3.2, 3.1, 3.0, 3.4, 3.3];
        for k in 1..h.len() {
            assert_eq!(early_stop_check(&h[..k], Cadence::TenPerEpoch, 5), StopDecision::Continue, "k={k}");
        }
        assert_eq!(early_stop_check(&h, Cadence::TenPerEpoch, 5), StopDecision::Stop);
        let improving = [5.0, 4.0, 3.5, 3.0, 3.2, 3.1, 3.0, 3.4, 2.9];
        assert_eq!(early_stop_check(&improving, Cadence::TenPerEpoch, 5), StopDecision::Continue);
    }

    #[test]
    fn cadence_intervals() {
        assert_eq!(Cadence::PerEpoch.interval(38), 38);
        assert_eq!(Cadence::TenPerEpoch.interval(38), 4);
        assert_eq!(Cadence::TenPerEpoch.interval(3), 1);
        assert_eq!(Cadence::parse("per-epoch").unwrap(), Cadence::PerEpoch);
        assert!(Cadence::parse("hourly").is_err());
    }

    #[test]
    fn save_best_strict_improvement() {
        let mut writes = 0;
        let o = save_best(0.9, 1.0, || {
            writes += 1;
            Ok(())
        });
        assert!(o.written && o.best == 0.9);
        let o = save_best(1.0, 1.0, || {
            writes += 1;
            Ok(())
        });
        assert!(!o.written && o.best == 1.0);
        assert_eq!(writes, 1);
    }

    #[test]
    fn monotone_run_writes_every_time() {
        let mut best = f64::INFINITY;
        let mut writes = 0;
        for i in 0..7 {
            best = save_best(10.0 - i as f64, best, || {
                writes += 1;
                Ok(())
            })
            .best;
        }
        assert_eq!(writes, 7);
    }

    #[test]
    fn storage_failure_is_surfaced() {
        let o = save_best(0.5, 1.0, || Err(Error::Checkpoint("disk full".into())));
        assert!(o.written);
        assert_eq!(o.best, 0.5);
        assert!(o.error.unwrap().to_string().contains("disk full"));
    }
}
