//! Types shared by both codecs: configuration, per-round traces and the
//! outcome of one trial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Target error probability ε; decoding stops once max ρ ≥ 1 − ε.
    pub epsilon: f64,
    /// Safety cap on the number of rounds.
    pub max_rounds: usize,
}

/// Rounds allowed per message bit when no cap is given.
pub const DEFAULT_ROUNDS_PER_BIT: usize = 64;

impl CodecConfig {
    pub fn new(epsilon: f64, max_rounds: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Domain(format!("epsilon must be in (0, 1/2), got {epsilon}")));
        }
        if max_rounds < 1 {
            return Err(Error::Domain("max_rounds must be at least 1".into()));
        }
        Ok(Self { epsilon, max_rounds })
    }

    /// Default cap of 64 rounds per bit.
    pub fn for_bits(epsilon: f64, bits: u32) -> Result<Self> {
        Self::new(epsilon, DEFAULT_ROUNDS_PER_BIT * bits.max(1) as usize)
    }

    pub fn threshold(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// What happened in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub t: usize,
    /// Observed lattice label.
    pub n_t: i64,
    /// Active groups after the update.
    pub groups: usize,
    /// Stored interval fragments after the update (0 for the per-message codec).
    pub fragments: usize,
    /// Δ = π₋ − π₊ after repair.
    pub imbalance: f64,
    pub repair_iters: usize,
    pub partial_batches: usize,
    pub lookup_steps: u64,
    /// Largest posterior after the update.
    pub max_posterior: f64,
    /// Whether the true message sat in S₊.
    pub w_plus: bool,
    /// SED check on the partition used this round.
    pub sed_ok: bool,
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub message: u128,
    pub tau: usize,
    pub decoded: u128,
    pub error: bool,
    /// Hit the round cap before the posterior crossed 1 − ε.
    pub censored: bool,
    pub trace: Vec<RoundTrace>,
}

/// Trace CSV columns.
pub const TRACE_HEADER: &str = "t,n_t,G_t,F_t,delta,repair_iters,max_r";

/// One CSV row per round.
pub fn trace_csv(trace: &[RoundTrace]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t, r.n_t, r.groups, r.fragments, r.imbalance, r.repair_iters, r.max_posterior
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(CodecConfig::new(0.0, 10).is_err());
        assert!(CodecConfig::new(0.5, 10).is_err());
        assert!(CodecConfig::new(0.1, 0).is_err());
        assert_eq!(CodecConfig::for_bits(1e-3, 20).unwrap().max_rounds, 1280);
    }

    #[test]
    fn csv_has_one_row_per_round() {
        let row = RoundTrace {
            t: 1,
            n_t: -1,
            groups: 2,
            fragments: 2,
            imbalance: 0.0,
            repair_iters: 0,
            partial_batches: 0,
            lookup_steps: 0,
            max_posterior: 0.5,
            w_plus: true,
            sed_ok: true,
        };
        let csv = trace_csv(&[row, RoundTrace { t: 2, ..row }]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(TRACE_HEADER));
        assert!(csv.contains("2,-1,2,2,0,0,0.5"));
    }
}
