//! Low-complexity encoder/decoder over lattice-LLR channels.
//!
//! Messages sharing a cumulative label `k` share the posterior
//! `r_k = e^{δk} / Σ_g N_g e^{δg}`, so the state is just the active labels,
//! their counts and an [`IntervalList`] per label. The common log-posterior
//! shift is never stored; r_k is recomputed from the labels each round.

mod interval;
pub mod partition;

use std::collections::BTreeMap;

use rand::Rng;

pub use interval::{IntervalList, Run};
pub use partition::{GroupMasses, MinLookup, PartitionOutcome};

use crate::channels::{DiscreteBmsChannel, Input};
use crate::error::{Error, Result};
use crate::trial::{CodecConfig, RoundTrace, TrialRecord};

/// One active label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub count: u128,
    pub members: IntervalList,
}

/// Everything the grouped encoder keeps between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedEncoderState {
    message_count: u128,
    delta: f64,
    groups: BTreeMap<i64, Group>,
    round: usize,
}

impl GroupedEncoderState {
    /// All `M` messages in label 0 as the single run `[1, M]`.
    pub fn new(message_count: u128, delta: f64) -> Result<Self> {
        if message_count < 2 {
            return Err(Error::Domain(format!("need at least 2 messages, got {message_count}")));
        }
        let mut groups = BTreeMap::new();
        groups.insert(
            0,
            Group {
                count: message_count,
                members: IntervalList::single(1, message_count),
            },
        );
        Ok(Self {
            message_count,
            delta,
            groups,
            round: 0,
        })
    }

    pub fn message_count(&self) -> u128 {
        self.message_count
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn fragment_count(&self) -> usize {
        self.groups.values().map(|g| g.members.fragment_count()).sum()
    }

    /// Groups by decreasing label.
    pub fn groups(&self) -> impl Iterator<Item = (i64, &Group)> {
        self.groups.iter().rev().map(|(&k, g)| (k, g))
    }

    pub fn masses(&self) -> GroupMasses {
        GroupMasses::new(self.groups().map(|(k, g)| (k, g.count)), self.delta)
    }

    /// Label currently holding `message`.
    pub fn label_of(&self, message: u128) -> Option<i64> {
        self.groups
            .iter()
            .find(|(_, g)| g.members.position(message).is_some())
            .map(|(&k, _)| k)
    }

    /// Transmitted sign for `message` under a partition computed from
    /// [`GroupedEncoderState::masses`]: `+` iff its position within its
    /// group's list is at or past the minus prefix.
    pub fn encode_symbol(&self, partition: &PartitionOutcome, message: u128) -> Result<Input> {
        for (i, (_, g)) in self.groups().enumerate() {
            if let Some(pos) = g.members.position(message) {
                return Ok(if pos >= partition.minus[i] { Input::Plus } else { Input::Minus });
            }
        }
        Err(Error::Consistency(format!("message {message} not in any group")))
    }

    /// Prefix split, label shift of the plus side by `n_t`, coalescing.
    pub fn materialize(&mut self, minus: &[u128], n_t: i64) -> Result<()> {
        if minus.len() != self.groups.len() {
            return Err(Error::Consistency(format!(
                "{} counts for {} groups",
                minus.len(),
                self.groups.len()
            )));
        }
        let old = std::mem::take(&mut self.groups);
        let mut parts = Vec::with_capacity(old.len());
        // `minus` is aligned with decreasing labels.
        for ((k, g), &n_minus) in old.into_iter().rev().zip(minus) {
            if n_minus > g.count {
                return Err(Error::Consistency(format!(
                    "label {k}: {n_minus} minus messages out of {}",
                    g.count
                )));
            }
            let (m, p) = g.members.split_prefix(n_minus)?;
            parts.push((k, m, p));
        }
        let mut next: BTreeMap<i64, IntervalList> = BTreeMap::new();
        for (k, m, _) in &parts {
            if !m.is_empty() {
                next.insert(*k, m.clone());
            }
        }
        for (k, _, p) in parts {
            if !p.is_empty() {
                next.entry(k + n_t).or_default().append(p);
            }
        }
        self.groups = next
            .into_iter()
            .map(|(k, members)| {
                let count = members.total_len();
                (k, Group { count, members })
            })
            .collect();
        self.round += 1;
        Ok(())
    }

    /// First index of the highest label's list.
    pub fn decode(&self) -> u128 {
        self.groups
            .values()
            .next_back()
            .and_then(|g| g.members.first())
            .expect("at least one active group")
    }

    /// Σ N_k = M and per-group counts match their lists.
    pub fn audit(&self) -> Result<()> {
        let mut total = 0u128;
        for (k, g) in &self.groups {
            if g.members.total_len() != g.count || g.count == 0 {
                return Err(Error::Consistency(format!("label {k}: count {} mismatch", g.count)));
            }
            if !g.members.is_coalesced() {
                return Err(Error::Consistency(format!("label {k}: adjacent runs not merged")));
            }
            total += g.count;
        }
        if total != self.message_count {
            return Err(Error::Consistency(format!("{total} messages tracked, expected {}", self.message_count)));
        }
        Ok(())
    }
}

/// Runs one trial of the grouped scheme for true message `message`.
pub fn run_trial<R: Rng + ?Sized>(
    channel: &DiscreteBmsChannel,
    config: &CodecConfig,
    message_count: u128,
    message: u128,
    lookup: MinLookup,
    rng: &mut R,
) -> Result<TrialRecord> {
    let mut state = GroupedEncoderState::new(message_count, channel.lattice_spacing())?;
    if !(1..=message_count).contains(&message) {
        return Err(Error::Domain(format!("message {message} outside [1, {message_count}]")));
    }
    let threshold = config.threshold();
    let mut masses = state.masses();
    let mut trace = Vec::new();
    let mut censored = false;
    while masses.max_r() < threshold {
        if state.round() >= config.max_rounds {
            censored = true;
            break;
        }
        let outcome = partition::partition(&masses, lookup);
        let x = state.encode_symbol(&outcome, message)?;
        let n_t = channel.sample(x, rng);
        state.materialize(&outcome.minus, n_t)?;
        masses = state.masses();
        trace.push(RoundTrace {
            t: state.round(),
            n_t,
            groups: state.group_count(),
            fragments: state.fragment_count(),
            imbalance: outcome.delta,
            repair_iters: outcome.repair.iterations,
            partial_batches: outcome.repair.partial_batches,
            lookup_steps: outcome.repair.lookup_steps,
            max_posterior: masses.max_r(),
            w_plus: x == Input::Plus,
            sed_ok: outcome.sed_ok,
        });
    }
    let decoded = state.decode();
    Ok(TrialRecord {
        message,
        tau: state.round(),
        decoded,
        error: decoded != message,
        censored,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::bsc_channel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_messages_one_per_side() {
        let state = GroupedEncoderState::new(2, 1.0).unwrap();
        let out = partition::partition(&state.masses(), MinLookup::Linear);
        let a = state.encode_symbol(&out, 1).unwrap();
        let b = state.encode_symbol(&out, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_observation_restores_original_runs() {
        let mut state = GroupedEncoderState::new(10, 1.0).unwrap();
        let out = partition::partition(&state.masses(), MinLookup::Linear);
        state.materialize(&out.minus, 0).unwrap();
        assert_eq!(state.group_count(), 1);
        let (_, g) = state.groups().next().unwrap();
        assert_eq!(g.members.runs(), &[Run { start: 1, len: 10 }]);
    }

    #[test]
    fn materialize_rejects_bad_counts() {
        let mut state = GroupedEncoderState::new(4, 1.0).unwrap();
        assert!(matches!(state.materialize(&[5], 1), Err(Error::Consistency(_))));
        assert!(matches!(state.materialize(&[1, 1], 1), Err(Error::Consistency(_))));
    }

    #[test]
    fn long_replay_keeps_bookkeeping_consistent() {
        let ch = bsc_channel(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = GroupedEncoderState::new(1 << 20, ch.lattice_spacing()).unwrap();
        for t in 1..=200usize {
            let out = partition::partition(&state.masses(), MinLookup::Linear);
            let x = if rng.random::<bool>() { Input::Plus } else { Input::Minus };
            let n_t = ch.sample(x, &mut rng);
            state.materialize(&out.minus, n_t).unwrap();
            state.audit().unwrap();
            assert!(state.group_count() <= 1 + t);
            assert!(state.fragment_count() <= 1 + 2 * t);
        }
    }

    #[test]
    fn nearly_noiseless_channel_needs_about_k_rounds() {
        let ch = bsc_channel(1e-9).unwrap();
        let cfg = CodecConfig::new(1e-3, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [4u32, 10, 16] {
            let m = 1u128 << k;
            let rec = run_trial(&ch, &cfg, m, m / 3, MinLookup::Linear, &mut rng).unwrap();
            assert!(!rec.error);
            // k halving rounds, plus one confirming observation.
            assert!(rec.tau >= k as usize && rec.tau <= k as usize + 2, "k={k} tau={}", rec.tau);
        }
    }

    #[test]
    fn loose_target_stops_after_one_informative_use() {
        // log(0.6/0.4) < δ for BSC(0.11), so one observation suffices at M = 2.
        let ch = bsc_channel(0.11).unwrap();
        let cfg = CodecConfig::new(0.4, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rec = run_trial(&ch, &cfg, 2, 1, MinLookup::Linear, &mut rng).unwrap();
            assert_eq!(rec.tau, 1);
        }
    }
}
