//! Per-message mirror of the grouped codec.
//!
//! Every message keeps its own log-posterior, updated by direct Bayes rule,
//! and its own cumulative label. Partitions come from the same TOP and repair
//! routines applied to the label summaries, then are materialized by taking
//! prefixes of explicit per-label message sequences.

use std::collections::BTreeMap;

use rand::Rng;

use crate::channels::{DiscreteBmsChannel, Input};
use crate::error::{Error, Result};
use crate::lattice_codec::partition::{self, GroupMasses, MinLookup, PartitionOutcome};
use crate::numerics::log_sum_exp;
use crate::trial::{CodecConfig, RoundTrace, TrialRecord};

/// Largest message set the mirror will allocate.
pub const MAX_REFERENCE_MESSAGES: u128 = 1 << 16;
/// Allowed drift of Σρ before renormalizing.
const NORMALIZATION_TOL: f64 = 1e-9;
/// Tolerance of the per-message SED check.
pub const REFERENCE_SED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePosteriorState {
    delta: f64,
    /// log ρ_m, index m − 1.
    log_posteriors: Vec<f64>,
    labels: Vec<i64>,
    /// Ordered message sequences per label.
    groups: BTreeMap<i64, Vec<u32>>,
    round: usize,
}

/// Per-message membership: `true` for S₊.
pub type Membership = Vec<bool>;

impl ReferencePosteriorState {
    pub fn new(message_count: u128, delta: f64) -> Result<Self> {
        if message_count > MAX_REFERENCE_MESSAGES {
            return Err(Error::ReferenceTooLarge(message_count));
        }
        if message_count < 2 {
            return Err(Error::Domain(format!("need at least 2 messages, got {message_count}")));
        }
        let m = message_count as usize;
        let mut groups = BTreeMap::new();
        groups.insert(0, (1..=m as u32).collect());
        Ok(Self {
            delta,
            log_posteriors: vec![-(m as f64).ln(); m],
            labels: vec![0; m],
            groups,
            round: 0,
        })
    }

    pub fn message_count(&self) -> usize {
        self.log_posteriors.len()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn posterior(&self, message: u32) -> f64 {
        self.log_posteriors[message as usize - 1].exp()
    }

    pub fn label(&self, message: u32) -> i64 {
        self.labels[message as usize - 1]
    }

    pub fn log_posteriors(&self) -> &[f64] {
        &self.log_posteriors
    }

    /// Group summaries in decreasing label order.
    pub fn masses(&self) -> GroupMasses {
        GroupMasses::new(self.groups.iter().rev().map(|(&k, v)| (k, v.len() as u128)), self.delta)
    }

    pub fn max_posterior(&self) -> f64 {
        self.log_posteriors.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    /// Largest |r_{k_m} − ρ_m| over messages.
    pub fn fidelity_error(&self) -> f64 {
        let masses = self.masses();
        let by_label: BTreeMap<i64, f64> = masses.labels.iter().copied().zip(masses.r.iter().copied()).collect();
        self.labels
            .iter()
            .zip(&self.log_posteriors)
            .map(|(k, lp)| (by_label[k] - lp.exp()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest spread of log-posteriors within one label.
    pub fn label_spread(&self) -> f64 {
        self.groups
            .values()
            .map(|members| {
                let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
                    let v = self.log_posteriors[m as usize - 1];
                    (lo.min(v), hi.max(v))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// First member, in group order, of the label holding the largest
    /// posterior. At the stopping time that label is a singleton.
    pub fn decode(&self) -> u32 {
        let best = self
            .log_posteriors
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        let label = self.labels[best];
        self.groups[&label][0]
    }
}

/// TOP + repair on the label summaries, materialized per message.
pub fn partition_reference(state: &ReferencePosteriorState, lookup: MinLookup) -> (Membership, PartitionOutcome) {
    let masses = state.masses();
    let outcome = partition::partition(&masses, lookup);
    let mut plus = vec![false; state.message_count()];
    for ((_, members), &n_minus) in state.groups.iter().rev().zip(&outcome.minus) {
        for &m in &members[n_minus as usize..] {
            plus[m as usize - 1] = true;
        }
    }
    (plus, outcome)
}

/// Checks −min_{S₊} ρ ≤ π₋ − π₊ ≤ min_{S₋} ρ on the direct posteriors.
pub fn sed_holds_per_message(state: &ReferencePosteriorState, plus: &[bool]) -> bool {
    let mut pi = [0.0f64; 2];
    let mut lo = [f64::INFINITY; 2];
    for (i, lp) in state.log_posteriors.iter().enumerate() {
        let rho = lp.exp();
        let side = plus[i] as usize;
        pi[side] += rho;
        lo[side] = lo[side].min(rho);
    }
    let delta = pi[0] - pi[1];
    -lo[1] - REFERENCE_SED_TOL <= delta && delta <= lo[0] + REFERENCE_SED_TOL
}

/// Bayes update with observed label `n_t`, then the label and group-sequence
/// update mirroring the grouped codec.
pub fn bayes_update(
    state: &mut ReferencePosteriorState,
    channel: &DiscreteBmsChannel,
    plus: &[bool],
    n_t: i64,
) -> Result<()> {
    let p_plus = channel.prob(Input::Plus, n_t).ln();
    let p_minus = channel.prob(Input::Minus, n_t).ln();
    for (lp, &is_plus) in state.log_posteriors.iter_mut().zip(plus) {
        *lp += if is_plus { p_plus } else { p_minus };
    }
    let norm = log_sum_exp(&state.log_posteriors);
    assert!(norm.is_finite(), "observation has zero probability under every message");
    state.log_posteriors.iter_mut().for_each(|lp| *lp -= norm);
    let total: f64 = state.log_posteriors.iter().map(|lp| lp.exp()).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        let fix = total.ln();
        state.log_posteriors.iter_mut().for_each(|lp| *lp -= fix);
    }

    let old = std::mem::take(&mut state.groups);
    let mut minus_parts = Vec::new();
    let mut plus_parts = Vec::new();
    for (k, members) in old {
        let split = members.iter().position(|&m| plus[m as usize - 1]).unwrap_or(members.len());
        if members[split..].iter().any(|&m| !plus[m as usize - 1]) {
            return Err(Error::Consistency(format!("label {k}: partition is not a prefix split")));
        }
        let (m, p) = members.split_at(split);
        minus_parts.push((k, m.to_vec()));
        plus_parts.push((k + n_t, p.to_vec()));
    }
    let mut next: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
    for (k, m) in minus_parts.into_iter().chain(plus_parts) {
        if !m.is_empty() {
            next.entry(k).or_default().extend(m);
        }
    }
    for (i, &is_plus) in plus.iter().enumerate() {
        if is_plus {
            state.labels[i] += n_t;
        }
    }
    state.groups = next;
    state.round += 1;
    Ok(())
}

/// Extra per-round diagnostics only the mirror can compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRound {
    pub fidelity_error: f64,
    pub label_spread: f64,
    pub per_message_sed_ok: bool,
}

/// Runs one trial of the per-message mirror.
pub fn run_trial<R: Rng + ?Sized>(
    channel: &DiscreteBmsChannel,
    config: &CodecConfig,
    message_count: u128,
    message: u128,
    lookup: MinLookup,
    rng: &mut R,
) -> Result<(TrialRecord, Vec<ReferenceRound>)> {
    let mut state = ReferencePosteriorState::new(message_count, channel.lattice_spacing())?;
    if !(1..=message_count).contains(&message) {
        return Err(Error::Domain(format!("message {message} outside [1, {message_count}]")));
    }
    let w = message as u32;
    let threshold = config.threshold();
    let mut trace = Vec::new();
    let mut extra = Vec::new();
    let mut censored = false;
    while state.max_posterior() < threshold {
        if state.round() >= config.max_rounds {
            censored = true;
            break;
        }
        let (plus, outcome) = partition_reference(&state, lookup);
        let per_message_sed_ok = sed_holds_per_message(&state, &plus);
        let x = if plus[w as usize - 1] { Input::Plus } else { Input::Minus };
        let n_t = channel.sample(x, rng);
        bayes_update(&mut state, channel, &plus, n_t)?;
        trace.push(RoundTrace {
            t: state.round(),
            n_t,
            groups: state.group_count(),
            fragments: 0,
            imbalance: outcome.delta,
            repair_iters: outcome.repair.iterations,
            partial_batches: outcome.repair.partial_batches,
            lookup_steps: outcome.repair.lookup_steps,
            max_posterior: state.max_posterior(),
            w_plus: x == Input::Plus,
            sed_ok: outcome.sed_ok,
        });
        extra.push(ReferenceRound {
            fidelity_error: state.fidelity_error(),
            label_spread: state.label_spread(),
            per_message_sed_ok,
        });
    }
    let decoded = state.decode() as u128;
    Ok((
        TrialRecord {
            message,
            tau: state.round(),
            decoded,
            error: decoded != message,
            censored,
            trace,
        },
        extra,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::bsc_channel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_label_leaves_posteriors_unchanged() {
        // A three-symbol lattice channel with mass on label 0.
        let d = 1.0f64;
        let p1 = 0.5;
        let pm1 = p1 * (-d).exp();
        let ch = DiscreteBmsChannel::new(d, 2, 2, vec![0.0, pm1, 1.0 - p1 - pm1, p1, 0.0]).unwrap();
        let mut s = ReferencePosteriorState::new(8, d).unwrap();
        let (plus, _) = partition_reference(&s, MinLookup::Linear);
        let before = s.log_posteriors().to_vec();
        bayes_update(&mut s, &ch, &plus, 0).unwrap();
        for (a, b) in before.iter().zip(s.log_posteriors()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_bsc_step_by_hand() {
        let ch = bsc_channel(0.11).unwrap();
        let mut s = ReferencePosteriorState::new(2, ch.lattice_spacing()).unwrap();
        let (plus, _) = partition_reference(&s, MinLookup::Linear);
        // Observe the sign sent for message 1.
        let y = if plus[0] { 1 } else { -1 };
        bayes_update(&mut s, &ch, &plus, y).unwrap();
        assert!((s.posterior(1) - 0.89).abs() < 1e-14);
    }

    #[test]
    fn confirmation_steps_add_delta_to_log_odds() {
        let ch = bsc_channel(0.11).unwrap();
        let d = ch.lattice_spacing();
        let mut s = ReferencePosteriorState::new(16, d).unwrap();
        // Drive message 5 to dominance by always agreeing with it.
        let odds = |s: &ReferencePosteriorState| {
            let lp = s.log_posteriors();
            let rest: Vec<f64> = lp.iter().enumerate().filter(|&(i, _)| i != 4).map(|(_, &v)| v).collect();
            lp[4] - log_sum_exp(&rest)
        };
        for _ in 0..40 {
            let (plus, _) = partition_reference(&s, MinLookup::Linear);
            let dominant = s.posterior(5) > 0.5;
            let before = odds(&s);
            let y = if plus[4] { 1 } else { -1 };
            bayes_update(&mut s, &ch, &plus, y).unwrap();
            if dominant {
                assert!((odds(&s) - before - d).abs() < 1e-9);
            }
        }
        assert!(s.posterior(5) > 0.999);
    }

    #[test]
    fn equal_labels_share_posteriors() {
        let ch = bsc_channel(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CodecConfig::new(1e-3, 500).unwrap();
        let (rec, extra) = run_trial(&ch, &cfg, 256, 17, MinLookup::Linear, &mut rng).unwrap();
        assert!(!rec.censored);
        for e in &extra {
            assert!(e.label_spread < 1e-10);
            assert!(e.fidelity_error < 1e-9);
            assert!(e.per_message_sed_ok);
        }
    }

    #[test]
    fn singleton_when_dominant() {
        let ch = bsc_channel(0.11).unwrap();
        let mut s = ReferencePosteriorState::new(4, ch.lattice_spacing()).unwrap();
        for _ in 0..6 {
            let (plus, _) = partition_reference(&s, MinLookup::Linear);
            let y = if plus[2] { 1 } else { -1 };
            bayes_update(&mut s, &ch, &plus, y).unwrap();
        }
        assert!(s.posterior(3) > 0.5);
        let (plus, _) = partition_reference(&s, MinLookup::Linear);
        let alone = plus.iter().enumerate().filter(|(_, &p)| p == plus[2]).count();
        assert_eq!(alone, 1);
    }

    #[test]
    fn oversized_message_sets_rejected() {
        assert!(matches!(
            ReferencePosteriorState::new(1 << 17, 1.0),
            Err(Error::ReferenceTooLarge(_))
        ));
    }
}
