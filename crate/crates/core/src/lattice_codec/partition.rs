//! Group-level partitioning: TOP initialization and batched SED repair.
//!
//! Both codecs call these functions on identical group summaries, so their
//! partitions and imbalances agree bit for bit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Slack on the SED comparisons: one ulp of the unit total mass.
pub const SED_SLACK: f64 = f64::EPSILON;

/// Per-message posteriors of the active groups, sorted by decreasing label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMasses {
    pub labels: Vec<i64>,
    pub counts: Vec<u128>,
    /// r_k, the posterior of each message in group k.
    pub r: Vec<f64>,
}

impl GroupMasses {
    /// Builds r_k = e^{δk} / Σ_g N_g e^{δg} with the largest label shifted to 0.
    /// `groups` must be sorted by decreasing label.
    pub fn new(groups: impl IntoIterator<Item = (i64, u128)>, delta: f64) -> Self {
        let (labels, counts): (Vec<i64>, Vec<u128>) = groups.into_iter().unzip();
        debug_assert!(labels.windows(2).all(|w| w[0] > w[1]));
        let top = labels.first().copied().unwrap_or(0);
        let weights: Vec<f64> = labels.iter().map(|&k| (delta * (k - top) as f64).exp()).collect();
        let norm: f64 = weights.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
        let r = weights.iter().map(|w| w / norm).collect();
        Self { labels, counts, r }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_r(&self) -> f64 {
        self.r.first().copied().unwrap_or(0.0)
    }

    /// Σ_k N_k r_k, which should be 1.
    pub fn total_mass(&self) -> f64 {
        self.r.iter().zip(&self.counts).map(|(r, &n)| r * n as f64).sum()
    }
}

/// Δ = π₋ − π₊ = Σ_k (n_k⁻ − n_k⁺) r_k.
pub fn imbalance(masses: &GroupMasses, minus: &[u128]) -> f64 {
    masses
        .r
        .iter()
        .zip(masses.counts.iter().zip(minus))
        .map(|(r, (&n, &m))| (m as f64 - (n - m) as f64) * r)
        .sum()
}

/// π₋ = Σ_k n_k⁻ r_k.
pub fn minus_mass(masses: &GroupMasses, minus: &[u128]) -> f64 {
    masses.r.iter().zip(minus).map(|(r, &m)| m as f64 * r).sum()
}

/// (min r on S₋, min r on S₊); +∞ for an empty side.
pub fn side_minima(masses: &GroupMasses, minus: &[u128]) -> (f64, f64) {
    let mut lo_minus = f64::INFINITY;
    let mut lo_plus = f64::INFINITY;
    for (i, &r) in masses.r.iter().enumerate() {
        if minus[i] > 0 {
            lo_minus = lo_minus.min(r);
        }
        if masses.counts[i] > minus[i] {
            lo_plus = lo_plus.min(r);
        }
    }
    (lo_minus, lo_plus)
}

/// Two-sided SED test −min_{S₊} ρ ≤ Δ ≤ min_{S₋} ρ, with [`SED_SLACK`].
pub fn sed_holds(delta: f64, min_minus: f64, min_plus: f64) -> bool {
    -min_plus - SED_SLACK <= delta && delta <= min_minus + SED_SLACK
}

pub fn sed_satisfied(masses: &GroupMasses, minus: &[u128]) -> bool {
    let (lo_minus, lo_plus) = side_minima(masses, minus);
    sed_holds(imbalance(masses, minus), lo_minus, lo_plus)
}

/// TOP initialization: counts n_k⁻ per group (same order as `masses`).
pub fn top_init(masses: &GroupMasses) -> Vec<u128> {
    let g = masses.len();
    let mut minus = vec![0u128; g];
    if g == 0 {
        return minus;
    }
    if masses.r[0] >= 0.5 {
        minus[0] = 1;
        return minus;
    }
    let mut cum = 0.0;
    let mut star = g - 1;
    for j in 0..g {
        let q = masses.counts[j] as f64 * masses.r[j];
        if cum + q < 0.5 && j + 1 < g {
            minus[j] = masses.counts[j];
            cum += q;
        } else {
            star = j;
            break;
        }
    }
    let r_star = masses.r[star];
    let n_star = masses.counts[star];
    let a_star = ((0.5 - cum) / r_star).ceil().max(1.0);
    let a_star = if a_star >= n_star as f64 { n_star } else { a_star as u128 };
    let overshoot = cum + a_star as f64 * r_star - 0.5;
    minus[star] = if overshoot <= r_star / 2.0 { a_star } else { a_star - 1 };
    minus
}

/// How the repair loop finds the minimum-posterior group on a side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinLookup {
    /// Scan every active group.
    #[default]
    Linear,
    /// Keep each side's occupied groups in an ordered set.
    Ordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairStats {
    pub iterations: usize,
    /// Elementary lookup steps spent locating minimum groups.
    pub lookup_steps: u64,
    /// Batches that left part of a group behind.
    pub partial_batches: usize,
    /// False only if the iteration cap stopped the loop.
    pub converged: bool,
}

/// Safety stop for the repair loop. |Δ| falls strictly with every batch, so
/// the loop terminates, but it can take more than one pass per group once a
/// batch from one side pushes the other side's bound out of reach.
pub fn iteration_cap(groups: usize) -> usize {
    64 * (groups + 1)
}

enum Sides {
    Linear,
    Ordered {
        minus: BTreeSet<usize>,
        plus: BTreeSet<usize>,
    },
}

fn log2_steps(n: usize) -> u64 {
    (usize::BITS - n.leading_zeros()) as u64
}

impl Sides {
    fn new(kind: MinLookup, masses: &GroupMasses, minus: &[u128]) -> Self {
        match kind {
            MinLookup::Linear => Sides::Linear,
            MinLookup::Ordered => Sides::Ordered {
                minus: (0..masses.len()).filter(|&i| minus[i] > 0).collect(),
                plus: (0..masses.len()).filter(|&i| masses.counts[i] > minus[i]).collect(),
            },
        }
    }

    /// Index of the minimum-posterior group on each side. Posteriors fall
    /// with the index, so the minimum sits at the largest occupied index.
    fn minima(&self, masses: &GroupMasses, minus: &[u128], steps: &mut u64) -> (Option<usize>, Option<usize>) {
        match self {
            Sides::Linear => {
                let mut lo_minus: Option<usize> = None;
                let mut lo_plus: Option<usize> = None;
                for i in 0..masses.len() {
                    *steps += 1;
                    if minus[i] > 0 && lo_minus.is_none_or(|j| masses.r[i] <= masses.r[j]) {
                        lo_minus = Some(i);
                    }
                    if masses.counts[i] > minus[i] && lo_plus.is_none_or(|j| masses.r[i] <= masses.r[j]) {
                        lo_plus = Some(i);
                    }
                }
                (lo_minus, lo_plus)
            }
            Sides::Ordered { minus: m, plus: p } => {
                *steps += log2_steps(m.len()) + log2_steps(p.len());
                (m.last().copied(), p.last().copied())
            }
        }
    }

    fn update(&mut self, i: usize, masses: &GroupMasses, minus: &[u128], steps: &mut u64) {
        if let Sides::Ordered { minus: m, plus: p } = self {
            *steps += log2_steps(m.len()) + log2_steps(p.len());
            if minus[i] > 0 {
                m.insert(i);
            } else {
                m.remove(&i);
            }
            if masses.counts[i] > minus[i] {
                p.insert(i);
            } else {
                p.remove(&i);
            }
        }
    }
}

/// Batched SED repair. Moves messages from the minimum-posterior group on the
/// violating side until the two-sided condition holds. Δ is recomputed from
/// the counts every iteration.
pub fn sed_repair(masses: &GroupMasses, minus: &mut [u128], lookup: MinLookup) -> RepairStats {
    let mut stats = RepairStats {
        iterations: 0,
        lookup_steps: 0,
        partial_batches: 0,
        converged: true,
    };
    let mut sides = Sides::new(lookup, masses, minus);
    let cap = iteration_cap(masses.len());
    loop {
        let (lo_minus, lo_plus) = sides.minima(masses, minus, &mut stats.lookup_steps);
        let rho_minus = lo_minus.map_or(f64::INFINITY, |i| masses.r[i]);
        let rho_plus = lo_plus.map_or(f64::INFINITY, |i| masses.r[i]);
        let delta = imbalance(masses, minus);
        if sed_holds(delta, rho_minus, rho_plus) {
            return stats;
        }
        if stats.iterations >= cap {
            stats.converged = false;
            return stats;
        }
        stats.iterations += 1;
        if delta < -rho_plus {
            let k = lo_plus.expect("violated lower bound implies a plus side");
            let r = masses.r[k];
            let n = masses.counts[k] - minus[k];
            let a = batch_size((-r - delta) / (2.0 * r), n);
            if a < n {
                stats.partial_batches += 1;
            }
            minus[k] += a;
            sides.update(k, masses, minus, &mut stats.lookup_steps);
        } else {
            let k = lo_minus.expect("violated upper bound implies a minus side");
            let r = masses.r[k];
            let n = minus[k];
            let a = batch_size((delta - r) / (2.0 * r), n);
            if a < n {
                stats.partial_batches += 1;
            }
            minus[k] -= a;
            sides.update(k, masses, minus, &mut stats.lookup_steps);
        }
    }
}

/// min{n, ⌈x⌉}, and at least one message so every iteration makes progress.
fn batch_size(x: f64, n: u128) -> u128 {
    let a = x.ceil().max(1.0);
    if a >= n as f64 {
        n
    } else {
        (a as u128).min(n)
    }
}

/// Result of partitioning one round.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    /// n_k⁻ per group, aligned with the [`GroupMasses`] it was computed from.
    pub minus: Vec<u128>,
    pub pi_minus: f64,
    /// Δ = π₋ − π₊ after repair.
    pub delta: f64,
    /// Δ straight after TOP.
    pub top_delta: f64,
    pub repair: RepairStats,
    pub sed_ok: bool,
}

/// TOP followed by SED repair.
pub fn partition(masses: &GroupMasses, lookup: MinLookup) -> PartitionOutcome {
    let mut minus = top_init(masses);
    let top_delta = imbalance(masses, &minus);
    let repair = sed_repair(masses, &mut minus, lookup);
    let delta = imbalance(masses, &minus);
    let sed_ok = sed_satisfied(masses, &minus);
    PartitionOutcome {
        pi_minus: minus_mass(masses, &minus),
        minus,
        delta,
        top_delta,
        repair,
        sed_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masses(groups: &[(i64, u128)], delta: f64) -> GroupMasses {
        GroupMasses::new(groups.iter().copied(), delta)
    }

    #[test]
    fn single_group_splits_in_half() {
        for m in [2u128, 3, 7, 8, 1000, 1001] {
            let g = masses(&[(0, m)], 1.0);
            let minus = top_init(&g);
            let half = m.div_ceil(2);
            assert!(minus[0] == half || minus[0] + 1 == half, "M={m}: {minus:?}");
            let out = partition(&g, MinLookup::Linear);
            assert!(out.sed_ok);
        }
        let out = partition(&masses(&[(0, 2)], 1.0), MinLookup::Linear);
        assert_eq!(out.minus, vec![1]);
        assert_eq!(out.delta, 0.0);
    }

    #[test]
    fn dominant_message_goes_alone() {
        // r_top = e^2 / (e^2 + 3) ≈ 0.711
        let g = masses(&[(2, 1), (0, 3)], 1.0);
        assert!(g.max_r() >= 0.5 && (g.max_r() - 0.7).abs() < 0.02);
        assert_eq!(top_init(&g), vec![1, 0]);
    }

    #[test]
    fn heavy_first_group_is_the_crossing_group() {
        // q₁ = 0.6 over 6 messages (r = 0.1), q₂ = 0.4 over 8 (r = 0.05).
        let r1 = 0.1f64;
        let r2 = 0.05f64;
        let delta = (r1 / r2).ln();
        let g = masses(&[(1, 6), (0, 8)], delta);
        assert!((g.counts[0] as f64 * g.r[0] - 0.6).abs() < 1e-12);
        let minus = top_init(&g);
        // a* = ⌈0.5/0.1⌉ = 5, overshoot ≈ 0 ≤ r/2.
        assert_eq!(minus, vec![5, 0]);
    }

    #[test]
    fn back_off_case_takes_one_fewer() {
        // Single group of 3: a* = 2, d = 2/3 − 1/2 = 1/6 ≤ 1/6 → a*.
        assert_eq!(top_init(&masses(&[(0, 3)], 1.0)), vec![2]);
        // Crossing with overshoot above r/2 backs off.
        let g = masses(&[(1, 1), (0, 10)], 0.5);
        let minus = top_init(&g);
        let cum = g.r[0];
        let a_star = ((0.5 - cum) / g.r[1]).ceil();
        let d = cum + a_star * g.r[1] - 0.5;
        let expected = if d <= g.r[1] / 2.0 { a_star } else { a_star - 1.0 };
        assert_eq!(minus, vec![1, expected as u128]);
    }

    #[test]
    fn repair_batch_arithmetic() {
        // Minimum plus group with r and n = 10, Δ = −3.5r: a = ⌈2.5/2⌉ = 2.
        assert_eq!(batch_size((-1.0 + 3.5) / 2.0, 10), 2);
        let r = 1.0;
        assert_eq!(-3.5 * r + 2.0 * 2.0 * r, 0.5 * r);
        assert_eq!(batch_size(7.2, 3), 3);
        assert_eq!(batch_size(-0.5, 3), 1);
    }

    #[test]
    fn already_valid_partition_is_left_alone() {
        let g = masses(&[(0, 4)], 1.0);
        let mut minus = vec![2];
        let stats = sed_repair(&g, &mut minus, MinLookup::Linear);
        assert_eq!(stats.iterations, 0);
        assert_eq!(minus, vec![2]);
    }

    #[test]
    fn lookups_agree() {
        let g = masses(&[(9, 1), (5, 3), (4, 40), (0, 200), (-3, 1000)], 0.7);
        let mut a = top_init(&g);
        let mut b = a.clone();
        // Push everything to one side to force a long cascade.
        a.iter_mut().zip(&g.counts).for_each(|(m, &n)| *m = n);
        b.iter_mut().zip(&g.counts).for_each(|(m, &n)| *m = n);
        let sa = sed_repair(&g, &mut a, MinLookup::Linear);
        let sb = sed_repair(&g, &mut b, MinLookup::Ordered);
        assert_eq!(a, b);
        assert_eq!(sa.iterations, sb.iterations);
        assert!(sed_satisfied(&g, &a));
        assert!(sa.converged);
    }

    #[test]
    fn repair_may_need_more_passes_than_groups() {
        // Captured from a BSC(0.11) run at M = 64. Saturating moves park the
        // two smallest groups on the minus side, so the partial batch on
        // group 3 overshoots their posterior and the loop swings back.
        let delta = (0.89f64 / 0.11).ln();
        let g = masses(&[(9, 2), (8, 5), (7, 12), (6, 19), (5, 12), (4, 6), (3, 7), (2, 1)], delta);
        let out = partition(&g, MinLookup::Linear);
        assert!(out.sed_ok);
        assert!(out.repair.converged);
        assert!(out.repair.iterations > g.len(), "{:?}", out.repair);
        assert!(out.repair.partial_batches > 1);
    }

    #[test]
    fn some_states_force_three_split_groups() {
        // Well separated groups: every SED partition splits all of them.
        let g = masses(&[(-2, 4), (-7, 4), (-8, 4)], 1.509);
        let mut fewest = usize::MAX;
        for a in 0..=4u128 {
            for b in 0..=4u128 {
                for c in 0..=4u128 {
                    let m = [a, b, c];
                    if sed_satisfied(&g, &m) {
                        let splits = m.iter().filter(|&&x| x > 0 && x < 4).count();
                        fewest = fewest.min(splits);
                    }
                }
            }
        }
        assert_eq!(fewest, 3);
        let out = partition(&g, MinLookup::Linear);
        assert!(out.sed_ok);
    }
}
