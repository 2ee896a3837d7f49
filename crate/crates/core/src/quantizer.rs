//! Exact-lattice output quantizer for the BI-AWGN channel.
//!
//! Thresholds live in output (y) space. A threshold `y` sits at LLR
//! `2y/σ²`. Cells are `[−b₁/₂, b₁/₂)`, `[b_{k−1/2}, b_{k+1/2})` and the tail
//! `[b_{L−1/2}, ∞)`, mirrored for negative labels, and each cell's induced
//! LLR is forced to be exactly `kδ` (or `L_tail·δ` for the tail).

use serde::{Deserialize, Serialize};

use crate::channels::{capacity_kernel, AwgnChannel, DiscreteBmsChannel};
use crate::error::{Error, Result};
use crate::numerics::{bisect, golden_max, log_std_normal_interval};

/// Target residual for each threshold root.
pub const ROOT_TOL: f64 = 1e-11;
/// Residual every returned design is checked against.
pub const LATTICE_TOL: f64 = 1e-9;
/// Number of geometric bracket expansions before giving up.
const MAX_EXPANSIONS: usize = 200;
/// Points in the coarse δ scan that seeds the golden-section search.
const COARSE_POINTS: usize = 48;

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("noise power must be positive and finite, got {sigma2}")))
    }
}

fn check_levels(levels: u32) -> Result<u32> {
    if levels >= 3 && levels % 2 == 1 {
        Ok((levels - 1) / 2)
    } else {
        Err(Error::Domain(format!("level count must be odd and at least 3, got {levels}")))
    }
}

/// ln P_x([u, v)) for input x = ±1.
fn log_mass(sigma: f64, sign: f64, u: f64, v: f64) -> f64 {
    log_std_normal_interval((u - sign) / sigma, (v - sign) / sigma)
}

/// ℓ(u, v) = log P⁺([u,v)) / P⁻([u,v)); `v` may be `+∞`.
pub fn bin_llr(sigma2: f64, u: f64, v: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    if !(u < v) {
        return Err(Error::Domain(format!("degenerate interval [{u}, {v})")));
    }
    let sigma = sigma2.sqrt();
    Ok(log_mass(sigma, 1.0, u, v) - log_mass(sigma, -1.0, u, v))
}

/// ℓ_tail(u) = ℓ(u, ∞), with `u` in output units.
pub fn tail_llr(sigma2: f64, u: f64) -> Result<f64> {
    bin_llr(sigma2, u, f64::INFINITY)
}

/// The tail cell's LLR when its lower edge sits at LLR `t`.
pub fn tail_llr_at(sigma2: f64, t: f64) -> Result<f64> {
    tail_llr(sigma2, t * sigma2 / 2.0)
}

/// T_B* = 2/σ² + (4/σ)√(log B), in LLR units.
pub fn tail_threshold_target(sigma2: f64, levels: u32) -> f64 {
    2.0 / sigma2 + 4.0 / sigma2.sqrt() * (levels as f64).ln().sqrt()
}

/// Finds `u < hi` with `f(u) = 0`, given `f(hi⁻) > 0` and `f` increasing,
/// by expanding the step below `hi` geometrically and then bisecting.
fn root_below(f: impl Fn(f64) -> f64, hi: f64, first_step: f64, index: usize, target: f64) -> Result<f64> {
    let mut upper = hi;
    let mut step = first_step;
    for _ in 0..MAX_EXPANSIONS {
        let lo = hi - step;
        let f_lo = f(lo);
        if f_lo.abs() < ROOT_TOL {
            return Ok(lo);
        }
        if f_lo < 0.0 {
            let (x, fx) = bisect(&f, lo, upper, ROOT_TOL);
            if fx.abs() < LATTICE_TOL && x < hi {
                return Ok(x);
            }
            return Err(Error::NoBracket { index, target });
        }
        upper = lo;
        step *= 2.0;
    }
    Err(Error::NoBracket { index, target })
}

/// Solves the exact-lattice system at fixed (δ, L_tail). Returns the `L`
/// positive thresholds `b_{1/2} < … < b_{L−1/2}`.
pub fn solve_thresholds(sigma2: f64, delta: f64, tail_label: u32, levels: u32) -> Result<Vec<f64>> {
    check_sigma2(sigma2)?;
    let l = check_levels(levels)? as usize;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("lattice spacing must be positive, got {delta}")));
    }
    if (tail_label as usize) < l {
        return Err(Error::Domain(format!("tail label {tail_label} below L = {l}")));
    }
    let sigma = sigma2.sqrt();
    let width = delta * sigma2 / 2.0;
    let mut b = vec![0.0; l];

    // Tail cell: ℓ_tail is increasing and ℓ_tail(u) ≥ 2u/σ², so the root lies
    // at or below the point whose own LLR equals the target.
    let tail_target = tail_label as f64 * delta;
    let tail_f = |u: f64| log_mass(sigma, 1.0, u, f64::INFINITY) - log_mass(sigma, -1.0, u, f64::INFINITY) - tail_target;
    let start = tail_target * sigma2 / 2.0;
    b[l - 1] = if tail_f(start) < 0.0 {
        // Only possible through rounding; step upward once.
        root_below(tail_f, start + width.max(1.0), width.max(1.0), l - 1, tail_target)?
    } else {
        root_below(tail_f, start, width, l - 1, tail_target)?
    };

    for k in (1..l).rev() {
        let v = b[k];
        let target = k as f64 * delta;
        // ℓ(u, v) → 2v/σ² as u → v, so a root needs the point LLR above target.
        if target >= 2.0 * v / sigma2 {
            return Err(Error::NoBracket { index: k - 1, target });
        }
        let f = |u: f64| log_mass(sigma, 1.0, u, v) - log_mass(sigma, -1.0, u, v) - target;
        b[k - 1] = root_below(f, v, width, k - 1, target)?;
    }

    if b[0] <= 0.0 {
        return Err(Error::NonMonotone { index: 0 });
    }
    if let Some(i) = b.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotone { index: i + 1 });
    }
    Ok(b)
}

/// Per-cell LLR residuals `ℓ(cell) − kδ` for k = 1..L−1 followed by the tail.
pub fn lattice_residuals(sigma2: f64, delta: f64, tail_label: u32, thresholds: &[f64]) -> Result<Vec<f64>> {
    let l = thresholds.len();
    let mut out = Vec::with_capacity(l);
    for k in 1..l {
        out.push(bin_llr(sigma2, thresholds[k - 1], thresholds[k])? - k as f64 * delta);
    }
    out.push(tail_llr(sigma2, thresholds[l - 1])? - tail_label as f64 * delta);
    Ok(out)
}

/// μ₊ of every label, ascending label order, from positive thresholds. The
/// nonnegative cells are integrated; each negative cell is set to
/// μ₊(k)e^{−kδ}, so label LLRs are exactly kδ. The integrated value differs by
/// at most the root residual.
fn induced_probs(sigma2: f64, delta: f64, tail_label: u32, thresholds: &[f64]) -> Vec<f64> {
    let sigma = sigma2.sqrt();
    let l = thresholds.len();
    let mass = |u: f64, v: f64| log_mass(sigma, 1.0, u, v).exp();
    // Positive-side cells [edges[i], edges[i+1]).
    let mut edges: Vec<f64> = thresholds.to_vec();
    edges.push(f64::INFINITY);
    let pos: Vec<f64> = (0..l).map(|i| mass(edges[i], edges[i + 1])).collect();
    let label = |i: usize| if i + 1 == l { tail_label as f64 } else { (i + 1) as f64 };
    let neg: Vec<f64> = (0..l).map(|i| pos[i] * (-label(i) * delta).exp()).collect();
    let zero = mass(-thresholds[0], thresholds[0]);
    let mut probs: Vec<f64> = neg.iter().rev().copied().collect();
    probs.push(zero);
    probs.extend(pos);
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Induced channel of a threshold set.
pub fn induced_channel(sigma2: f64, delta: f64, tail_label: u32, thresholds: &[f64]) -> Result<DiscreteBmsChannel> {
    let l = thresholds.len() as u32;
    DiscreteBmsChannel::new(delta, l, tail_label, induced_probs(sigma2, delta, tail_label, thresholds))
}

/// C_{B,δ} = Σ μ₊(I_k) g(kδ).
fn induced_capacity(sigma2: f64, delta: f64, tail_label: u32, thresholds: &[f64]) -> f64 {
    let l = thresholds.len() as u32;
    let labels = crate::channels::lattice_labels(l, tail_label);
    induced_probs(sigma2, delta, tail_label, thresholds)
        .iter()
        .zip(&labels)
        .map(|(p, &k)| p * capacity_kernel(k as f64 * delta))
        .sum()
}

/// Capacity at a fixed (δ, L_tail), or `None` when the system has no solution.
pub fn capacity_at(sigma2: f64, delta: f64, tail_label: u32, levels: u32) -> Option<(f64, Vec<f64>)> {
    let b = solve_thresholds(sigma2, delta, tail_label, levels).ok()?;
    Some((induced_capacity(sigma2, delta, tail_label, &b), b))
}

/// Search settings for [`design_quantizer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// L_tail is scanned over `[max(L, L*−r), L*+r]`.
    pub search_radius: u32,
    /// δ window as multiples of `T_B*/(L − ½)`.
    pub delta_window: (f64, f64),
    /// Relative tolerance of the golden-section search on δ.
    pub delta_rel_tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            search_radius: 3,
            delta_window: (0.1, 3.0),
            delta_rel_tol: 1e-6,
        }
    }
}

/// An optimized quantizer and its induced lattice channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerDesign {
    pub sigma2: f64,
    pub levels: u32,
    pub interior_half_range: u32,
    pub tail_label: u32,
    pub delta: f64,
    pub y_thresholds: Vec<f64>,
    pub induced_capacity: f64,
    /// `(L − ½)δ`.
    pub t_b: f64,
    pub t_b_star: f64,
    /// Whether `t_b` landed in `[T_B*, T_B* + 1]`.
    pub t_b_in_window: bool,
    pub max_residual: f64,
    /// L_tail candidates whose coarse δ scan showed more than one local maximum.
    pub multimodal_tails: Vec<u32>,
    pub channel: DiscreteBmsChannel,
}

impl QuantizerDesign {
    /// Cell lower edges in LLR units, `a_k = 2 b_{k−1/2}/σ²`.
    pub fn llr_thresholds(&self) -> Vec<f64> {
        self.y_thresholds.iter().map(|b| 2.0 * b / self.sigma2).collect()
    }

    /// Maps an output sample to its lattice label.
    pub fn quantize(&self, y: f64) -> i64 {
        let l = self.y_thresholds.len();
        let mag = y.abs();
        // Number of thresholds at or below |y|.
        let j = self.y_thresholds.partition_point(|&b| b <= mag);
        let label = if j == l { self.tail_label as i64 } else { j as i64 };
        if y < 0.0 {
            -label
        } else {
            label
        }
    }
}

struct Candidate {
    capacity: f64,
    delta: f64,
    tail_label: u32,
    thresholds: Vec<f64>,
}

fn optimize_delta(
    sigma2: f64,
    levels: u32,
    tail_label: u32,
    window: (f64, f64),
    rel_tol: f64,
) -> (Option<Candidate>, bool) {
    let objective = |d: f64| capacity_at(sigma2, d, tail_label, levels).map_or(f64::NEG_INFINITY, |c| c.0);
    let (lo, hi) = window;
    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..COARSE_POINTS).map(|i| lo + i as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&d| objective(d)).collect();
    let local_maxima = (0..values.len())
        .filter(|&i| {
            values[i].is_finite()
                && (i == 0 || values[i] > values[i - 1])
                && (i + 1 == values.len() || values[i] >= values[i + 1])
        })
        .count();
    let Some((best_i, _)) = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |acc: Option<(usize, f64)>, (i, &v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((i, v)),
        })
    else {
        return (None, false);
    };
    let a = grid[best_i.saturating_sub(1)];
    let b = grid[(best_i + 1).min(grid.len() - 1)];
    let (delta, _) = golden_max(objective, a, b, rel_tol * grid[best_i]);
    let pick = [delta, grid[best_i]]
        .into_iter()
        .filter_map(|d| capacity_at(sigma2, d, tail_label, levels).map(|(c, t)| (d, c, t)))
        .fold(None, |acc: Option<(f64, f64, Vec<f64>)>, cur| match acc {
            Some(ref best) if best.1 >= cur.1 => acc,
            _ => Some(cur),
        });
    let candidate = pick.map(|(delta, capacity, thresholds)| Candidate {
        capacity,
        delta,
        tail_label,
        thresholds,
    });
    (candidate, local_maxima > 1)
}

/// Designs the capacity-maximizing exact-lattice quantizer with `levels` cells.
pub fn design_quantizer(sigma2: f64, levels: u32, options: DesignOptions) -> Result<QuantizerDesign> {
    check_sigma2(sigma2)?;
    let l = check_levels(levels)?;
    let half = l as f64 - 0.5;
    let t_star = tail_threshold_target(sigma2, levels);
    let tail_star = (half * tail_llr_at(sigma2, t_star)? / t_star).round() as i64;
    let r = options.search_radius as i64;
    let first = (l as i64).max(tail_star - r);
    let last = (tail_star + r).max(first);
    let scale = t_star / half;
    let window = (options.delta_window.0 * scale, options.delta_window.1 * scale);

    let mut best: Option<Candidate> = None;
    let mut multimodal_tails = Vec::new();
    for tail_label in first..=last {
        let tail_label = tail_label as u32;
        let (cand, multimodal) = optimize_delta(sigma2, levels, tail_label, window, options.delta_rel_tol);
        if multimodal {
            multimodal_tails.push(tail_label);
        }
        if let Some(c) = cand {
            // Strict improvement only: ties stay with the smaller tail label.
            if best.as_ref().is_none_or(|b| c.capacity > b.capacity) {
                best = Some(c);
            }
        }
    }
    let best = best.ok_or(Error::NoFeasibleDesign)?;
    let residuals = lattice_residuals(sigma2, best.delta, best.tail_label, &best.thresholds)?;
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let channel = induced_channel(sigma2, best.delta, best.tail_label, &best.thresholds)?;
    let t_b = half * best.delta;
    Ok(QuantizerDesign {
        sigma2,
        levels,
        interior_half_range: l,
        tail_label: best.tail_label,
        delta: best.delta,
        y_thresholds: best.thresholds,
        induced_capacity: best.capacity,
        t_b,
        t_b_star: t_star,
        t_b_in_window: t_b >= t_star && t_b <= t_star + 1.0,
        max_residual,
        multimodal_tails,
        channel,
    })
}

/// Capacity loss of a design against the unquantized channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityLossReport {
    pub unquantized_capacity: f64,
    pub exact_loss: f64,
    /// κδ²/24.
    pub leading_term: f64,
    pub kappa: f64,
    /// (8κ/(3σ²)) log B / B².
    pub asymptotic_term: f64,
}

pub fn capacity_loss_report(design: &QuantizerDesign) -> Result<CapacityLossReport> {
    let ch = AwgnChannel::new(design.sigma2)?;
    let unquantized_capacity = ch.capacity()?;
    let kappa = ch.kappa()?;
    let b = design.levels as f64;
    Ok(CapacityLossReport {
        unquantized_capacity,
        exact_loss: unquantized_capacity - design.induced_capacity,
        leading_term: kappa * design.delta * design.delta / 24.0,
        kappa,
        asymptotic_term: 8.0 * kappa / (3.0 * design.sigma2) * b.ln() / (b * b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::std_normal_cdf;

    #[test]
    fn full_line_llr_is_zero() {
        assert_eq!(bin_llr(1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap(), 0.0);
        assert!(bin_llr(1.0, 1.0, 1.0).is_err());
        assert!(bin_llr(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn interval_llr_matches_linear_formula() {
        let (s, a) = (1.3f64, 0.7f64);
        let direct = ((std_normal_cdf((a - 1.0) / s) - std_normal_cdf((-a - 1.0) / s))
            / (std_normal_cdf((a + 1.0) / s) - std_normal_cdf((-a + 1.0) / s)))
            .ln();
        let got = bin_llr(s * s, -a, a).unwrap();
        assert!((got - direct).abs() < 1e-13);
        // A symmetric cell carries no information.
        assert!(got.abs() < 1e-15);
        let asym = bin_llr(1.0, -0.2, 0.9).unwrap();
        assert!(asym > 0.0);
    }

    #[test]
    fn far_tail_llr_approaches_point_llr() {
        for t in [20.0, 50.0, 100.0] {
            let excess = tail_llr_at(1.0, t).unwrap() - t;
            let predicted = 2.0 * 2.0 / t;
            assert!((excess / predicted - 1.0).abs() < 0.05, "t={t} excess={excess}");
        }
        // Far beyond the erfc range the log-space branch keeps it finite.
        let deep = tail_llr(1.0, 60.0).unwrap();
        assert!((deep - 120.0).abs() < 0.1);
    }

    #[test]
    fn three_level_solves_only_the_tail() {
        // The tail LLR is at least log(Φ(1)/Φ(−1)) ≈ 1.67, reached at threshold 0.
        let b = solve_thresholds(1.0, 2.0, 1, 3).unwrap();
        assert_eq!(b.len(), 1);
        assert!((tail_llr(1.0, b[0]).unwrap() - 2.0).abs() < LATTICE_TOL);
        assert!(solve_thresholds(1.0, 1.5, 1, 3).is_err());
    }

    #[test]
    fn solved_thresholds_replay_exactly() {
        for levels in [7u32, 15, 31] {
            let d = design_quantizer(1.0, levels, DesignOptions::default()).unwrap();
            let (delta, tail) = (d.delta, d.tail_label);
            let b = solve_thresholds(1.0, delta, tail, levels).unwrap();
            assert_eq!(b.len(), (levels as usize - 1) / 2);
            for r in lattice_residuals(1.0, delta, tail, &b).unwrap() {
                assert!(r.abs() < LATTICE_TOL, "B={levels}: residual {r}");
            }
            let ch = induced_channel(1.0, delta, tail, &b).unwrap();
            assert_eq!(ch.symbol_count(), levels as usize);
        }
    }

    #[test]
    fn infeasible_pairs_are_reported() {
        // Tail label equal to L with a huge spacing leaves no room for the
        // interior cells below the tail edge.
        let err = solve_thresholds(1.0, 0.01, 15, 31).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. } | Error::NonMonotone { .. }), "{err:?}");
    }

    #[test]
    fn three_level_design_loses_capacity() {
        let d = design_quantizer(1.0, 3, DesignOptions::default()).unwrap();
        let c = AwgnChannel::new(1.0).unwrap().capacity().unwrap();
        assert!(d.induced_capacity < c);
        assert!(d.induced_capacity > 0.0);
    }

    #[test]
    fn quantize_maps_cells_to_labels() {
        let d = design_quantizer(1.0, 7, DesignOptions::default()).unwrap();
        let b = &d.y_thresholds;
        assert_eq!(d.quantize(0.0), 0);
        assert_eq!(d.quantize(0.5 * (b[0] + b[1])), 1);
        assert_eq!(d.quantize(-0.5 * (b[1] + b[2])), -2);
        assert_eq!(d.quantize(b[2] + 10.0), d.tail_label as i64);
        assert_eq!(d.quantize(-b[2] - 10.0), -(d.tail_label as i64));
    }
}
