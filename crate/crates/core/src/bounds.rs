//! Achievability bound on the expected decoding time, its stop-at-zero
//! improvement, the finite-ε asymptotic expansion and ruin probabilities.
//!
//! Message counts are passed as `f64` so that `M = 2^120` is representable;
//! only `log(M − 1)` enters the formulas.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::channels::{AwgnChannel, Channel, ChannelParams, DiscreteBmsChannel, Psi0Source};
use crate::error::{Error, Result};
use crate::numerics::{golden_min, log_sum_exp, std_normal_cdf};

/// `log((1 − ε)/ε)`, the confirmation threshold.
pub fn confirmation_threshold(eps: f64) -> f64 {
    ((1.0 - eps) / eps).ln()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("error probability must be in (0, 1/2), got {eps}")))
    }
}

/// α(ε′) = max{ψ/(1 − e^{−A/2}), e^{−A/2}} with A = log((1 − ε′)/ε′).
pub fn alpha(eps_prime: f64, psi0: f64) -> Result<f64> {
    check_eps(eps_prime)?;
    if !(psi0 > 0.0 && psi0 < 1.0) {
        return Err(Error::Domain(format!("ruin probability must be in (0, 1), got {psi0}")));
    }
    let half = (-0.5 * confirmation_threshold(eps_prime)).exp();
    Ok((psi0 / (1.0 - half)).max(half))
}

/// Which constants enter N₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundVariant {
    /// χ for the ruin probability and `log 2` in the communication term.
    Baseline,
    /// ψ(0) for the ruin probability and the channel-specific `log 2` constant.
    Refined,
}

/// The constants a variant resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConstants {
    pub ruin: f64,
    pub ruin_source: RuinSource,
    pub log2_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuinSource {
    Chi,
    Psi0(Psi0Source),
}

impl BoundVariant {
    pub fn resolve(self, params: &ChannelParams) -> ResolvedConstants {
        match self {
            BoundVariant::Baseline => ResolvedConstants {
                ruin: params.ruin_chi,
                ruin_source: RuinSource::Chi,
                log2_term: LN_2,
            },
            BoundVariant::Refined => ResolvedConstants {
                ruin: params.psi0.min(params.ruin_chi),
                ruin_source: RuinSource::Psi0(params.psi0_source),
                log2_term: params.refined_log2.unwrap_or(LN_2),
            },
        }
    }
}

/// The three phase terms of N₀(M, ε′), in channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTerms {
    pub communication: f64,
    pub confirmation: f64,
    pub recovery: f64,
}

impl PhaseTerms {
    pub fn total(&self) -> f64 {
        self.communication + self.confirmation + self.recovery
    }
}

/// `log(M − 1)` for `M ≥ 2` given as a float.
pub fn ln_m_minus_one(m: f64) -> f64 {
    m.ln() + (-1.0 / m).ln_1p()
}

/// N₀(M, ε′) broken into its phase terms, plus α(ε′).
pub fn n0_bound(
    params: &ChannelParams,
    m: f64,
    eps_prime: f64,
    variant: BoundVariant,
) -> Result<(PhaseTerms, f64)> {
    check_eps(eps_prime)?;
    if !(m >= 2.0 && m.is_finite()) {
        return Err(Error::Domain(format!("message count must be at least 2, got {m}")));
    }
    if !params.kl_c1.is_finite() {
        return Err(Error::InfiniteC1);
    }
    if !params.eta.is_finite() {
        return Err(Error::Domain("overshoot parameter is infinite".into()));
    }
    let k = variant.resolve(params);
    let c = params.capacity;
    let a = alpha(eps_prime, k.ruin)?;
    let communication = (ln_m_minus_one(m) + k.log2_term) / c;
    let confirmation = (confirmation_threshold(eps_prime) + params.eta) / params.kl_c1;
    let overshoot = (a * params.eta).min(k.ruin * params.eta0_minus);
    let recovery = (overshoot + k.ruin * k.log2_term) / ((1.0 - k.ruin) * c);
    Ok((
        PhaseTerms {
            communication,
            confirmation,
            recovery,
        },
        a,
    ))
}

/// Number of grid points in the stop-at-zero search.
pub const STOP_AT_ZERO_GRID: usize = 1024;
const STOP_AT_ZERO_TOL: f64 = 1e-10;

/// Result of minimizing `(1 − ε₀) N₀(M, (ε − ε₀)/(1 − ε₀))` over `ε₀ ∈ [0, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopAtZero {
    pub eps0_opt: f64,
    pub n_star_upper: f64,
    /// ε − (1 − ε)²/(N C₁) with N = `n_star_upper`; negative means the
    /// approximation predicts no benefit from stopping at zero.
    pub eps0_closed_form: f64,
}

/// Optimizes the stop-at-zero mixture by a dense grid then golden refinement.
pub fn optimize_stop_at_zero(
    params: &ChannelParams,
    m: f64,
    eps: f64,
    variant: BoundVariant,
) -> Result<StopAtZero> {
    check_eps(eps)?;
    let objective = |eps0: f64| -> f64 {
        let eps_prime = (eps - eps0) / (1.0 - eps0);
        match n0_bound(params, m, eps_prime, variant) {
            Ok((terms, _)) => (1.0 - eps0) * terms.total(),
            Err(_) => f64::INFINITY,
        }
    };
    let at_zero = objective(0.0);
    if !at_zero.is_finite() {
        // Surface the underlying error.
        n0_bound(params, m, eps, variant)?;
    }
    let step = eps / STOP_AT_ZERO_GRID as f64;
    let (best_i, _) = (0..STOP_AT_ZERO_GRID)
        .map(|i| (i, objective(i as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let lo = (best_i as f64 - 1.0).max(0.0) * step;
    let hi = ((best_i as f64 + 1.0) * step).min(eps * (1.0 - 1e-12));
    let (x, v) = golden_min(objective, lo, hi, STOP_AT_ZERO_TOL);
    let (eps0_opt, n_star_upper) = if at_zero <= v { (0.0, at_zero) } else { (x, v) };
    let eps0_closed_form = eps - (1.0 - eps).powi(2) / (n_star_upper * params.kl_c1);
    Ok(StopAtZero {
        eps0_opt,
        n_star_upper,
        eps0_closed_form,
    })
}

/// Bound evaluation for one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: BoundVariant,
    pub alpha_eps: f64,
    pub n0: f64,
    pub phases: PhaseTerms,
    pub n_star_upper: f64,
    pub eps0_opt: f64,
    pub eps0_closed_form: f64,
    pub log2_term_used: f64,
    pub psi0_used: f64,
    pub psi0_source: RuinSource,
}

/// Full report: inputs plus baseline and refined evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub params: ChannelParams,
    pub message_count: f64,
    pub log_m: f64,
    pub eps: f64,
    pub baseline: VariantReport,
    pub refined: VariantReport,
}

impl BoundReport {
    pub fn variant(&self, variant: BoundVariant) -> &VariantReport {
        match variant {
            BoundVariant::Baseline => &self.baseline,
            BoundVariant::Refined => &self.refined,
        }
    }
}

fn variant_report(
    params: &ChannelParams,
    m: f64,
    eps: f64,
    variant: BoundVariant,
) -> Result<VariantReport> {
    let (phases, alpha_eps) = n0_bound(params, m, eps, variant)?;
    let stop = optimize_stop_at_zero(params, m, eps, variant)?;
    let k = variant.resolve(params);
    Ok(VariantReport {
        variant,
        alpha_eps,
        n0: phases.total(),
        phases,
        n_star_upper: stop.n_star_upper,
        eps0_opt: stop.eps0_opt,
        eps0_closed_form: stop.eps0_closed_form,
        log2_term_used: k.log2_term,
        psi0_used: k.ruin,
        psi0_source: k.ruin_source,
    })
}

/// Evaluates both bound variants at `(M, ε)`.
pub fn bound_report(params: &ChannelParams, m: f64, eps: f64) -> Result<BoundReport> {
    Ok(BoundReport {
        params: params.clone(),
        message_count: m,
        log_m: m.ln(),
        eps,
        baseline: variant_report(params, m, eps, BoundVariant::Baseline)?,
        refined: variant_report(params, m, eps, BoundVariant::Refined)?,
    })
}

/// `log M* ≥ NC/(1 − ε) − (C/C₁) log N + K_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub n: f64,
    pub first_order: f64,
    pub second_order: f64,
    pub k_eps: f64,
    pub logm_lower: f64,
}

/// The constant K_ε of the finite-ε expansion.
pub fn k_eps(params: &ChannelParams, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let (c, c1, chi) = (params.capacity, params.kl_c1, params.ruin_chi);
    let ratio = c / c1;
    Ok(-ratio * (1.0 + (c1 / (1.0 - eps)).ln())
        - ratio * params.eta
        - chi * params.eta.min(params.eta0_minus) / (1.0 - chi)
        - LN_2 / (1.0 - chi))
}

pub fn asymptotic_logm(params: &ChannelParams, n: f64, eps: f64) -> Result<AsymptoticReport> {
    if !(n > 0.0) {
        return Err(Error::Domain(format!("blocklength must be positive, got {n}")));
    }
    let k_eps = k_eps(params, eps)?;
    let first_order = n * params.capacity / (1.0 - eps);
    let second_order = -(params.capacity / params.kl_c1) * n.ln();
    Ok(AsymptoticReport {
        n,
        first_order,
        second_order,
        k_eps,
        logm_lower: first_order + second_order + k_eps,
    })
}

/// Refined replacement for the `log 2` constant.
pub fn refined_log2(channel: &Channel) -> Result<f64> {
    match channel {
        Channel::Bsc { crossover } => refined_log2_bsc(*crossover),
        Channel::Awgn(ch) => Ok(refined_log2_awgn(ch)),
        Channel::Lattice(_) => Err(Error::Unsupported(
            "refined log 2 constant is only known for the BSC and BI-AWGN".into(),
        )),
    }
}

/// `log(2(1 − p))/(1 − p)`.
pub fn refined_log2_bsc(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::Domain(format!("crossover probability must be in (0, 1/2), got {p}")));
    }
    Ok((2.0 * (1.0 - p)).ln() / (1.0 - p))
}

/// `(1 + r) log(2/(1 + r))` with `r = Φ(−1/σ)/Φ(1/σ)`.
pub fn refined_log2_awgn(ch: &AwgnChannel) -> f64 {
    let inv = 1.0 / ch.sigma();
    let r = std_normal_cdf(-inv) / std_normal_cdf(inv);
    (1.0 + r) * (2.0 / (1.0 + r)).ln()
}

/// Source of `P₀[S_n < 0]` for the ruin series.
#[derive(Debug, Clone)]
pub enum RuinProvider {
    Bsc { crossover: f64 },
    Awgn(AwgnChannel),
    Lattice(DiscreteBmsChannel),
}

impl RuinProvider {
    pub fn for_channel(channel: &Channel) -> Self {
        match channel {
            Channel::Bsc { crossover } => RuinProvider::Bsc {
                crossover: *crossover,
            },
            Channel::Awgn(ch) => RuinProvider::Awgn(*ch),
            Channel::Lattice(ch) => RuinProvider::Lattice(ch.clone()),
        }
    }

    fn bhattacharyya(&self) -> f64 {
        match self {
            RuinProvider::Bsc { crossover: p } => 2.0 * (p * (1.0 - p)).sqrt(),
            RuinProvider::Awgn(ch) => (-0.5 / ch.noise_power()).exp(),
            RuinProvider::Lattice(ch) => ch
                .llr_support()
                .map(|(_, v, p)| p * (-v / 2.0).exp())
                .sum(),
        }
    }
}

/// Truncation control for the ruin series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpitzerControl {
    pub tail_tol: f64,
    pub max_terms: usize,
}

impl Default for SpitzerControl {
    fn default() -> Self {
        Self {
            tail_tol: 1e-10,
            max_terms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpitzerEstimate {
    pub psi0: f64,
    /// Upper bound on the truncated part of `Σ P₀[S_n < 0]/n`.
    pub tail_bound: f64,
    pub terms: usize,
}

/// Mass below which convolution tails are dropped.
const CONV_TRIM: f64 = 1e-40;

/// n-fold convolution of a lattice LLR law, yielding `P₀[S_n < 0]` for n = 1, 2, …
struct LatticeWalk {
    step: Vec<(i64, f64)>,
    /// pmf over labels `offset, offset + 1, …`.
    pmf: Vec<f64>,
    offset: i64,
    dropped: f64,
}

impl LatticeWalk {
    fn new(ch: &DiscreteBmsChannel) -> Self {
        let step = ch.llr_support().map(|(k, _, p)| (k, p)).collect();
        Self {
            step,
            pmf: vec![1.0],
            offset: 0,
            dropped: 0.0,
        }
    }

    fn advance(&mut self) -> f64 {
        let lo = self.step.first().map_or(0, |s| s.0);
        let hi = self.step.last().map_or(0, |s| s.0);
        let mut next = vec![0.0; self.pmf.len() + (hi - lo) as usize];
        for (i, &mass) in self.pmf.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for &(k, p) in &self.step {
                next[i + (k - lo) as usize] += mass * p;
            }
        }
        let mut offset = self.offset + lo;
        let first = next.iter().position(|&x| x > CONV_TRIM).unwrap_or(0);
        let last = next.iter().rposition(|&x| x > CONV_TRIM).unwrap_or(next.len() - 1);
        self.dropped += next[..first].iter().sum::<f64>() + next[last + 1..].iter().sum::<f64>();
        offset += first as i64;
        let mut kept = next[first..=last].to_vec();
        let total: f64 = kept.iter().sum();
        kept.iter_mut().for_each(|x| *x /= total);
        self.pmf = kept;
        self.offset = offset;
        self.pmf
            .iter()
            .enumerate()
            .take_while(|(i, _)| self.offset + (*i as i64) < 0)
            .map(|(_, x)| x)
            .sum()
    }
}

/// P[Bin(n, p) > n/2].
fn bsc_strict_majority(n: usize, p: f64) -> f64 {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let ln_n1 = ln_gamma(n as f64 + 1.0);
    let terms: Vec<f64> = (n / 2 + 1..=n)
        .map(|e| {
            let e = e as f64;
            ln_n1 - ln_gamma(e + 1.0) - ln_gamma(n as f64 - e + 1.0) + e * lp + (n as f64 - e) * lq
        })
        .collect();
    if terms.is_empty() {
        0.0
    } else {
        log_sum_exp(&terms).exp()
    }
}

/// ψ(0) = 1 − exp(−Σ_n P₀[S_n < 0]/n), truncated with a certified tail.
pub fn spitzer_psi0(provider: &RuinProvider, control: SpitzerControl) -> Result<SpitzerEstimate> {
    let z = provider.bhattacharyya();
    if !(z < 1.0) {
        return Err(Error::TailNotCertified(z));
    }
    let mut walk = match provider {
        RuinProvider::Lattice(ch) => Some(LatticeWalk::new(ch)),
        _ => None,
    };
    let mut sum = 0.0;
    let mut tail = f64::INFINITY;
    let mut n = 0;
    while n < control.max_terms {
        n += 1;
        let pn = match provider {
            RuinProvider::Bsc { crossover } => bsc_strict_majority(n, *crossover),
            RuinProvider::Awgn(ch) => std_normal_cdf(-(n as f64).sqrt() / ch.sigma()),
            RuinProvider::Lattice(_) => walk.as_mut().expect("lattice walk").advance(),
        };
        sum += pn / n as f64;
        // Σ_{j>n} Z^j/(2j) ≤ Z^{n+1}/(2(n+1)(1 − Z))
        tail = z.powi(n as i32 + 1) / (2.0 * (n as f64 + 1.0) * (1.0 - z));
        if tail < control.tail_tol {
            break;
        }
    }
    if let Some(w) = &walk {
        tail += w.dropped;
    }
    Ok(SpitzerEstimate {
        psi0: -(-sum).exp_m1(),
        tail_bound: tail,
        terms: n,
    })
}
