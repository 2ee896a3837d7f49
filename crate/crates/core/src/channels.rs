//! Binary-input memoryless symmetric channels and their parameters.
//!
//! Discrete channels are always stored in lattice form: every output symbol
//! is identified with an integer label `k` whose log-likelihood ratio is
//! exactly `k * delta`. The label set is `{0, ±1, …, ±(L−1), ±L_tail}`.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bounds::{spitzer_psi0, RuinProvider, SpitzerControl};
use crate::error::{Error, Result};
use crate::numerics::{expect_std_normal, softplus, std_normal_cdf, std_normal_pdf};

/// Channel input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Input {
    Minus,
    Plus,
}

impl Input {
    pub fn sign(self) -> f64 {
        match self {
            Input::Minus => -1.0,
            Input::Plus => 1.0,
        }
    }
}

const PROB_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Finite BMS channel whose LLR lives on the lattice `delta * Z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteBmsChannel {
    lattice_spacing: f64,
    interior_half_range: u32,
    tail_label: u32,
    /// μ₊ of each label, in the order of [`DiscreteBmsChannel::labels`].
    probs_plus: Vec<f64>,
    #[serde(skip)]
    labels: Vec<i64>,
    #[serde(skip)]
    cdf_plus: Vec<f64>,
}

impl DiscreteBmsChannel {
    /// Validates and builds a lattice channel. `probs_plus` is indexed like
    /// [`DiscreteBmsChannel::labels`], i.e. ascending label order
    /// `−L_tail, −(L−1), …, −1, 0, 1, …, L−1, L_tail`.
    pub fn new(
        lattice_spacing: f64,
        interior_half_range: u32,
        tail_label: u32,
        probs_plus: Vec<f64>,
    ) -> Result<Self> {
        if !(lattice_spacing.is_finite() && lattice_spacing > 0.0) {
            return Err(Error::InvalidChannel(format!(
                "lattice spacing must be positive, got {lattice_spacing}"
            )));
        }
        if interior_half_range < 1 || tail_label < interior_half_range {
            return Err(Error::InvalidChannel(format!(
                "need 1 <= L <= L_tail, got L={interior_half_range}, L_tail={tail_label}"
            )));
        }
        let labels = lattice_labels(interior_half_range, tail_label);
        if probs_plus.len() != labels.len() {
            return Err(Error::InvalidChannel(format!(
                "expected {} probabilities, got {}",
                labels.len(),
                probs_plus.len()
            )));
        }
        if probs_plus.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidChannel("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs_plus.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidChannel(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let n = labels.len();
        for (i, &k) in labels.iter().enumerate() {
            let p = probs_plus[i];
            let mirror = probs_plus[n - 1 - i];
            let expected = p * (-(k as f64) * lattice_spacing).exp();
            if (mirror - expected).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidChannel(format!(
                    "label {k}: mu(-k)={mirror} but mu(k)*exp(-k*delta)={expected}"
                )));
            }
        }
        let mut acc = 0.0;
        let cdf_plus = probs_plus
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            lattice_spacing,
            interior_half_range,
            tail_label,
            probs_plus,
            labels,
            cdf_plus,
        })
    }

    pub fn lattice_spacing(&self) -> f64 {
        self.lattice_spacing
    }

    pub fn interior_half_range(&self) -> u32 {
        self.interior_half_range
    }

    pub fn tail_label(&self) -> u32 {
        self.tail_label
    }

    /// Number of output symbols, `2L + 1`.
    pub fn symbol_count(&self) -> usize {
        self.labels.len()
    }

    /// Labels in ascending order.
    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn probs_plus(&self) -> &[f64] {
        &self.probs_plus
    }

    fn index_of(&self, label: i64) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    /// μ₊(k); zero for labels outside the alphabet.
    pub fn prob_plus(&self, label: i64) -> f64 {
        self.index_of(label).map_or(0.0, |i| self.probs_plus[i])
    }

    /// P_x(k), using P₋(k) = P₊(−k).
    pub fn prob(&self, input: Input, label: i64) -> f64 {
        match input {
            Input::Plus => self.prob_plus(label),
            Input::Minus => self.prob_plus(-label),
        }
    }

    /// LLR carried by a label.
    pub fn llr(&self, label: i64) -> f64 {
        label as f64 * self.lattice_spacing
    }

    /// (label, LLR value, μ₊) over the symbols with positive mass.
    pub fn llr_support(&self) -> impl Iterator<Item = (i64, f64, f64)> + '_ {
        self.labels
            .iter()
            .zip(&self.probs_plus)
            .filter(|(_, p)| **p > 0.0)
            .map(|(&k, &p)| (k, k as f64 * self.lattice_spacing, p))
    }

    /// Draws an output label given the input.
    pub fn sample<R: Rng + ?Sized>(&self, input: Input, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let idx = self
            .cdf_plus
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| self.last_positive_index());
        let k = self.labels[idx];
        match input {
            Input::Plus => k,
            Input::Minus => -k,
        }
    }

    fn last_positive_index(&self) -> usize {
        self.probs_plus
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("at least one symbol has positive mass")
    }
}

impl<'de> Deserialize<'de> for DiscreteBmsChannel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lattice_spacing: f64,
            interior_half_range: u32,
            tail_label: u32,
            probs_plus: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        DiscreteBmsChannel::new(
            raw.lattice_spacing,
            raw.interior_half_range,
            raw.tail_label,
            raw.probs_plus,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Ascending lattice labels `−L_tail, −(L−1), …, L−1, L_tail`.
pub fn lattice_labels(interior_half_range: u32, tail_label: u32) -> Vec<i64> {
    let l = interior_half_range as i64;
    let tail = tail_label as i64;
    std::iter::once(-tail)
        .chain(-(l - 1)..=(l - 1))
        .chain(std::iter::once(tail))
        .collect()
}

/// BSC with crossover `p` as a two-symbol lattice channel.
pub fn bsc_channel(p: f64) -> Result<DiscreteBmsChannel> {
    check_crossover(p)?;
    let delta = ((1.0 - p) / p).ln();
    DiscreteBmsChannel::new(delta, 1, 1, vec![p, 0.0, 1.0 - p])
}

fn check_crossover(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("crossover probability must be in (0, 1/2), got {p}")))
    }
}

/// Y = X + Z with Z ~ N(0, σ²) and X ∈ {−1, +1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgnChannel {
    noise_power: f64,
}

impl AwgnChannel {
    pub fn new(noise_power: f64) -> Result<Self> {
        if noise_power.is_finite() && noise_power > 0.0 {
            Ok(Self { noise_power })
        } else {
            Err(Error::Domain(format!("noise power must be positive and finite, got {noise_power}")))
        }
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn sigma(&self) -> f64 {
        self.noise_power.sqrt()
    }

    /// Mean of the LLR under input +, `2/σ²`.
    pub fn llr_mean(&self) -> f64 {
        2.0 / self.noise_power
    }

    /// Standard deviation of the LLR, `2/σ`.
    pub fn llr_std(&self) -> f64 {
        2.0 / self.sigma()
    }

    pub fn sample<R: Rng + ?Sized>(&self, input: Input, rng: &mut R) -> f64 {
        let noise = Normal::new(0.0, self.sigma()).expect("positive sigma");
        input.sign() + noise.sample(rng)
    }

    /// C = log 2 − E[log(1 + e^{−Λ})].
    pub fn capacity(&self) -> Result<f64> {
        let (mu, s) = (self.llr_mean(), self.llr_std());
        let penalty = expect_std_normal(|g| softplus(-(mu + s * g)))?;
        Ok(LN_2 - penalty)
    }

    /// E[(1 + e^Λ)^{−2}], the constant governing the quantization loss.
    pub fn kappa(&self) -> Result<f64> {
        let (mu, s) = (self.llr_mean(), self.llr_std());
        expect_std_normal(|g| {
            let lam = mu + s * g;
            // (1 + e^λ)^{-2} = e^{-2 softplus(λ)}
            (-2.0 * softplus(lam)).exp()
        })
    }
}

/// Any of the supported channel models.
#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Bsc { crossover: f64 },
    Awgn(AwgnChannel),
    Lattice(DiscreteBmsChannel),
}

impl Channel {
    pub fn bsc(p: f64) -> Result<Self> {
        check_crossover(p)?;
        Ok(Channel::Bsc { crossover: p })
    }

    /// The lattice form used by the codecs, if the channel has one.
    pub fn lattice(&self) -> Option<DiscreteBmsChannel> {
        match self {
            Channel::Bsc { crossover } => bsc_channel(*crossover).ok(),
            Channel::Lattice(ch) => Some(ch.clone()),
            Channel::Awgn(_) => None,
        }
    }
}

/// Where ψ(0) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Psi0Source {
    Analytic,
    Spitzer,
    ChiSurrogate,
}

/// Every channel-dependent constant used by the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// C, nats.
    pub capacity: f64,
    /// C₁ = D(P₊‖P₋) = E[Λ], nats.
    pub kl_c1: f64,
    pub bhattacharyya: f64,
    /// χ = 1 − √(1 − Z).
    pub ruin_chi: f64,
    /// η(P_Λ): the smallest of the three overshoot terms below.
    pub eta: f64,
    pub eta_lorden: f64,
    pub eta_mogulskii: f64,
    pub eta0_plus: f64,
    pub eta0_minus: f64,
    /// ψ(0), probability the LLR walk ever drops below zero.
    pub psi0: f64,
    pub psi0_source: Psi0Source,
    /// Channel-specific replacement for the `log 2` constant, when known.
    pub refined_log2: Option<f64>,
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }
}

/// g(λ) = log(2e^λ / (1 + e^λ)).
pub fn capacity_kernel(lambda: f64) -> f64 {
    LN_2 - softplus(-lambda)
}

/// Computes all parameters of a channel.
pub fn channel_params(channel: &Channel) -> Result<ChannelParams> {
    match channel {
        Channel::Bsc { crossover } => {
            let p = *crossover;
            let lattice = bsc_channel(p)?;
            let mut params = discrete_params(&lattice)?;
            params.psi0 = p / (1.0 - p);
            params.psi0_source = Psi0Source::Analytic;
            params.refined_log2 = Some(crate::bounds::refined_log2_bsc(p)?);
            Ok(params)
        }
        Channel::Lattice(ch) => discrete_params(ch),
        Channel::Awgn(ch) => awgn_params(ch),
    }
}

fn chi_from_z(z: f64) -> f64 {
    1.0 - (1.0 - z).sqrt()
}

fn discrete_params(ch: &DiscreteBmsChannel) -> Result<ChannelParams> {
    let support: Vec<(f64, f64)> = ch.llr_support().map(|(_, v, p)| (v, p)).collect();
    let capacity: f64 = support.iter().map(|&(v, p)| p * capacity_kernel(v)).sum();
    let kl_c1: f64 = support.iter().map(|&(v, p)| p * v).sum();
    let bhattacharyya: f64 = support.iter().map(|&(v, p)| p * (-v / 2.0).exp()).sum();
    if kl_c1 <= 0.0 {
        return Err(Error::InvalidChannel("channel is trivial (C1 = 0)".into()));
    }

    let second: f64 = support.iter().map(|&(v, p)| p * v * v).sum();
    let pos_second: f64 = support.iter().filter(|(v, _)| *v > 0.0).map(|&(v, p)| p * v * v).sum();
    let abs_third: f64 = support.iter().map(|&(v, p)| p * v.abs().powi(3)).sum();
    let eta_lorden = pos_second / kl_c1;
    let eta_mogulskii = 3.0 * abs_third / second;
    let eta0_plus = discrete_mean_excess(&support);
    let mirrored: Vec<(f64, f64)> = support.iter().map(|&(v, p)| (-v, p)).collect();
    let eta0_minus = discrete_mean_excess_strict(&mirrored);
    let eta = eta_lorden.min(eta_mogulskii).min(eta0_plus);

    let ruin_chi = chi_from_z(bhattacharyya);
    let (psi0, psi0_source) =
        match spitzer_psi0(&RuinProvider::Lattice(ch.clone()), SpitzerControl::default()) {
            Ok(est) => (est.psi0.min(ruin_chi), Psi0Source::Spitzer),
            Err(_) => (ruin_chi, Psi0Source::ChiSurrogate),
        };

    Ok(ChannelParams {
        capacity,
        kl_c1,
        bhattacharyya,
        ruin_chi,
        eta,
        eta_lorden,
        eta_mogulskii,
        eta0_plus,
        eta0_minus,
        psi0,
        psi0_source,
        refined_log2: None,
    })
}

/// sup_{x ≥ 0} E[X − x | X ≥ x] for a finite-support law.
///
/// On a finite support the supremum is attained at x = 0 or approached as
/// x decreases to a support point s ≥ 0 (conditioning on X > s).
fn discrete_mean_excess(support: &[(f64, f64)]) -> f64 {
    let conditional = |x: f64, strict: bool| -> Option<f64> {
        let (mass, excess) = support
            .iter()
            .filter(|(v, _)| if strict { *v > x } else { *v >= x })
            .fold((0.0, 0.0), |(m, e), &(v, p)| (m + p, e + p * (v - x)));
        (mass > 0.0).then(|| excess / mass)
    };
    let mut best = conditional(0.0, false).unwrap_or(0.0);
    for &(s, _) in support.iter().filter(|(v, _)| *v >= 0.0) {
        if let Some(val) = conditional(s, true) {
            best = best.max(val);
        }
    }
    best
}

/// sup_{x ≥ 0} E[Y − x | Y > x]; the strict-exceedance counterpart used for
/// the negative mean-excess parameter with Y = −Λ.
fn discrete_mean_excess_strict(support: &[(f64, f64)]) -> f64 {
    let conditional = |x: f64| -> Option<f64> {
        let (mass, excess) = support
            .iter()
            .filter(|(v, _)| *v > x)
            .fold((0.0, 0.0), |(m, e), &(v, p)| (m + p, e + p * (v - x)));
        (mass > 0.0).then(|| excess / mass)
    };
    let mut best = conditional(0.0).unwrap_or(0.0);
    for &(s, _) in support.iter().filter(|(v, _)| *v >= 0.0) {
        if let Some(val) = conditional(s) {
            best = best.max(val);
        }
    }
    best
}

fn awgn_params(ch: &AwgnChannel) -> Result<ChannelParams> {
    let sigma = ch.sigma();
    let (mu, s) = (ch.llr_mean(), ch.llr_std());
    let a = mu / s; // = 1/σ
    let capacity = ch.capacity()?;
    let kl_c1 = mu;
    let bhattacharyya = (-1.0 / (2.0 * ch.noise_power())).exp();
    let ruin_chi = chi_from_z(bhattacharyya);

    let (cdf_a, cdf_neg_a, pdf_a) = (std_normal_cdf(a), std_normal_cdf(-a), std_normal_pdf(a));
    // Λ = s (a + G): closed-form truncated Gaussian moments.
    let pos_second = s * s * ((a * a + 1.0) * cdf_a + a * pdf_a);
    let eta_lorden = pos_second / mu;
    let pos_third = (a.powi(3) + 3.0 * a) * cdf_a + (a * a + 2.0) * pdf_a;
    let neg_third = -(a.powi(3) + 3.0 * a) * cdf_neg_a + (a * a + 2.0) * pdf_a;
    let abs_third = s.powi(3) * (pos_third + neg_third);
    let eta_mogulskii = 3.0 * abs_third / (mu * mu + s * s);
    // Log-concave law: the mean excess is largest at the origin.
    let eta0_plus = mu + (2.0 / sigma) * pdf_a / cdf_a;
    let eta0_minus = (2.0 / sigma) * pdf_a / cdf_neg_a - mu;
    let eta = eta_lorden.min(eta_mogulskii).min(eta0_plus);

    let (psi0, psi0_source) = match spitzer_psi0(&RuinProvider::Awgn(*ch), SpitzerControl::default()) {
        Ok(est) => (est.psi0.min(ruin_chi), Psi0Source::Spitzer),
        Err(_) => (ruin_chi, Psi0Source::ChiSurrogate),
    };

    Ok(ChannelParams {
        capacity,
        kl_c1,
        bhattacharyya,
        ruin_chi,
        eta,
        eta_lorden,
        eta_mogulskii,
        eta0_plus,
        eta0_minus,
        psi0,
        psi0_source,
        refined_log2: Some(crate::bounds::refined_log2_awgn(ch)),
    })
}

/// On-disk channel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelSpec {
    Bsc {
        p: f64,
    },
    Awgn {
        sigma2: f64,
    },
    Lattice {
        #[serde(flatten)]
        channel: DiscreteBmsChannel,
        /// Design metadata when the lattice came from the quantizer.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quantizer: Option<serde_json::Value>,
    },
}

impl ChannelSpec {
    pub fn to_channel(&self) -> Result<Channel> {
        match self {
            ChannelSpec::Bsc { p } => Channel::bsc(*p),
            ChannelSpec::Awgn { sigma2 } => Ok(Channel::Awgn(AwgnChannel::new(*sigma2)?)),
            ChannelSpec::Lattice { channel, .. } => Ok(Channel::Lattice(channel.clone())),
        }
    }

    pub fn from_channel(channel: &Channel) -> Self {
        match channel {
            Channel::Bsc { crossover } => ChannelSpec::Bsc { p: *crossover },
            Channel::Awgn(ch) => ChannelSpec::Awgn {
                sigma2: ch.noise_power(),
            },
            Channel::Lattice(ch) => ChannelSpec::Lattice {
                channel: ch.clone(),
                quantizer: None,
            },
        }
    }
}

/// Channel spec plus an optional provenance block, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpecFile {
    #[serde(flatten)]
    pub spec: ChannelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ChannelSpecFile {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("channel spec serializes")
    }
}
