//! Reproducible batch simulation and the codec equivalence campaign.
//!
//! Trial `i` at message size `K` draws everything from a ChaCha8 stream keyed
//! by `(seed, K)` with stream id `i`: first the true message, then one
//! channel output per round. Results are collected in trial order and reduced
//! sequentially, so the output does not depend on the worker count.

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::bounds::{n0_bound, optimize_stop_at_zero, BoundVariant};
use crate::channels::{channel_params, Channel, ChannelSpecFile, DiscreteBmsChannel};
use crate::error::{Error, Result};
use crate::exec::{map_trials, Schedule};
use crate::lattice_codec::{self, MinLookup};
use crate::sed_reference;
use crate::trial::{trace_csv, CodecConfig, RoundTrace, TrialRecord, DEFAULT_ROUNDS_PER_BIT};

/// Largest censored fraction tolerated in a curve point.
pub const MAX_CENSORED_FRACTION: f64 = 1e-3;
/// Largest |max posterior| gap tolerated between the codecs.
pub const POSTERIOR_TOL: f64 = 1e-9;

/// Where the channel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSource {
    File(PathBuf),
    Inline(ChannelSpecFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderSelector {
    Reference,
    #[default]
    Lattice,
    BothVerify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub channel: ChannelSource,
    pub bits: Vec<u32>,
    pub epsilon: f64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderSelector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Round cap per bit; defaults to 64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_per_bit: Option<usize>,
    #[serde(default)]
    pub lookup: MinLookup,
}

impl ExperimentConfig {
    /// Reads a JSON config; relative channel paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        if let ChannelSource::File(p) = &config.channel {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    config.channel = ChannelSource::File(dir.join(p));
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Domain("trials must be at least 1".into()));
        }
        if self.bits.is_empty() || self.bits.iter().any(|&k| !(1..=126).contains(&k)) {
            return Err(Error::Domain("bits must be non-empty with every K in [1, 126]".into()));
        }
        CodecConfig::new(self.epsilon, 1)?;
        Ok(())
    }

    pub fn spec(&self) -> Result<ChannelSpecFile> {
        match &self.channel {
            ChannelSource::File(p) => ChannelSpecFile::read(p),
            ChannelSource::Inline(s) => Ok(s.clone()),
        }
    }

    pub fn codec_config(&self, bits: u32) -> Result<CodecConfig> {
        let per_bit = self.rounds_per_bit.unwrap_or(DEFAULT_ROUNDS_PER_BIT);
        CodecConfig::new(self.epsilon, per_bit * bits as usize)
    }
}

/// Channel model plus the lattice form the codecs run on.
pub struct ResolvedChannel {
    pub model: Channel,
    pub lattice: DiscreteBmsChannel,
}

pub fn resolve_channel(config: &ExperimentConfig) -> Result<ResolvedChannel> {
    let model = config.spec()?.spec.to_channel()?;
    let lattice = model.lattice().ok_or_else(|| {
        Error::Unsupported("simulation needs a lattice channel; quantize the AWGN channel first".into())
    })?;
    Ok(ResolvedChannel { model, lattice })
}

/// SplitMix64 finalizer of `seed` and `bits`.
fn mix(seed: u64, bits: u32) -> u64 {
    let mut z = seed ^ (bits as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The random stream of one trial.
pub fn trial_rng(seed: u64, bits: u32, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, bits));
    rng.set_stream(trial);
    rng
}

fn draw_message(rng: &mut ChaCha8Rng, message_count: u128) -> u128 {
    rng.random_range(1..=message_count)
}

/// One row of a rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bits: u32,
    pub message_count: u128,
    pub trials: u64,
    pub mean_tau: f64,
    /// 95% half-width.
    pub ci_tau: f64,
    pub err_rate: f64,
    /// Clopper–Pearson 95% upper bound.
    pub err_upper: f64,
    pub rate_bits_per_use: f64,
    pub rate_nats_per_use: f64,
    pub n0_bound: f64,
    pub n_star_bound: f64,
    pub censored: u64,
}

/// Clopper–Pearson upper limit: the 97.5% quantile of Beta(x + 1, n − x).
pub fn clopper_pearson_upper(errors: u64, trials: u64) -> f64 {
    if errors >= trials {
        return 1.0;
    }
    let beta = Beta::new(errors as f64 + 1.0, (trials - errors) as f64).expect("valid beta");
    beta.inverse_cdf(0.975)
}

#[derive(Debug, Clone, Copy)]
struct Summary {
    tau: usize,
    error: bool,
    censored: bool,
}

impl From<&TrialRecord> for Summary {
    fn from(r: &TrialRecord) -> Self {
        Summary {
            tau: r.tau,
            error: r.error,
            censored: r.censored,
        }
    }
}

fn aggregate(bits: u32, summaries: &[Summary], n0: f64, n_star: f64) -> Result<CurvePoint> {
    let trials = summaries.len() as u64;
    let censored = summaries.iter().filter(|s| s.censored).count() as u64;
    if censored as f64 > MAX_CENSORED_FRACTION * trials as f64 {
        return Err(Error::ExcessCensoring { censored, trials });
    }
    let taus: Vec<f64> = summaries.iter().filter(|s| !s.censored).map(|s| s.tau as f64).collect();
    let n = taus.len() as f64;
    let mean_tau = taus.iter().sum::<f64>() / n;
    let var = if taus.len() > 1 {
        taus.iter().map(|t| (t - mean_tau).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    // A censored trial never reached the target, so it counts as an error.
    let errors = summaries.iter().filter(|s| s.error || s.censored).count() as u64;
    Ok(CurvePoint {
        bits,
        message_count: 1u128 << bits,
        trials,
        mean_tau,
        ci_tau: 1.96 * var.sqrt() / n.sqrt(),
        err_rate: errors as f64 / trials as f64,
        err_upper: clopper_pearson_upper(errors, trials),
        rate_bits_per_use: bits as f64 / mean_tau,
        rate_nats_per_use: bits as f64 * LN_2 / mean_tau,
        n0_bound: n0,
        n_star_bound: n_star,
        censored,
    })
}

/// Refined N₀ and the stop-at-zero bound at `(2^K, ε)`.
pub fn bound_overlay(model: &Channel, bits: u32, eps: f64) -> Result<(f64, f64)> {
    let params = channel_params(model)?;
    let m = 2f64.powi(bits as i32);
    let (terms, _) = n0_bound(&params, m, eps, BoundVariant::Refined)?;
    let stop = optimize_stop_at_zero(&params, m, eps, BoundVariant::Refined)?;
    Ok((terms.total(), stop.n_star_upper))
}

/// Runs the configured encoder over every K and returns one point per K.
pub fn run_experiment(config: &ExperimentConfig, schedule: Schedule) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let channel = resolve_channel(config)?;
    if config.encoder == EncoderSelector::BothVerify {
        verify_equivalence(config, schedule)?.ensure_clean()?;
    }
    let mut points = Vec::with_capacity(config.bits.len());
    for &bits in &config.bits {
        let codec = config.codec_config(bits)?;
        let m = 1u128 << bits;
        let results = map_trials(config.trials, schedule, |trial| -> Result<Summary> {
            let mut rng = trial_rng(config.seed, bits, trial);
            let w = draw_message(&mut rng, m);
            let rec = match config.encoder {
                EncoderSelector::Reference => {
                    sed_reference::run_trial(&channel.lattice, &codec, m, w, config.lookup, &mut rng)?.0
                }
                _ => lattice_codec::run_trial(&channel.lattice, &codec, m, w, config.lookup, &mut rng)?,
            };
            Ok(Summary::from(&rec))
        });
        let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
        let (n0, n_star) = bound_overlay(&channel.model, bits, config.epsilon)?;
        points.push(aggregate(bits, &summaries, n0, n_star)?);
    }
    Ok(points)
}

pub const CURVE_HEADER: &str =
    "K,M,trials,mean_tau,ci_tau,err_rate,err_upper,rate_bits_per_use,n0_bound,n_star_bound,censored";

/// `#`-prefixed provenance lines: tool version, resolved config and seed.
pub fn provenance_header(tool: &str, config: &impl Serialize, seed: u64) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("# tool: {tool} {}\n# config: {json}\n# seed: {seed}\n", env!("CARGO_PKG_VERSION"))
}

pub fn curve_csv(config: &ExperimentConfig, points: &[CurvePoint]) -> String {
    let mut out = provenance_header("vlf simulate", config, config.seed);
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.bits,
            p.message_count,
            p.trials,
            p.mean_tau,
            p.ci_tau,
            p.err_rate,
            p.err_upper,
            p.rate_bits_per_use,
            p.n0_bound,
            p.n_star_bound,
            p.censored
        ));
    }
    out
}

/// First point where the two codecs disagreed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub bits: u32,
    pub trial: u64,
    pub round: usize,
    pub detail: String,
    pub lattice_trace: String,
    pub reference_trace: String,
}

/// Outcome of the equivalence campaign at one message size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyPoint {
    pub bits: u32,
    pub trials: u64,
    pub rounds: u64,
    pub divergences: u64,
    /// Rounds whose repaired partition failed the grouped SED test.
    pub sed_violations: u64,
    /// Rounds failing the SED test on the direct per-message posteriors.
    pub per_message_sed_violations: u64,
    pub group_bound_violations: u64,
    pub fragment_bound_violations: u64,
    pub max_fidelity_error: f64,
    pub max_label_spread: f64,
    pub max_posterior_gap: f64,
    pub max_repair_iters: usize,
    pub first_divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub points: Vec<VerifyPoint>,
}

impl VerifyReport {
    /// Converts the first recorded divergence into an error.
    pub fn ensure_clean(&self) -> Result<&Self> {
        if let Some(d) = self.points.iter().find_map(|p| p.first_divergence.as_ref()) {
            return Err(Error::DivergenceFound {
                trial: d.trial,
                round: d.round,
                detail: format!(
                    "K={}: {}\nlattice trace:\n{}reference trace:\n{}",
                    d.bits, d.detail, d.lattice_trace, d.reference_trace
                ),
            });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
struct PairCheck {
    rounds: u64,
    divergence: Option<(usize, String)>,
    sed_violations: u64,
    per_message_sed_violations: u64,
    group_bound_violations: u64,
    fragment_bound_violations: u64,
    max_fidelity_error: f64,
    max_label_spread: f64,
    max_posterior_gap: f64,
    max_repair_iters: usize,
    traces: (Vec<RoundTrace>, Vec<RoundTrace>),
}

fn compare_pair(
    lat: &TrialRecord,
    refr: &TrialRecord,
    extra: &[sed_reference::ReferenceRound],
    tail_label: u32,
) -> PairCheck {
    let mut check = PairCheck {
        rounds: lat.trace.len() as u64,
        divergence: None,
        sed_violations: 0,
        per_message_sed_violations: 0,
        group_bound_violations: 0,
        fragment_bound_violations: 0,
        max_fidelity_error: 0.0,
        max_label_spread: 0.0,
        max_posterior_gap: 0.0,
        max_repair_iters: 0,
        traces: (lat.trace.clone(), refr.trace.clone()),
    };
    for (i, (a, b)) in lat.trace.iter().zip(&refr.trace).enumerate() {
        let gap = (a.max_posterior - b.max_posterior).abs();
        check.max_posterior_gap = check.max_posterior_gap.max(gap);
        if check.divergence.is_none() {
            let detail = if a.w_plus != b.w_plus {
                Some(format!("W-bin bit {} vs {}", a.w_plus, b.w_plus))
            } else if a.imbalance.to_bits() != b.imbalance.to_bits() {
                Some(format!("imbalance {:e} vs {:e}", a.imbalance, b.imbalance))
            } else if gap > POSTERIOR_TOL {
                Some(format!("max posterior {} vs {}", a.max_posterior, b.max_posterior))
            } else if a.n_t != b.n_t {
                Some(format!("observation {} vs {}", a.n_t, b.n_t))
            } else {
                None
            };
            check.divergence = detail.map(|d| (i + 1, d));
        }
        for tr in [a, b] {
            if !tr.sed_ok {
                check.sed_violations += 1;
            }
        }
        if a.groups as u64 > 1 + tail_label as u64 * a.t as u64 {
            check.group_bound_violations += 1;
        }
        if a.fragments > 1 + 2 * a.t {
            check.fragment_bound_violations += 1;
        }
        check.max_repair_iters = check.max_repair_iters.max(a.repair_iters);
    }
    for e in extra {
        check.max_fidelity_error = check.max_fidelity_error.max(e.fidelity_error);
        check.max_label_spread = check.max_label_spread.max(e.label_spread);
        if !e.per_message_sed_ok {
            check.per_message_sed_violations += 1;
        }
    }
    if check.divergence.is_none() {
        if lat.tau != refr.tau || lat.trace.len() != refr.trace.len() {
            check.divergence = Some((lat.tau.min(refr.tau), format!("tau {} vs {}", lat.tau, refr.tau)));
        } else if lat.decoded != refr.decoded {
            check.divergence = Some((lat.tau, format!("decoded {} vs {}", lat.decoded, refr.decoded)));
        } else if lat.censored != refr.censored {
            check.divergence = Some((lat.tau, "censoring differs".into()));
        }
    }
    check
}

/// Runs both codecs on identical streams and compares them round by round.
pub fn verify_equivalence(config: &ExperimentConfig, schedule: Schedule) -> Result<VerifyReport> {
    config.validate()?;
    let channel = resolve_channel(config)?;
    let mut points = Vec::new();
    for &bits in &config.bits {
        let m = 1u128 << bits;
        if m > sed_reference::MAX_REFERENCE_MESSAGES {
            return Err(Error::ReferenceTooLarge(m));
        }
        let codec = config.codec_config(bits)?;
        let tail = channel.lattice.tail_label();
        let checks = map_trials(config.trials, schedule, |trial| -> Result<PairCheck> {
            let mut rng = trial_rng(config.seed, bits, trial);
            let w = draw_message(&mut rng, m);
            let mut rng_ref = rng.clone();
            let lat = lattice_codec::run_trial(&channel.lattice, &codec, m, w, config.lookup, &mut rng)?;
            let (refr, extra) =
                sed_reference::run_trial(&channel.lattice, &codec, m, w, config.lookup, &mut rng_ref)?;
            Ok(compare_pair(&lat, &refr, &extra, tail))
        });
        let mut point = VerifyPoint {
            bits,
            trials: config.trials,
            rounds: 0,
            divergences: 0,
            sed_violations: 0,
            per_message_sed_violations: 0,
            group_bound_violations: 0,
            fragment_bound_violations: 0,
            max_fidelity_error: 0.0,
            max_label_spread: 0.0,
            max_posterior_gap: 0.0,
            max_repair_iters: 0,
            first_divergence: None,
        };
        for (trial, check) in checks.into_iter().enumerate() {
            let c = check?;
            point.rounds += c.rounds;
            point.sed_violations += c.sed_violations;
            point.per_message_sed_violations += c.per_message_sed_violations;
            point.group_bound_violations += c.group_bound_violations;
            point.fragment_bound_violations += c.fragment_bound_violations;
            point.max_fidelity_error = point.max_fidelity_error.max(c.max_fidelity_error);
            point.max_label_spread = point.max_label_spread.max(c.max_label_spread);
            point.max_posterior_gap = point.max_posterior_gap.max(c.max_posterior_gap);
            point.max_repair_iters = point.max_repair_iters.max(c.max_repair_iters);
            if let Some((round, detail)) = c.divergence {
                point.divergences += 1;
                if point.first_divergence.is_none() {
                    point.first_divergence = Some(Divergence {
                        bits,
                        trial: trial as u64,
                        round,
                        detail,
                        lattice_trace: trace_csv(&c.traces.0),
                        reference_trace: trace_csv(&c.traces.1),
                    });
                }
            }
        }
        points.push(point);
    }
    Ok(VerifyReport { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelSpec;

    fn bsc_config(bits: Vec<u32>, trials: u64) -> ExperimentConfig {
        ExperimentConfig {
            channel: ChannelSource::Inline(ChannelSpecFile {
                spec: ChannelSpec::Bsc { p: 0.11 },
                provenance: None,
            }),
            bits,
            epsilon: 1e-3,
            trials,
            seed: 42,
            encoder: EncoderSelector::Lattice,
            output: None,
            rounds_per_bit: None,
            lookup: MinLookup::Linear,
        }
    }

    #[test]
    fn clopper_pearson_known_values() {
        // Zero errors in n trials: 1 − 0.025^{1/n}.
        let n = 1000;
        let expected = 1.0 - 0.025f64.powf(1.0 / n as f64);
        assert!((clopper_pearson_upper(0, n) - expected).abs() < 1e-9);
        assert_eq!(clopper_pearson_upper(5, 5), 1.0);
        assert!(clopper_pearson_upper(10, 1000) > 0.01);
    }

    #[test]
    fn single_trial_smoke() {
        let cfg = bsc_config(vec![4], 1);
        let pts = run_experiment(&cfg, Schedule::Sequential).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].trials, 1);
        let csv = curve_csv(&cfg, &pts);
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
    }

    #[test]
    fn streams_differ_by_trial_and_size() {
        let a: u64 = trial_rng(1, 10, 0).random();
        let b: u64 = trial_rng(1, 10, 1).random();
        let c: u64 = trial_rng(1, 11, 0).random();
        assert!(a != b && a != c && b != c);
        let again: u64 = trial_rng(1, 10, 0).random();
        assert_eq!(a, again);
    }

    #[test]
    fn small_equivalence_campaign() {
        let mut cfg = bsc_config(vec![1, 3, 6], 200);
        cfg.encoder = EncoderSelector::BothVerify;
        let report = verify_equivalence(&cfg, Schedule::Sequential).unwrap();
        report.ensure_clean().unwrap();
        for p in &report.points {
            assert_eq!(p.divergences, 0);
            assert_eq!(p.sed_violations, 0);
            assert_eq!(p.per_message_sed_violations, 0);
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = bsc_config(vec![20, 40], 10);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let from_path: ExperimentConfig =
            serde_json::from_str(r#"{"channel":"q31.json","bits":[40],"epsilon":0.001,"trials":5,"seed":1}"#)
                .unwrap();
        assert_eq!(from_path.channel, ChannelSource::File("q31.json".into()));
        assert_eq!(from_path.encoder, EncoderSelector::Lattice);
    }
}
