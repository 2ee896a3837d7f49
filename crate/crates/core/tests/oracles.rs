//! Independent numerical oracles for the channel, quantizer and bound constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlf_core::bounds::{k_eps, spitzer_psi0, RuinProvider, SpitzerControl};
use vlf_core::channels::{bsc_channel, channel_params, AwgnChannel, Channel, Input};
use vlf_core::quantizer::{
    bin_llr, capacity_at, capacity_loss_report, design_quantizer, tail_llr_at, DesignOptions,
};

/// Composite Simpson rule on [a, b] with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn gauss(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// C = E[log 2 − log(1 + e^{−Λ})] with Λ ~ N(2/σ², 4/σ²), by Simpson in λ.
fn awgn_capacity_simpson(sigma2: f64) -> f64 {
    let (mu, sd) = (2.0 / sigma2, 2.0 / sigma2.sqrt());
    let kernel = |l: f64| {
        let sp = if l < 0.0 { -l + (1.0 + l.exp()).ln() } else { (-l).exp().ln_1p() };
        gauss(l, mu, sd) * (std::f64::consts::LN_2 - sp)
    };
    simpson(kernel, mu - 14.0 * sd, mu + 14.0 * sd, 200_000)
}

// 30-digit values computed separately with arbitrary-precision quadrature.
const AWGN_CAPACITY: [(f64, f64); 4] = [
    (1.0, 0.336_830_820_346_831_612),
    (0.5, 0.500_072_136_066_844_937),
    (2.0, 0.201_345_471_584_805_140),
    (4.0, 0.111_421_482_184_736_180),
];

#[test]
fn awgn_capacity_matches_simpson_and_frozen_values() {
    for (sigma2, frozen) in AWGN_CAPACITY {
        let c = AwgnChannel::new(sigma2).unwrap().capacity().unwrap();
        let oracle = awgn_capacity_simpson(sigma2);
        assert!((c - oracle).abs() < 1e-8, "σ²={sigma2}: {c} vs simpson {oracle}");
        assert!((c - frozen).abs() < 1e-10, "σ²={sigma2}: {c} vs frozen {frozen}");
    }
}

#[test]
fn kappa_frozen_for_unit_noise() {
    let kappa = AwgnChannel::new(1.0).unwrap().kappa().unwrap();
    assert!((kappa - 0.112_399_877_301_668_207).abs() < 1e-10, "{kappa}");
}

#[test]
fn bsc_constants_frozen() {
    let p = channel_params(&Channel::bsc(0.11).unwrap()).unwrap();
    assert!((p.capacity - 0.346_631_843_641_279_157).abs() < 1e-12);
    assert!((p.kl_c1 - 1.630_778_055_608_340_05).abs() < 1e-12);
    assert!((p.bhattacharyya - 0.625_779_513_886_480_627).abs() < 1e-12);
    assert!((p.ruin_chi - 0.388_264_365_829_879_604).abs() < 1e-12);
}

#[test]
fn bsc_k_eps_frozen() {
    let p = channel_params(&Channel::bsc(0.11).unwrap()).unwrap();
    let k = k_eps(&p, 1e-3).unwrap();
    assert!((k - -3.221_182_448_632_980_825).abs() < 1e-9, "{k}");
}

#[test]
fn bin_llr_matches_direct_integration() {
    let sigma2 = 0.8;
    let sd = f64::sqrt(sigma2);
    for (u, v) in [(0.0, 0.3), (0.25, 1.1), (-0.4, 0.9), (1.5, 2.5), (-2.0, -1.2)] {
        let plus = simpson(|y| gauss(y, 1.0, sd), u, v, 20_000);
        let minus = simpson(|y| gauss(y, -1.0, sd), u, v, 20_000);
        let oracle = (plus / minus).ln();
        let got = bin_llr(sigma2, u, v).unwrap();
        assert!((got - oracle).abs() < 1e-8, "[{u},{v}): {got} vs {oracle}");
    }
    for a in [0.1, 1.0, 3.0] {
        assert!(bin_llr(sigma2, -a, a).unwrap().abs() < 1e-8);
    }
}

#[test]
fn tail_llr_overshoot_is_two_mu_over_t() {
    // Mills ratio: ℓ_tail(t) − t → 2μ/t for large t, μ = 2/σ².
    let t = 50.0;
    let excess = tail_llr_at(1.0, t).unwrap() - t;
    let predicted = 2.0 * 2.0 / t;
    assert!((excess / predicted - 1.0).abs() < 0.05, "{excess} vs {predicted}");
}

#[test]
fn lattice_sampling_frequencies_within_four_sigma() {
    let ch = bsc_channel(0.11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 200_000;
    for input in [Input::Plus, Input::Minus] {
        let mut hits = std::collections::HashMap::new();
        for _ in 0..n {
            *hits.entry(ch.sample(input, &mut rng)).or_insert(0u64) += 1;
        }
        for &k in ch.labels() {
            let p = ch.prob(input, k);
            let expected = p * n as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            let got = *hits.get(&k).unwrap_or(&0) as f64;
            assert!((got - expected).abs() <= 4.0 * sd.max(1.0), "label {k}: {got} vs {expected}");
        }
    }
}

#[test]
fn designed_capacity_increases_with_levels() {
    let mut last = 0.0;
    for b in [3u32, 5, 7, 11, 15, 21, 31] {
        let d = design_quantizer(1.0, b, DesignOptions::default()).unwrap();
        assert!(d.induced_capacity > last, "B={b}");
        last = d.induced_capacity;
    }
    let c = AwgnChannel::new(1.0).unwrap().capacity().unwrap();
    let three = design_quantizer(1.0, 3, DesignOptions::default()).unwrap();
    assert!(three.induced_capacity < c);
    assert!(last < c);
}

#[test]
fn threshold_geometry_constant_at_b101() {
    // a_k = (k − ½)δ + O((1 + T_B)δ²) uniformly in k; the fitted constant is pinned.
    let d = design_quantizer(1.0, 101, DesignOptions::default()).unwrap();
    let c = d
        .llr_thresholds()
        .iter()
        .enumerate()
        .map(|(i, a)| (a - (i as f64 + 0.5) * d.delta).abs() / ((1.0 + d.t_b) * d.delta * d.delta))
        .fold(0.0f64, f64::max);
    assert!((c - 0.4848).abs() < 5e-3, "{c}");
    assert!(c < 1.0);
}

/// Best capacity at fixed (δ, T ≈ 14) over tails near the self-consistent one.
fn fixed_t_loss(delta: f64) -> f64 {
    let t = 14.0;
    let l = (t / delta + 0.5).round() as u32;
    let target = tail_llr_at(1.0, (l as f64 - 0.5) * delta).unwrap();
    let centre = (target / delta).round() as u32;
    let best = (centre.saturating_sub(2).max(l)..=centre + 2)
        .filter_map(|lt| capacity_at(1.0, delta, lt, 2 * l + 1).map(|c| c.0))
        .fold(f64::NEG_INFINITY, f64::max);
    AwgnChannel::new(1.0).unwrap().capacity().unwrap() - best
}

#[test]
fn loss_is_quadratic_in_delta_with_negligible_tail() {
    let kappa = AwgnChannel::new(1.0).unwrap().kappa().unwrap();
    let deltas = [0.4, 0.3, 0.2, 0.15, 0.1];
    let losses: Vec<f64> = deltas.iter().map(|&d| fixed_t_loss(d)).collect();
    for (d, loss) in deltas.iter().zip(&losses) {
        let lead = kappa * d * d / 24.0;
        assert!((loss / lead - 1.0).abs() < 0.01, "δ={d}: {loss} vs {lead}");
    }
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = losses.iter().map(|l| l.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn designed_loss_positive_and_decreasing() {
    let mut last = f64::INFINITY;
    for b in [25u32, 51, 101] {
        let d = design_quantizer(1.0, b, DesignOptions::default()).unwrap();
        let r = capacity_loss_report(&d).unwrap();
        assert!(r.exact_loss > 0.0 && r.exact_loss < last, "B={b}");
        last = r.exact_loss;
    }
}

#[test]
fn bsc_ruin_series_converges_to_odds() {
    let est = spitzer_psi0(&RuinProvider::Bsc { crossover: 0.2 }, SpitzerControl::default()).unwrap();
    assert!((est.psi0 - 0.25).abs() < 1e-6);
    assert!(est.tail_bound < 1e-10);
}
