//! Scalar numerical kernels: Gaussian tails in linear and log space,
//! Gauss–Hermite expectations over a standard normal, bracketed bisection
//! and golden-section search.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::sync::OnceLock;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// `ln(sqrt(2π))`.
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this many standard deviations tail masses are evaluated through
/// the Mills ratio instead of `erfc`.
const LOG_TAIL_SWITCH: f64 = 8.0;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Mills ratio (1 − Φ(x)) / φ(x) by its continued fraction; valid for x ≥ ~2.
fn mills_ratio(x: f64) -> f64 {
    // Lentz evaluation of 1 / (x + 1/(x + 2/(x + 3/(x + ...)))).
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let step = c * d;
        f *= step;
        if (step - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// ln(1 − Φ(x)).
pub fn log_std_normal_sf(x: f64) -> f64 {
    if x == f64::INFINITY {
        f64::NEG_INFINITY
    } else if x < LOG_TAIL_SWITCH {
        std_normal_sf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(x).ln()
    }
}

/// ln Φ(x).
pub fn log_std_normal_cdf(x: f64) -> f64 {
    log_std_normal_sf(-x)
}

/// ln(Φ(b) − Φ(a)) for a < b; either end may be infinite.
pub fn log_std_normal_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        let la = log_std_normal_sf(a);
        let lb = log_std_normal_sf(b);
        la + ln_one_minus_exp(lb - la)
    } else if b <= 0.0 {
        let la = log_std_normal_cdf(a);
        let lb = log_std_normal_cdf(b);
        lb + ln_one_minus_exp(la - lb)
    } else {
        // Straddles zero: the mass is at least min(Φ(b), 1 − Φ(a)) − 1/2 away
        // from cancellation trouble.
        (1.0 - std_normal_sf(b) - std_normal_cdf(a)).ln()
    }
}

/// ln(1 − e^x) for x ≤ 0.
pub fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable log-sum-exp of a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Gauss–Hermite rule for the weight e^{−x²}: nodes ascending, weights.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Builds the `n`-point rule. Nodes are eigenvalues of the Jacobi matrix
    /// (Sturm-count bisection), polished by Newton on the orthonormal
    /// recurrence; weights come from the Christoffel formula in log space so
    /// that the far nodes underflow to zero instead of overflowing.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let beta2: Vec<f64> = (1..n).map(|j| j as f64 / 2.0).collect();
        let bound = if n == 1 {
            1.0
        } else {
            2.0 * (n as f64 / 2.0).sqrt() + 1.0
        };
        let count_below = |x: f64| -> usize {
            let mut count = 0;
            let mut d = -x;
            if d < 0.0 {
                count += 1;
            }
            for b2 in &beta2 {
                let prev = if d == 0.0 { f64::EPSILON } else { d };
                d = -x - b2 / prev;
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };

        let mut nodes = vec![0.0; n];
        let half = n / 2;
        for idx in half..n {
            // idx-th eigenvalue (ascending) is sup{x : count_below(x) <= idx}.
            let (mut lo, mut hi) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) <= idx {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                    break;
                }
            }
            let mut x = 0.5 * (lo + hi);
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal_hermite(n, x);
                let deriv = (2.0 * n as f64).sqrt() * pn1;
                if deriv != 0.0 {
                    x -= pn / deriv;
                }
            }
            nodes[idx] = x;
        }
        for idx in 0..half {
            nodes[idx] = -nodes[n - 1 - idx];
        }
        if n % 2 == 1 {
            nodes[half] = 0.0;
        }

        let weights = nodes
            .iter()
            .map(|&x| {
                let (_, pn1, log_scale) = orthonormal_hermite(n, x);
                let log_w = -(n as f64).ln() - 2.0 * (pn1.abs().ln() + log_scale);
                log_w.exp()
            })
            .collect();
        Self { nodes, weights }
    }

    /// E[f(G)] for G ~ N(0, 1).
    pub fn expect_std_normal<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let scale = 1.0 / PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| if w == 0.0 { 0.0 } else { w * f(SQRT_2 * x) })
            .sum::<f64>()
            * scale
    }
}

/// Returns (p̃_n(x), p̃_{n−1}(x), log_scale) where the true values are the
/// returned ones times e^{log_scale}.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = PI.powf(-0.25);
    let mut log_scale = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let next = (2.0 / jf).sqrt() * x * p - ((jf - 1.0) / jf).sqrt() * p_prev;
        p_prev = p;
        p = next;
        if p.abs() > 1e150 {
            p *= 1e-150;
            p_prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (p, p_prev, log_scale)
}

const HERMITE_SIZES: [usize; 5] = [64, 128, 256, 512, 1024];

fn hermite_rule(slot: usize) -> &'static HermiteRule {
    static RULES: [OnceLock<HermiteRule>; 5] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    RULES[slot].get_or_init(|| HermiteRule::new(HERMITE_SIZES[slot]))
}

/// Stopping tolerance between successive node counts.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// E[f(G)] over a standard normal, doubling the Gauss–Hermite node count from
/// 64 to 1024 until two successive estimates agree to [`QUADRATURE_TOL`].
pub fn expect_std_normal<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    let mut prev = hermite_rule(0).expect_std_normal(&f);
    let mut residual = f64::INFINITY;
    for slot in 1..HERMITE_SIZES.len() {
        let cur = hermite_rule(slot).expect_std_normal(&f);
        residual = (cur - prev).abs();
        if residual < QUADRATURE_TOL {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNotConverged {
        nodes: HERMITE_SIZES[HERMITE_SIZES.len() - 1],
        residual,
    })
}

/// Bisection on a bracket `[lo, hi]` whose endpoint values have opposite
/// signs. Stops once |f| < `ftol` or the bracket collapses to rounding level.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, ftol: f64) -> (f64, f64) {
    let mut f_lo = f(lo);
    let mut best = (lo, f_lo);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid.abs() < ftol || mid <= lo || mid >= hi {
            return (mid, f_mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    best
}

/// Golden-section maximisation on `[a, b]`, to absolute tolerance `tol` in x.
/// Returns (argmax, max).
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Golden-section minimisation; thin wrapper over [`golden_max`].
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (x, v) = golden_max(|x| -f(x), a, b, tol);
    (x, -v)
}
