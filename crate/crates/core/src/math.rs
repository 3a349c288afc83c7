//! Scalar special functions and log-density helpers.
//!
//! Everything here goes through `libm` so the crate builds without `std`.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + exp(-x)
    } else if x < -35.0 {
        exp(x)
    } else {
        ln_1p(exp(x))
    }
}

/// Logistic function `1 / (1 + e^-x)`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// `ln Σ exp(x_i)`; returns `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(s)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Log density of `N(mean, 1/precision)` at `x`.
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (ln(precision) - LN_2PI - precision * d * d)
}

/// Log density of `Gamma(shape, rate)` at `x > 0`.
#[inline]
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * ln(rate) - ln_gamma(shape) + (shape - 1.0) * ln(x) - rate * x
}

/// `ln Γ(y + k) - ln Γ(k) - y ln k = Σ_{j<y} ln(1 + j/k)` for a count `y`.
///
/// Stays accurate when `k` is huge (the Poisson limit), where the plain
/// difference of log-gamma values loses every significant digit.
pub fn ln_rising_scaled(y: f64, k: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y <= 32.0 {
        let n = y as u64;
        let mut s = 0.0;
        for j in 1..n {
            s += ln_1p(j as f64 / k);
        }
        return s;
    }
    if y / k < 1e-3 {
        // Power sums of j = 0..y-1 feed the series of ln(1 + j/k).
        let n = y;
        let s1 = n * (n - 1.0) / 2.0;
        let s2 = (n - 1.0) * n * (2.0 * n - 1.0) / 6.0;
        let s3 = s1 * s1;
        let s4 = (n - 1.0) * n * (2.0 * n - 1.0) * (3.0 * n * n - 3.0 * n - 1.0) / 30.0;
        let inv = 1.0 / k;
        return inv * (s1 - inv * (s2 / 2.0 - inv * (s3 / 3.0 - inv * s4 / 4.0)));
    }
    ln_gamma(y + k) - ln_gamma(k) - y * ln(k)
}

/// Poisson log pmf with log mean `eta`.
#[inline]
pub fn poisson_ln_pmf(y: f64, eta: f64) -> f64 {
    y * eta - exp(eta) - ln_gamma(y + 1.0)
}

/// Negative binomial log pmf with log mean `eta` and log size `ln_k`,
/// success probability `k / (k + mu)`.
pub fn negbin_ln_pmf(y: f64, eta: f64, ln_k: f64) -> f64 {
    let k = exp(ln_k);
    ln_rising_scaled(y, k) - ln_gamma(y + 1.0) - (k + y) * softplus(eta - ln_k) + y * eta
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley step).
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    let x = if p < plow {
        let q = sqrt(-2.0 * ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = sqrt(-2.0 * ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = std_normal_cdf(x) - p;
    let u = e * sqrt(2.0 * core::f64::consts::PI) * exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_matches_log_gamma_difference() {
        for &(y, k) in &[(0.0, 2.0), (5.0, 0.3), (40.0, 2.5), (400.0, 7.0), (50.0, 1e6), (900.0, 3e9)] {
            let direct: f64 = (0..y as u64).map(|j| ln(k + j as f64)).sum::<f64>() - y * ln(k);
            let got = ln_rising_scaled(y, k);
            assert!((got - direct).abs() < 1e-8 * (1.0 + direct.abs()), "y={y} k={k}: {got} vs {direct}");
        }
    }

    #[test]
    fn negbin_tends_to_poisson() {
        for &y in &[0.0, 1.0, 7.0, 33.0] {
            let nb = negbin_ln_pmf(y, 1.7, 40.0);
            let po = poisson_ln_pmf(y, 1.7);
            assert!((nb - po).abs() < 1e-9);
        }
    }

    #[test]
    fn negbin_pmf_sums_to_one() {
        let (eta, ln_k) = (ln(6.0), ln(0.7));
        let total: f64 = (0..4000).map(|y| exp(negbin_ln_pmf(y as f64, eta, ln_k))).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.975, 0.999_9] {
            assert!((std_normal_cdf(std_normal_quantile(p)) - p).abs() < 1e-13);
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + ln(2.0))).abs() < 1e-12);
    }
}
