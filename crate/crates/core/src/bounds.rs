//! Closed-form sample-size and error relations used to size experiments and
//! to log worst-case query counts next to the measured ones.

/// `xi = sqrt(l_F l_G) / (sqrt(dA^2 dB^2 + 4 dB^2 + 4 dA^2) dA dB)`.
pub fn chi1_xi(lambda_f: f64, lambda_g: f64, d_a: usize, d_b: usize) -> f64 {
    let (a, b) = (d_a as f64, d_b as f64);
    libm::sqrt(lambda_f * lambda_g) / (libm::sqrt(a * a * b * b + 4.0 * b * b + 4.0 * a * a) * a * b)
}

fn outcome_terms(d_a: usize, d_b: usize) -> f64 {
    let (a, b) = (d_a as f64, d_b as f64);
    a * a * b * b + a * a + b * b
}

/// Failure probability `kappa(eps) = 2 (dA^2 dB^2 + dA^2 + dB^2) exp(-2 xi^2 eps^2 N)`
/// of the chi_1 estimator.
pub fn chi1_kappa(eps: f64, shots: u64, d_a: usize, d_b: usize, xi: f64) -> f64 {
    2.0 * outcome_terms(d_a, d_b) * libm::exp(-2.0 * xi * xi * eps * eps * shots as f64)
}

/// The `eps` at which [`chi1_kappa`] equals `kappa`.
pub fn chi1_eps(kappa: f64, shots: u64, d_a: usize, d_b: usize, xi: f64) -> f64 {
    let num = libm::log(2.0 * outcome_terms(d_a, d_b) / kappa);
    libm::sqrt(num / (2.0 * xi * xi * shots as f64))
}

/// Shots for which [`chi1_kappa`] at `eps` drops to `kappa`.
pub fn chi1_shots(eps: f64, kappa: f64, d_a: usize, d_b: usize, xi: f64) -> u64 {
    let num = libm::log(2.0 * outcome_terms(d_a, d_b) / kappa);
    libm::ceil(num / (2.0 * xi * xi * eps * eps)) as u64
}

/// Unit-constant version of the total-order sample size
/// `dA^4 dB^4 lambda^-2 chi_min^-2 ln(n dA dB / kappa)`.
pub fn totalorder_shots(n: usize, d_a: usize, d_b: usize, lambda_min: f64, chi_min: f64, kappa: f64) -> u64 {
    let (a, b) = (d_a as f64, d_b as f64);
    let log = libm::log(n as f64 * a * b / kappa).max(1.0);
    libm::ceil(libm::pow(a * b, 4.0) / (lambda_min * lambda_min * chi_min * chi_min) * log) as u64
}

/// Threshold `delta = lambda eps0^4 / (4 (4n-6)^4 dM dA^5)` that makes the
/// last-tooth recursion accurate to `eps0` in trace norm (`n >= 2`).
pub fn general_delta(lambda_min: f64, eps0: f64, n: usize, d_m: usize, d_a: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let c = (4 * n - 6) as f64;
    Some(lambda_min * libm::pow(eps0, 4.0) / (4.0 * libm::pow(c, 4.0) * d_m as f64 * libm::pow(d_a as f64, 5.0)))
}

/// Inverse of [`general_delta`].
pub fn general_eps0(lambda_min: f64, delta: f64, n: usize, d_m: usize, d_a: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let c = (4 * n - 6) as f64;
    Some(libm::pow(
        delta * 4.0 * libm::pow(c, 4.0) * d_m as f64 * libm::pow(d_a as f64, 5.0) / lambda_min,
        0.25,
    ))
}

/// Worst-case SWAP tests of the last-tooth recursion: `n` rounds of at most
/// `n^2` candidate pairs, each using `2 d^2 - 1` tests.
pub fn general_worst_case_swap_tests(n: usize, d_a: usize) -> u64 {
    let n = n as u64;
    n * n * n * (2 * (d_a * d_a) as u64 - 1)
}

/// The `2 n dA^2` SWAP-test count used for the union bound of the
/// last-tooth recursion.
pub fn general_union_bound_swap_tests(n: usize, d_a: usize) -> u64 {
    2 * (n * d_a * d_a) as u64
}

/// Value of `n^11 dA^12 dM^2 eps0^-8 lambda^-2 ln(n dA / kappa0)` (unit constant).
pub fn general_query_order(n: usize, d_a: usize, d_m: usize, eps0: f64, lambda_min: f64, kappa0: f64) -> f64 {
    let (nf, a, m) = (n as f64, d_a as f64, d_m as f64);
    libm::pow(nf, 11.0) * libm::pow(a, 12.0) * m * m * libm::pow(eps0, -8.0) / (lambda_min * lambda_min)
        * libm::log(nf * a / kappa0).max(1.0)
}
