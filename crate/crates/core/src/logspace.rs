//! Log-space arithmetic with `-inf` as the absorbing zero.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^x`, `-inf` for an empty or all-`-inf` slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(row);
    row.iter().map(|&x| x - z).collect()
}
