//! Confidence of an answer completion from its token log-probabilities.

use crate::domain::Aggregation;
use crate::error::{Error, Result};

/// Correctly rounded sum (Shewchuk's exact partials with a final half-even fix-up).
/// The result depends only on the multiset of inputs, never on their order.
pub fn fsum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Smallest positive f64; `s` never reaches zero even when `exp(f)` underflows.
pub const S_FLOOR: f64 = f64::from_bits(1);

/// Returns `(f, s)`: `f` aggregates the log-probabilities, `s = exp(f)` in `(0, 1]`.
pub fn confidence_score(token_logprobs: &[f64], aggregation: Aggregation) -> Result<(f64, f64)> {
    if token_logprobs.is_empty() {
        return Err(Error::NoTokens);
    }
    let sum = fsum(token_logprobs).min(0.0);
    let f = match aggregation {
        Aggregation::Sum => sum,
        Aggregation::Mean => sum / token_logprobs.len() as f64,
    };
    Ok((f, f.exp().clamp(S_FLOOR, 1.0)))
}
