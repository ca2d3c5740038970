//! Stable log-domain arithmetic for the partition-function recursions.

use std::f64::consts::LN_2;

/// log(exp(a) + exp(b)) without overflow.
#[inline]
pub fn logsumexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Streaming log-sum-exp accumulator with a running maximum.
///
/// Terms are accumulated in the order they are pushed, so a fixed iteration
/// order gives bit-identical results.
#[derive(Clone, Copy, Debug)]
pub struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    #[inline]
    pub fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, term: f64) {
        if term == f64::NEG_INFINITY {
            return;
        }
        if term <= self.max {
            self.sum += (term - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - term).exp() + 1.0;
            self.max = term;
        }
    }

    /// log of the accumulated sum; -inf when nothing was pushed.
    #[inline]
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

/// log((1 + exp(x)) / 2), stable for any x.
#[inline]
pub fn log_half_one_plus_exp(x: f64) -> f64 {
    if x <= 0.0 {
        x.exp().ln_1p() - LN_2
    } else {
        x + (-x).exp().ln_1p() - LN_2
    }
}

/// Neumaier compensated summation; deterministic for a fixed slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
