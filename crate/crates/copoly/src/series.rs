//! Partial sums and certified bounds for power series `sum n^{-s}`.

use crate::{Error, Result};

/// Bracket on a convergent series value: `lower <= true value <= upper`.
#[derive(Clone, Copy, Debug)]
pub struct SeriesBracket {
    pub lower: f64,
    pub upper: f64,
}

// direct summation below this point, Euler-Maclaurin beyond
const EM_CUTOFF: usize = 10_000;

/// `sum_{m >= start} m^{-s}` for s > 1, accurate to ~1e-14 relative.
///
/// Direct summation up to a cutoff, then an Euler-Maclaurin expansion whose
/// truncation error at the cutoff is far below f64 resolution.
pub fn power_tail_sum(s: f64, start: usize) -> Result<f64> {
    if s <= 1.0 {
        return Err(Error::DivergentSeries(s));
    }
    debug_assert!(start >= 1);
    let pivot = start.max(EM_CUTOFF);
    let mut head = 0.0;
    let mut comp = 0.0;
    for m in start..pivot {
        let v = (m as f64).powf(-s);
        let t = head + v;
        comp += if head.abs() >= v.abs() {
            (head - t) + v
        } else {
            (v - t) + head
        };
        head = t;
    }
    Ok(head + comp + euler_maclaurin_tail(s, pivot as f64))
}

/// Euler-Maclaurin tail `sum_{m >= pivot} m^{-s}` with three correction terms.
fn euler_maclaurin_tail(s: f64, pivot: f64) -> f64 {
    let p = pivot;
    p.powf(1.0 - s) / (s - 1.0) + 0.5 * p.powf(-s) + s * p.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * p.powf(-s - 3.0) / 720.0
}

/// Certified bracket on `zeta(s) = sum_{n >= 1} n^{-s}` for s > 1.
///
/// The lower bound is a plain partial sum; the upper bound adds the integral
/// majorant of the dropped tail, `int_{T}^{inf} x^{-s} dx` with `T` one below
/// the first dropped index. Both bounds are rigorous up to rounding.
pub fn zeta_bracket(s: f64, terms: usize) -> Result<SeriesBracket> {
    if s <= 1.0 {
        return Err(Error::DivergentSeries(s));
    }
    debug_assert!(terms >= 2);
    let mut partial = 0.0;
    let mut comp = 0.0;
    for n in 1..=terms {
        let v = (n as f64).powf(-s);
        let t = partial + v;
        comp += if partial.abs() >= v.abs() {
            (partial - t) + v
        } else {
            (v - t) + partial
        };
        partial = t;
    }
    let lower = partial + comp;
    let tail_majorant = (terms as f64).powf(1.0 - s) / (s - 1.0);
    Ok(SeriesBracket {
        lower,
        upper: lower + tail_majorant,
    })
}
