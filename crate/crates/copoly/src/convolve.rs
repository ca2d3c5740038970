//! Plain-domain renewal-type recursions
//! `f[n] = source[n] + sum_{g=1}^{n} kernel[g] * f[n-g]`.
//!
//! Everything the crate feeds through here (renewal mass functions, pinning
//! sums, tilted-annealed recursions, weighted excursion sums) has a
//! non-negative kernel of total mass at most 1 and values in [0, 1], which
//! keeps the FFT path numerically benign.
//!
//! Two engines share the contract: a direct O(n^2) reference and a
//! divide-and-conquer FFT solver (O(n log^2 n)) for large tables. The FFT
//! solver propagates the already-solved left half of each window into the
//! right half with one multiplication per window, recursing on both halves;
//! kernel transforms are cached per window size.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::Arc;

/// Below this length `solve` uses the direct engine.
pub const EXACT_CUTOFF: usize = 8192;

// leaf size of the divide-and-conquer recursion
const BASE: usize = 128;

#[inline]
fn kernel_at(kernel: &[f64], g: usize) -> f64 {
    if g < kernel.len() {
        kernel[g]
    } else {
        0.0
    }
}

/// Direct O(n^2) reference engine. `kernel[0]` is ignored.
pub fn solve_exact(kernel: &[f64], source: &[f64]) -> Vec<f64> {
    let n = source.len();
    let mut f = source.to_vec();
    for m in 1..n {
        let gmax = m.min(kernel.len().saturating_sub(1));
        let mut acc = f[m];
        for g in 1..=gmax {
            acc += kernel[g] * f[m - g];
        }
        f[m] = acc;
    }
    f
}

struct FftCtx {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
    // transform of kernel[1..span], keyed by span
    kernel_fft: HashMap<usize, Vec<Complex<f64>>>,
}

impl FftCtx {
    fn new() -> Self {
        FftCtx {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
            kernel_fft: HashMap::new(),
        }
    }

    fn forward_plan(&mut self, len: usize) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.forward
            .entry(len)
            .or_insert_with(|| planner.plan_fft_forward(len))
            .clone()
    }

    fn inverse_plan(&mut self, len: usize) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.inverse
            .entry(len)
            .or_insert_with(|| planner.plan_fft_inverse(len))
            .clone()
    }

    fn kernel_transform(&mut self, kernel: &[f64], span: usize, fft_len: usize) -> Vec<Complex<f64>> {
        if let Some(cached) = self.kernel_fft.get(&span) {
            return cached.clone();
        }
        let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
        for (x, slot) in buf.iter_mut().enumerate().take(span.saturating_sub(1)) {
            slot.re = kernel_at(kernel, x + 1);
        }
        self.forward_plan(fft_len).process(&mut buf);
        self.kernel_fft.insert(span, buf.clone());
        buf
    }
}

/// Divide-and-conquer FFT engine; same contract as [`solve_exact`].
pub fn solve_fft(kernel: &[f64], source: &[f64]) -> Vec<f64> {
    let n = source.len();
    if n <= BASE {
        return solve_exact(kernel, source);
    }
    let padded = n.next_power_of_two();
    let mut f = vec![0.0; padded];
    f[..n].copy_from_slice(source);
    let mut ctx = FftCtx::new();
    cdq(&mut f, kernel, 0, padded, &mut ctx);
    f.truncate(n);
    for v in f.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    f
}

fn cdq(f: &mut [f64], kernel: &[f64], lo: usize, hi: usize, ctx: &mut FftCtx) {
    let span = hi - lo;
    if span <= BASE {
        for m in lo..hi {
            let mut acc = f[m];
            for g in 1..=(m - lo) {
                acc += kernel_at(kernel, g) * f[m - g];
            }
            f[m] = acc;
        }
        return;
    }
    let mid = lo + span / 2;
    cdq(f, kernel, lo, mid, ctx);

    // propagate f[lo..mid) * kernel[1..span) into f[mid..hi)
    let half = span / 2;
    let fft_len = 2 * span;
    let kfft = ctx.kernel_transform(kernel, span, fft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for i in 0..half {
        buf[i].re = f[lo + i];
    }
    ctx.forward_plan(fft_len).process(&mut buf);
    for (b, k) in buf.iter_mut().zip(kfft.iter()) {
        *b *= *k;
    }
    ctx.inverse_plan(fft_len).process(&mut buf);
    let scale = 1.0 / fft_len as f64;
    // product index s contributes to f[lo + 1 + s]
    for t in mid..hi {
        f[t] += buf[t - lo - 1].re * scale;
    }

    cdq(f, kernel, mid, hi, ctx);
}

/// Dispatching solver: direct up to [`EXACT_CUTOFF`], FFT beyond.
pub fn solve(kernel: &[f64], source: &[f64]) -> Vec<f64> {
    if source.len() <= EXACT_CUTOFF {
        solve_exact(kernel, source)
    } else {
        solve_fft(kernel, source)
    }
}

/// Convenience: unit source at the origin (renewal-style boundary f[0] = 1).
pub fn solve_unit_source(kernel: &[f64], len: usize) -> Vec<f64> {
    let mut source = vec![0.0; len];
    if len > 0 {
        source[0] = 1.0;
    }
    solve(kernel, &source)
}
