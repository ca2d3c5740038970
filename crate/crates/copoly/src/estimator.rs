//! Monte-Carlo free energy, critical-point bisection and slope tables,
//! plus the exact renewal functionals used as cross-checks (conditioned
//! excursion expectations, last-renewal ratios, the uniform negative-time
//! law of the simple random walk).

use crate::convolve;
use crate::disorder::sample_replica;
use crate::partition::{quenched_table_shifted, ModelParams};
use crate::renewal::{renewal_mass, InterArrivalLaw};
use crate::{Error, Result, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Monte-Carlo estimate of the quenched free energy `(1/N) E log Z`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub lambda: f64,
    pub h: f64,
    pub schema_version: u32,
}

/// Sample mean and standard error of `(1/n) log Z` over disorder replicas.
///
/// Replica `r` uses the disorder stream `(seed, r)`, so two calls with the
/// same seed see identical noise regardless of `params` (common random
/// numbers across parameter scans) and of the worker count.
pub fn quenched_free_energy(
    law: &InterArrivalLaw,
    params: &ModelParams,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    if replicas < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicas, got {replicas}"
        )));
    }
    law.check_size(n)?;
    let values: Result<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let omega = sample_replica(seed, r as u64, n, None);
            let table = quenched_table_shifted(law, &omega, params, 0, n)?;
            Ok(table[n] / n as f64)
        })
        .collect();
    let values = values?;
    let mean = values.iter().sum::<f64>() / replicas as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (replicas - 1) as f64;
    Ok(FreeEnergyEstimate {
        value: mean,
        stderr: (var / replicas as f64).sqrt(),
        n,
        replicas,
        seed,
        lambda: params.lambda,
        h: params.h,
        schema_version: SCHEMA_VERSION,
    })
}

/// Annealed free energy `2 lambda (lambda - h) 1{h < lambda}`.
pub fn annealed_free_energy(lambda: f64, h: f64) -> f64 {
    if h < lambda {
        2.0 * lambda * (lambda - h)
    } else {
        0.0
    }
}

/// Phase verdict of one free-energy probe against the threshold band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Localized,
    Delocalized,
    Indeterminate,
}

/// One bisection probe.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HProbe {
    pub h: f64,
    pub n_used: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub verdict: Verdict,
}

/// Outcome of the critical-point bisection in `h`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalHResult {
    /// Midpoint of the final bracket; absent when an indeterminate probe
    /// exhausted the refinement budget before the bracket closed.
    pub h_hat: Option<f64>,
    pub bracket: (f64, f64),
    pub threshold: f64,
    pub lambda: f64,
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub tol: f64,
    pub diagnostics: Vec<HProbe>,
    pub schema_version: u32,
}

// refinement budget: how many times n may double on an indeterminate probe
const MAX_REFINES: usize = 2;

/// Bisects `h` on `[0, lambda]` for the free-energy sign change.
///
/// A probe is localized when the estimate clears `threshold + 3 stderr`,
/// delocalized below `threshold - 3 stderr`, and otherwise the system size
/// doubles (up to two times) before the search gives up and returns the
/// open bracket. `threshold = None` uses 10x the pilot standard error at
/// `h = lambda/2`. All probes share the master seed (common random numbers).
pub fn critical_h(
    law: &InterArrivalLaw,
    lambda: f64,
    n: usize,
    replicas: usize,
    threshold: Option<f64>,
    tol: f64,
    seed: u64,
) -> Result<CriticalHResult> {
    if !(lambda >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda}, tol = {tol}"
        )));
    }
    let mut diagnostics = Vec::new();
    if lambda == 0.0 {
        // free energy is (1/n) log u(n) <= 0 for every h: delocalized at 0
        return Ok(CriticalHResult {
            h_hat: Some(0.0),
            bracket: (0.0, 0.0),
            threshold: 0.0,
            lambda,
            n,
            replicas,
            seed,
            tol,
            diagnostics,
            schema_version: SCHEMA_VERSION,
        });
    }

    let pilot = quenched_free_energy(
        law,
        &ModelParams::new(lambda, 0.5 * lambda)?,
        n,
        replicas,
        seed,
    )?;
    let threshold = match threshold {
        Some(t) => {
            if t <= pilot.stderr {
                return Err(Error::ThresholdTooSmall {
                    threshold: t,
                    stderr: pilot.stderr,
                });
            }
            t
        }
        None => 10.0 * pilot.stderr,
    };

    let mut lo = 0.0f64;
    let mut hi = lambda;
    let mut n_used = n;
    let mut budget = MAX_REFINES;
    while hi - lo > tol {
        let h = 0.5 * (lo + hi);
        let est = quenched_free_energy(
            law,
            &ModelParams::new(lambda, h)?,
            n_used,
            replicas,
            seed,
        )?;
        let verdict = if est.value > threshold + 3.0 * est.stderr {
            Verdict::Localized
        } else if est.value < threshold - 3.0 * est.stderr {
            Verdict::Delocalized
        } else {
            Verdict::Indeterminate
        };
        diagnostics.push(HProbe {
            h,
            n_used,
            estimate: est.value,
            stderr: est.stderr,
            verdict,
        });
        match verdict {
            Verdict::Localized => lo = h,
            Verdict::Delocalized => hi = h,
            Verdict::Indeterminate => {
                if budget == 0 || 2 * n_used > law.n_max() {
                    return Ok(CriticalHResult {
                        h_hat: None,
                        bracket: (lo, hi),
                        threshold,
                        lambda,
                        n,
                        replicas,
                        seed,
                        tol,
                        diagnostics,
                        schema_version: SCHEMA_VERSION,
                    });
                }
                budget -= 1;
                n_used *= 2;
            }
        }
    }
    Ok(CriticalHResult {
        h_hat: Some(0.5 * (lo + hi)),
        bracket: (lo, hi),
        threshold,
        lambda,
        n,
        replicas,
        seed,
        tol,
        diagnostics,
        schema_version: SCHEMA_VERSION,
    })
}

/// One row of a critical-slope table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeRow {
    pub lambda: f64,
    pub h_hat: Option<f64>,
    pub slope: Option<f64>,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
}

/// Runs [`critical_h`] for each coupling with a shared protocol. Row `i`
/// uses seed `seed + i` so rows stay independent but reproducible.
pub fn slope_table(
    law: &InterArrivalLaw,
    lambdas: &[f64],
    n: usize,
    replicas: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<SlopeRow>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let run = critical_h(law, lambda, n, replicas, None, tol, seed + i as u64)?;
            Ok(SlopeRow {
                lambda,
                h_hat: run.h_hat,
                slope: run.h_hat.map(|h| if lambda > 0.0 { h / lambda } else { 0.0 }),
                bracket_lo: run.bracket.0,
                bracket_hi: run.bracket.1,
                n,
                replicas,
                seed: run.seed,
            })
        })
        .collect()
}

/// CSV for slope tables: `lambda,hc,hc_over_lambda,bracket_lo,bracket_hi`.
pub fn write_slope_csv(rows: &[SlopeRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "lambda,hc,hc_over_lambda,bracket_lo,bracket_hi")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.lambda,
            r.h_hat.map_or(String::new(), |v| v.to_string()),
            r.slope.map_or(String::new(), |v| v.to_string()),
            r.bracket_lo,
            r.bracket_hi
        )?;
    }
    Ok(())
}

/// Conditioned excursion-weight expectation
/// `E[prod (1 + e^{-(q/n) gap}) / 2 | n in tau]`, evaluated as `V_q(n)/u(n)`
/// where `V_q` runs the weighted renewal recursion.
pub fn excursion_expectation(law: &InterArrivalLaw, q: f64, n: usize) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::InvalidParameter(format!("q = {q}")));
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    if n == 0 || (law.period() == 2 && n % 2 == 1) {
        return Err(Error::NullConditioning(n));
    }
    let p = law.period();
    let len = n / p;
    let rate = q / n as f64;
    let mut plain = vec![0.0; len + 1];
    let mut weighted = vec![0.0; len + 1];
    for g_sub in 1..=len {
        let g = (p * g_sub) as f64;
        plain[g_sub] = law.mass(p * g_sub);
        weighted[g_sub] = plain[g_sub] * 0.5 * (1.0 + (-rate * g).exp());
    }
    let u = convolve::solve_unit_source(&plain, len + 1);
    let v = convolve::solve_unit_source(&weighted, len + 1);
    if u[len] <= 0.0 {
        return Err(Error::NullConditioning(n));
    }
    Ok(v[len] / u[len])
}

/// Ratio of the conditional to unconditional law of the last renewal point
/// in the first half: numerator `sum_{j=n/2+1}^{n} K(j-i) u(n-j) / u(n)`,
/// denominator `Kbar(n/2 + 1 - i)`.
pub fn last_renewal_ratio(law: &InterArrivalLaw, n: usize, i: usize) -> Result<f64> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "need even n >= 2, got {n}"
        )));
    }
    if i > n / 2 {
        return Err(Error::InvalidParameter(format!("i = {i} > n/2")));
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let u = renewal_mass(law, n)?;
    if u.u(i) == 0.0 {
        return Err(Error::NullConditioning(i));
    }
    if u.u(n) == 0.0 {
        return Err(Error::NullConditioning(n));
    }
    let mut numerator = 0.0;
    for j in (n / 2 + 1)..=n {
        numerator += law.mass(j - i) * u.u(n - j);
    }
    numerator /= u.u(n);
    let denominator = law.tail(n / 2 + 1 - i);
    Ok(numerator / denominator)
}

/// Distribution of the number of negative-signed sites of a simple random
/// walk bridge: `P[#{n <= N: sign(S_n) = -1} = 2i | N in tau]` for
/// `i = 0..=N/2`. A site at height zero inherits the sign of the excursion
/// it closes. The law is uniform, `1/((N/2)+1)` per entry.
pub fn srw_negative_time_law(n: usize) -> Result<Vec<f64>> {
    if n % 2 != 0 {
        return Err(Error::OddSizeForPeriodTwo(n));
    }
    if n == 0 || n > 512 {
        return Err(Error::InvalidParameter(format!(
            "need even n in 2..=512 (cubic-cost recursion), got {n}"
        )));
    }
    let width = 2 * n + 1;
    let center = n;
    // state[(x, c)] = probability of height x - center with c negative sites
    let mut cur = vec![0.0f64; width * (n + 1)];
    let mut next = vec![0.0f64; width * (n + 1)];
    cur[center * (n + 1)] = 1.0;
    for step in 1..=n {
        next.iter_mut().for_each(|v| *v = 0.0);
        let reach = step - 1;
        for x in (center - reach)..=(center + reach) {
            for c in 0..step {
                let v = cur[x * (n + 1) + c];
                if v == 0.0 {
                    continue;
                }
                for to in [x - 1, x + 1] {
                    let negative = match to.cmp(&center) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => x < center,
                    };
                    next[to * (n + 1) + c + negative as usize] += 0.5 * v;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let at_zero = &cur[center * (n + 1)..(center + 1) * (n + 1)];
    let total: f64 = at_zero.iter().sum();
    // negative-site counts of a bridge are even
    for (c, &v) in at_zero.iter().enumerate() {
        if c % 2 == 1 {
            debug_assert!(v == 0.0, "odd count {c} carries mass {v}");
        }
    }
    Ok((0..=n / 2).map(|i| at_zero[2 * i] / total).collect())
}
