//! Log-domain partition-function engines.
//!
//! The quenched recursion accumulates `Z[m] = sum_j Z[j] K(m-j) phi((j, m])`
//! in natural-log arithmetic (the values grow like `exp(c N)` while `K(N)`
//! underflows, so neither plain domain works at scale). The annealed and
//! tilted-annealed recursions have deterministic excursion weights and are
//! solved exactly in plain domain after an exponential rescaling that keeps
//! every intermediate in `(0, 1]`.

use crate::convolve;
use crate::disorder::DisorderSample;
use crate::logspace::{log_half_one_plus_exp, logsumexp, LogSum};
use crate::renewal::InterArrivalLaw;
use crate::{Error, Result, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Coupling strength and asymmetry of the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub h: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, h: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
        }
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("h = {h}")));
        }
        Ok(ModelParams { lambda, h })
    }

    /// Parameters on the slope line `h = rho * lambda`.
    pub fn from_slope(lambda: f64, rho: f64) -> Result<Self> {
        Self::new(lambda, rho * lambda)
    }

    /// Annealed free energy `2 lambda (lambda - h) 1{h < lambda}`.
    pub fn annealed_rate(&self) -> f64 {
        if self.h < self.lambda {
            2.0 * self.lambda * (self.lambda - self.h)
        } else {
            0.0
        }
    }

    /// `2 lambda (lambda - h)` without the positive-part clamp.
    fn growth_rate(&self) -> f64 {
        2.0 * self.lambda * (self.lambda - self.h)
    }
}

/// Which recursion produced a table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Quenched,
    Annealed,
    TiltedAnnealed,
}

/// `log Z` for every system size up to N (natural log; -inf marks sizes of
/// zero mass, i.e. odd sizes under a period-2 law).
#[derive(Clone, Debug)]
pub struct LogPartitionTable {
    pub kind: TableKind,
    pub params: ModelParams,
    /// Seed of the disorder sample (quenched tables only).
    pub seed: Option<u64>,
    log_z: Vec<f64>,
}

impl LogPartitionTable {
    #[inline]
    pub fn log_z(&self, n: usize) -> f64 {
        self.log_z[n]
    }

    pub fn len(&self) -> usize {
        self.log_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_z.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.log_z
    }

    /// CSV columns `(n, log_z)`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(w, "n,log_z")?;
        for (n, v) in self.log_z.iter().enumerate() {
            writeln!(w, "{n},{v}")?;
        }
        Ok(())
    }
}

/// Excursion weight `phi(I) = (1 + exp(-2 lambda h |I| - 2 lambda sum)) / 2`
/// with `phi(empty) = 1`.
#[inline]
pub fn phi(len: usize, omega_sum: f64, params: &ModelParams) -> f64 {
    if len == 0 {
        return 1.0;
    }
    let x = -2.0 * params.lambda * params.h * len as f64 - 2.0 * params.lambda * omega_sum;
    0.5 * (1.0 + x.exp())
}

/// `ln phi(I)`, stable for any exponent size.
#[inline]
pub fn log_phi(len: usize, omega_sum: f64, params: &ModelParams) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let x = -2.0 * params.lambda * params.h * len as f64 - 2.0 * params.lambda * omega_sum;
    log_half_one_plus_exp(x)
}

/// Quenched log-partition table over a shifted disorder window: disorder
/// site `i` of the segment reads `omega_{offset+i}`. Shared by the full-table
/// entry point (offset 0) and the coarse-graining segment evaluator.
pub(crate) fn quenched_table_shifted(
    law: &InterArrivalLaw,
    sample: &DisorderSample,
    params: &ModelParams,
    offset: usize,
    n: usize,
) -> Result<Vec<f64>> {
    if offset + n > sample.len() {
        return Err(Error::IndexOutOfRange {
            a: offset,
            b: offset + n,
            n: sample.len(),
        });
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let p = law.period();
    let prefix = sample.prefix();
    let log_k = law.log_masses();
    let two_lh = 2.0 * params.lambda * params.h;
    let two_l = 2.0 * params.lambda;
    let mut lz = vec![f64::NEG_INFINITY; n + 1];
    lz[0] = 0.0;
    let mut m = p;
    while m <= n {
        let pm = prefix[offset + m];
        let mut acc = LogSum::new();
        let mut j = 0;
        while j < m {
            let gap = m - j;
            let x = -two_lh * gap as f64 - two_l * (pm - prefix[offset + j]);
            acc.push(lz[j] + log_k[gap] + log_half_one_plus_exp(x));
            j += p;
        }
        lz[m] = acc.value();
        m += p;
    }
    Ok(lz)
}

/// Quenched log-partition table `log Z[0..=n]` by the O(n^2) log-sum-exp
/// renewal recursion. Odd sizes under a period-2 law are -inf; requesting an
/// odd final size is an error.
pub fn quenched_log_z(
    law: &InterArrivalLaw,
    sample: &DisorderSample,
    params: &ModelParams,
    n: usize,
) -> Result<LogPartitionTable> {
    law.check_size(n)?;
    let log_z = quenched_table_shifted(law, sample, params, 0, n)?;
    Ok(LogPartitionTable {
        kind: TableKind::Quenched,
        params: *params,
        seed: Some(sample.seed()),
        log_z,
    })
}

/// Banded quenched table with a certified error bound.
///
/// Gaps longer than `band` are dropped from the recursion, which makes the
/// cost O(n band). Alongside the (lower-bound) banded table the routine
/// accumulates a rigorous log-domain upper bound on everything dropped: each
/// omitted term is majorized by the largest out-of-band kernel value times an
/// excursion weight evaluated at the most favorable prefix seen so far. The
/// true value is sandwiched as
/// `log_z[m] <= true log Z[m] <= log_z_upper(m)`.
pub struct BandedQuenched {
    pub table: LogPartitionTable,
    /// log of the certified upper bound on the dropped mass, per size.
    pub log_err: Vec<f64>,
    pub band: usize,
}

impl BandedQuenched {
    /// Certified upper bound on `log Z[m]`.
    pub fn log_z_upper(&self, m: usize) -> f64 {
        logsumexp(self.table.log_z(m), self.log_err[m])
    }
}

pub fn quenched_log_z_banded(
    law: &InterArrivalLaw,
    sample: &DisorderSample,
    params: &ModelParams,
    n: usize,
    band: usize,
) -> Result<BandedQuenched> {
    law.check_size(n)?;
    if n > sample.len() {
        return Err(Error::IndexOutOfRange { a: 0, b: n, n: sample.len() });
    }
    let p = law.period();
    let band = band.max(p);
    let prefix = sample.prefix();
    let log_k = law.log_masses();
    let two_lh = 2.0 * params.lambda * params.h;
    let two_l = 2.0 * params.lambda;
    // smallest lattice gap beyond the band; K is non-increasing along the
    // lattice, so it majorizes every dropped kernel value
    let gap_min = if (band + 1) % p == 0 { band + 1 } else { band + 2 };

    let mut lower = vec![f64::NEG_INFINITY; n + 1];
    let mut err = vec![f64::NEG_INFINITY; n + 1];
    lower[0] = 0.0;
    // far_mass = LSE over lattice j < m - band of the upper bound at j;
    // far_peak = max prefix over the same j
    let mut far_mass = LogSum::new();
    let mut far_peak = f64::NEG_INFINITY;
    let mut entered = 0usize; // next lattice index to enter the far set
    let mut m = p;
    while m <= n {
        while entered + band < m {
            far_mass.push(logsumexp(lower[entered], err[entered]));
            far_peak = far_peak.max(prefix[entered]);
            entered += p;
        }
        let pm = prefix[m];
        let mut low_acc = LogSum::new();
        let mut err_acc = LogSum::new();
        let mut j = m.saturating_sub(band);
        j += (p - (j % p)) % p; // round up to the lattice
        while j < m {
            let gap = m - j;
            let x = -two_lh * gap as f64 - two_l * (pm - prefix[j]);
            let w = log_k[gap] + log_half_one_plus_exp(x);
            low_acc.push(lower[j] + w);
            err_acc.push(err[j] + w);
            j += p;
        }
        if far_mass.value() > f64::NEG_INFINITY && gap_min <= law.n_max() {
            let x_hat = -two_lh * gap_min as f64 - two_l * (pm - far_peak);
            err_acc.push(far_mass.value() + log_k[gap_min] + log_half_one_plus_exp(x_hat));
        }
        lower[m] = low_acc.value();
        err[m] = err_acc.value();
        m += p;
    }
    Ok(BandedQuenched {
        table: LogPartitionTable {
            kind: TableKind::Quenched,
            params: *params,
            seed: Some(sample.seed()),
            log_z: lower,
        },
        log_err: err,
        band,
    })
}

/// Log-partition value of the simple-random-walk path form, by transfer over
/// the walk height. A step landing on height zero inherits the sign of the
/// excursion it closes; sites at positive (negative) height contribute
/// weight 1 (`exp(-2 lambda (omega_i + h))`).
pub fn srw_path_log_z(sample: &DisorderSample, params: &ModelParams, n: usize) -> Result<f64> {
    if n % 2 == 1 {
        return Err(Error::OddSizeForPeriodTwo(n));
    }
    if n > sample.len() {
        return Err(Error::IndexOutOfRange { a: 0, b: n, n: sample.len() });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let ln_half = 0.5f64.ln();
    let center = n as isize;
    let size = 2 * n + 1;
    let mut cur = vec![f64::NEG_INFINITY; size];
    let mut next = vec![f64::NEG_INFINITY; size];
    cur[center as usize] = 0.0;
    for i in 1..=n {
        let neg_log_weight = -2.0 * params.lambda * (sample.omega(i) + params.h);
        for v in next.iter_mut() {
            *v = f64::NEG_INFINITY;
        }
        let reach = i as isize;
        let mut x = -(reach - 1);
        while x <= reach - 1 {
            let from = cur[(center + x) as usize];
            if from > f64::NEG_INFINITY {
                for step in [-1isize, 1] {
                    let to = x + step;
                    // sign of S_i; a zero inherits the excursion being closed
                    let negative = match to.cmp(&0) {
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Equal => x < 0,
                    };
                    let add = ln_half + if negative { neg_log_weight } else { 0.0 };
                    let slot = &mut next[(center + to) as usize];
                    *slot = logsumexp(*slot, from + add);
                }
            }
            x += 1;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur[center as usize])
}

/// Rescaled deterministic-weight renewal table: solves
/// `f[m] = sum_g K(g) w(g) e^{-mu g} f[m-g]` on the law's lattice with
/// `w(g) = (1 + exp(rate * g)) / 2` and `mu = max(rate, 0)`, returning
/// `log Z[m] = mu m + ln f[m]`. Every intermediate stays in (0, 1].
fn weighted_log_table(law: &InterArrivalLaw, rate: f64, n: usize) -> Vec<f64> {
    let p = law.period();
    let mu = rate.max(0.0);
    let len = n / p;
    let mut kernel = vec![0.0; len + 1];
    for g_sub in 1..=len {
        let g = (p * g_sub) as f64;
        // w(g) e^{-mu g} = (1 + exp(-|rate| g)) / 2 for either sign of rate
        kernel[g_sub] = law.mass(p * g_sub) * 0.5 * (1.0 + (-rate.abs() * g).exp());
    }
    let f = convolve::solve_unit_source(&kernel, len + 1);
    let mut log_z = vec![f64::NEG_INFINITY; n + 1];
    log_z[0] = 0.0;
    for (g_sub, &v) in f.iter().enumerate().skip(1) {
        let m = p * g_sub;
        if m <= n {
            log_z[m] = mu * m as f64 + v.ln();
        }
    }
    log_z
}

/// Annealed log-partition table: the quenched recursion with the Gaussian
/// average `(1 + exp(2 lambda (lambda - h) gap)) / 2` in place of `phi`.
pub fn annealed_log_z(
    law: &InterArrivalLaw,
    params: &ModelParams,
    n: usize,
) -> Result<LogPartitionTable> {
    law.check_size(n)?;
    let log_z = weighted_log_table(law, params.growth_rate(), n);
    Ok(LogPartitionTable {
        kind: TableKind::Annealed,
        params: *params,
        seed: None,
        log_z,
    })
}

/// Tilted-annealed recursion `U(0..=n)` at block scale `k`.
#[derive(Clone, Debug)]
pub struct TiltedU {
    /// U(j) for j = 0..=n (plain domain; the tilt rate is non-positive, so
    /// every value lies in [0, 1]).
    pub values: Vec<f64>,
    /// Exponential rate `2 lambda^2 (1 - rho) - 2 lambda / sqrt(k)`.
    pub rate: f64,
    pub k: usize,
    pub lambda: f64,
    pub rho: f64,
}

impl TiltedU {
    /// View as a log-partition table (kind `tilted_annealed`), e.g. for CSV
    /// export; the effective asymmetry is `rho lambda + 1/sqrt(k)`.
    pub fn to_log_table(&self) -> LogPartitionTable {
        let h = self.rho * self.lambda + 1.0 / (self.k as f64).sqrt();
        LogPartitionTable {
            kind: TableKind::TiltedAnnealed,
            params: ModelParams {
                lambda: self.lambda,
                h,
            },
            seed: None,
            log_z: self.values.iter().map(|v| v.ln()).collect(),
        }
    }
}

/// `U(j) = E Z_j(lambda, rho lambda + 1/sqrt(k))`: the annealed recursion
/// with excursion weight `(1 + exp(rate * gap)) / 2` and `U(0) = 1`.
pub fn tilted_u(
    law: &InterArrivalLaw,
    lambda: f64,
    rho: f64,
    k: usize,
    n: usize,
) -> Result<TiltedU> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda}")));
    }
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho = {rho}")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("block scale k = 0".into()));
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let rate = 2.0 * lambda * lambda * (1.0 - rho) - 2.0 * lambda / (k as f64).sqrt();
    if rate > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tilt rate {rate} > 0: k = {k} is below the block scale for lambda = {lambda}, rho = {rho}"
        )));
    }
    let p = law.period();
    let len = n / p;
    let mut kernel = vec![0.0; len + 1];
    for g_sub in 1..=len {
        let g = (p * g_sub) as f64;
        kernel[g_sub] = law.mass(p * g_sub) * 0.5 * (1.0 + (rate * g).exp());
    }
    let compact = convolve::solve_unit_source(&kernel, len + 1);
    let mut values = vec![0.0; n + 1];
    for (g_sub, &v) in compact.iter().enumerate() {
        if p * g_sub <= n {
            values[p * g_sub] = v;
        }
    }
    Ok(TiltedU {
        values,
        rate,
        k,
        lambda,
        rho,
    })
}

/// Monte-Carlo estimate with its standard error and full provenance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
    pub lambda: f64,
    pub h: f64,
    pub gamma: f64,
    pub n: usize,
    pub schema_version: u32,
}

/// Fractional moment `A_{N,gamma} = E(Z^gamma)` by Monte Carlo over disorder
/// replicas: the sample mean of `exp(gamma log Z)` with its standard error.
/// `gamma = 1` is the annealed Monte-Carlo estimate.
///
/// Replicas are keyed by `(seed, replica index)` and reduced in index order,
/// so the result does not depend on the worker count.
pub fn fractional_moment(
    law: &InterArrivalLaw,
    params: &ModelParams,
    gamma: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    if replicas < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicas, got {replicas}"
        )));
    }
    law.check_size(n)?;
    let values: Result<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let sample = crate::disorder::sample_replica(seed, r as u64, n, None);
            let table = quenched_table_shifted(law, &sample, params, 0, n)?;
            Ok((gamma * table[n]).exp())
        })
        .collect();
    let values = values?;
    let mean = values.iter().sum::<f64>() / replicas as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (replicas - 1) as f64;
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / replicas as f64).sqrt(),
        replicas,
        seed,
        lambda: params.lambda,
        h: params.h,
        gamma,
        n,
        schema_version: SCHEMA_VERSION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{sample, sample_replica};
    use crate::renewal::{make_power_law, make_srw_law, renewal_mass};

    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    fn uniform(state: &mut u64) -> f64 {
        (splitmix(state) >> 11) as f64 / 9007199254740992.0
    }

    #[test]
    fn phi_conventions() {
        let p = ModelParams::new(0.7, 0.3).unwrap();
        assert_eq!(phi(0, 123.0, &p), 1.0);
        assert_eq!(log_phi(0, 123.0, &p), 0.0);
        let free = ModelParams::new(0.0, 0.9).unwrap();
        for len in [1usize, 5, 100] {
            assert!((phi(len, -3.0, &free) - 1.0).abs() < 1e-15);
        }
        // log and plain agree where plain is representable
        let lp = log_phi(7, -1.3, &p);
        assert!((lp - phi(7, -1.3, &p).ln()).abs() < 1e-12);
    }

    #[test]
    fn phi_disjoint_union_inequality() {
        // phi(I1 u I2) <= 2 phi(I1) phi(I2) over random interval pairs
        let mut state = 42u64;
        for _ in 0..10_000 {
            let p = ModelParams::new(uniform(&mut state), uniform(&mut state)).unwrap();
            let len1 = 1 + (splitmix(&mut state) % 20) as usize;
            let len2 = 1 + (splitmix(&mut state) % 20) as usize;
            let s1 = 4.0 * uniform(&mut state) - 2.0;
            let s2 = 4.0 * uniform(&mut state) - 2.0;
            let lhs = log_phi(len1 + len2, s1 + s2, &p);
            let rhs = 2f64.ln() + log_phi(len1, s1, &p) + log_phi(len2, s2, &p);
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn quenched_at_lambda_zero_is_renewal_mass() {
        for law in [make_power_law(0.5, 200).unwrap(), make_srw_law(200).unwrap()] {
            let p = law.period();
            let omega = sample(3, 64, None);
            let params = ModelParams::new(0.0, 0.4).unwrap();
            let table = quenched_log_z(&law, &omega, &params, 64).unwrap();
            let u = renewal_mass(&law, 64).unwrap();
            let mut m = p;
            while m <= 64 {
                assert!((table.log_z(m) - u.u(m).ln()).abs() < 1e-12, "m={m}");
                m += p;
            }
        }
    }

    /// Brute-force oracle: sum over every renewal subset of {1..n} ending at n.
    fn brute_force_log_z(
        law: &InterArrivalLaw,
        omega: &DisorderSample,
        params: &ModelParams,
        n: usize,
    ) -> f64 {
        let mut total = 0.0f64;
        for mask in 0u64..(1 << (n - 1)) {
            let mut points = Vec::with_capacity(n);
            points.push(0usize);
            for site in 1..n {
                if mask >> (site - 1) & 1 == 1 {
                    points.push(site);
                }
            }
            points.push(n);
            let mut term = 1.0;
            for w in points.windows(2) {
                let gap = w[1] - w[0];
                if law.mass(gap) == 0.0 {
                    term = 0.0;
                    break;
                }
                let os = omega.interval_sum(w[0], w[1]).unwrap();
                term *= law.mass(gap) * phi(gap, os, params);
            }
            total += term;
        }
        total.ln()
    }

    #[test]
    fn quenched_matches_subset_enumeration() {
        let omega = sample(11, 8, None);
        for law in [make_srw_law(64).unwrap(), make_power_law(0.5, 64).unwrap()] {
            for (lambda, h) in [(0.8, 0.2), (1.0, 0.0), (0.3, 0.3)] {
                let params = ModelParams::new(lambda, h).unwrap();
                let n = 6;
                let got = quenched_log_z(&law, &omega, &params, n).unwrap();
                let want = brute_force_log_z(&law, &omega, &params, n);
                assert!(
                    (got.log_z(n) - want).abs() < 1e-12,
                    "{:?} lambda={lambda} h={h}: {} vs {want}",
                    law.kind(),
                    got.log_z(n)
                );
            }
        }
    }

    #[test]
    fn quenched_lower_bound_single_excursion() {
        // Z_N >= K(N)/2 pathwise
        let law = make_power_law(0.5, 512).unwrap();
        let mut state = 5u64;
        for _ in 0..20 {
            let lambda = uniform(&mut state);
            let h = lambda * uniform(&mut state);
            let params = ModelParams::new(lambda, h).unwrap();
            let omega = sample(splitmix(&mut state), 128, None);
            let table = quenched_log_z(&law, &omega, &params, 128).unwrap();
            for n in [32usize, 64, 128] {
                let bound = law.mass(n).ln() - 2f64.ln();
                assert!(table.log_z(n) >= bound - 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn quenched_rejects_odd_final_size_under_period_two() {
        let law = make_srw_law(64).unwrap();
        let omega = sample(1, 64, None);
        let params = ModelParams::new(0.5, 0.1).unwrap();
        assert!(matches!(
            quenched_log_z(&law, &omega, &params, 33),
            Err(Error::OddSizeForPeriodTwo(33))
        ));
        // odd interior entries are -inf
        let table = quenched_log_z(&law, &omega, &params, 32).unwrap();
        assert_eq!(table.log_z(7), f64::NEG_INFINITY);
    }

    #[test]
    fn quenched_log_z_nonincreasing_in_h() {
        let law = make_power_law(0.5, 128).unwrap();
        let omega = sample(21, 128, None);
        let lambda = 0.8;
        let mut prev = f64::INFINITY;
        for h in [0.0, 0.2, 0.4, 0.8] {
            let params = ModelParams::new(lambda, h).unwrap();
            let lz = quenched_log_z(&law, &omega, &params, 128)
                .unwrap()
                .log_z(128);
            assert!(lz <= prev + 1e-12);
            prev = lz;
        }
    }

    #[test]
    fn log_domain_matches_plain_domain_small_sizes() {
        // plain f64 recursion as the independent arithmetic route
        let law = make_power_law(0.5, 64).unwrap();
        let omega = sample(8, 32, None);
        let params = ModelParams::new(0.9, 0.35).unwrap();
        let table = quenched_log_z(&law, &omega, &params, 32).unwrap();
        let mut plain = vec![0.0f64; 33];
        plain[0] = 1.0;
        for m in 1..=32 {
            let mut acc = 0.0;
            for j in 0..m {
                let os = omega.interval_sum(j, m).unwrap();
                acc += plain[j] * law.mass(m - j) * phi(m - j, os, &params);
            }
            plain[m] = acc;
        }
        for m in 1..=32 {
            let rel = (table.log_z(m) - plain[m].ln()).abs();
            assert!(
                rel < 1e-9,
                "m={m}: log {} plain {}",
                table.log_z(m),
                plain[m].ln()
            );
        }
    }

    #[test]
    fn srw_path_equals_renewal_form() {
        // sign-averaging identity, checked per disorder sample
        let law = make_srw_law(64).unwrap();
        let mut state = 99u64;
        for trial in 0..10 {
            let lambda = uniform(&mut state);
            let h = uniform(&mut state);
            let params = ModelParams::new(lambda, h).unwrap();
            let omega = sample(splitmix(&mut state), 24, None);
            let table = quenched_log_z(&law, &omega, &params, 24).unwrap();
            let mut n = 2;
            while n <= 24 {
                let path = srw_path_log_z(&omega, &params, n).unwrap();
                assert!(
                    (path - table.log_z(n)).abs() < 1e-10,
                    "trial {trial} n={n}: path {path} renewal {}",
                    table.log_z(n)
                );
                n += 2;
            }
        }
    }

    #[test]
    fn srw_path_free_case_is_return_probability() {
        let omega = sample(4, 16, None);
        let params = ModelParams::new(0.0, 0.7).unwrap();
        // u(2m) = binom(2m, m) 2^{-2m}
        let mut ret = 1.0f64;
        for m in 1..=8 {
            ret *= (2 * m - 1) as f64 / (2 * m) as f64;
            let got = srw_path_log_z(&omega, &params, 2 * m).unwrap();
            assert!((got - ret.ln()).abs() < 1e-12, "n={}", 2 * m);
        }
    }

    #[test]
    fn srw_path_large_asymmetry_restricts_to_positive_excursions() {
        // h -> infinity kills every path with a negative-signed site; what
        // survives of E[...; S_8 = 0] is the count of nonnegative-signed
        // bridges, 14/256 (enumerated below)
        let n = 8;
        let omega = sample(17, n, None);
        let params = ModelParams::new(1.0, 60.0).unwrap();
        let mut survivors = 0u32;
        for mask in 0u32..(1 << n) {
            let mut s: i32 = 0;
            let mut ok = true;
            for step in 0..n {
                let prev = s;
                s += if mask >> step & 1 == 1 { 1 } else { -1 };
                let negative = if s == 0 { prev < 0 } else { s < 0 };
                if negative {
                    ok = false;
                    break;
                }
            }
            if ok && s == 0 {
                survivors += 1;
            }
        }
        assert_eq!(survivors, 14);
        let got = srw_path_log_z(&omega, &params, n).unwrap();
        let want = (survivors as f64 / 256.0).ln();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn annealed_respects_sandwich_bounds() {
        let law = make_power_law(0.5, 4096).unwrap();
        let params = ModelParams::new(0.5, 0.2).unwrap();
        let rate = params.annealed_rate();
        assert!((rate - 0.3).abs() < 1e-15);
        let table = annealed_log_z(&law, &params, 4096).unwrap();
        let u = renewal_mass(&law, 4096).unwrap();
        for n in [16usize, 256, 1024, 4096] {
            let lower = law.mass(n).ln() + log_half_one_plus_exp(rate * n as f64);
            let upper = u.u(n).ln() + rate * n as f64;
            assert!(table.log_z(n) >= lower - 1e-10, "n={n}");
            assert!(table.log_z(n) <= upper + 1e-10, "n={n}");
        }
    }

    #[test]
    fn annealed_delocalized_side_is_nonpositive() {
        let law = make_power_law(0.5, 2048).unwrap();
        for (lambda, h) in [(0.5, 0.5), (0.5, 0.9), (1.0, 1.3)] {
            let params = ModelParams::new(lambda, h).unwrap();
            let table = annealed_log_z(&law, &params, 2048).unwrap();
            for n in 1..=2048 {
                assert!(table.log_z(n) <= 1e-12, "n={n} lambda={lambda} h={h}");
            }
        }
    }

    #[test]
    fn annealed_free_energy_slope() {
        let law = make_power_law(0.5, 4096).unwrap();
        let params = ModelParams::new(0.5, 0.2).unwrap();
        let table = annealed_log_z(&law, &params, 4096).unwrap();
        let n = 4096;
        let dev = (table.log_z(n) / n as f64 - 0.3).abs();
        assert!(dev < 10.0 * (n as f64).ln() / n as f64, "dev {dev}");
    }

    #[test]
    fn annealed_matches_quenched_average() {
        // MC over replicas vs the exact annealed table. exp(log Z) is
        // roughly lognormal with log-variance of order 4 lambda^2 N, so the
        // coupling must stay small for the sample mean to converge at 1e4
        // replicas (lambda = 0.6 at N = 64 underestimates by orders of
        // magnitude).
        let law = make_srw_law(128).unwrap();
        let params = ModelParams::new(0.1, 0.05).unwrap();
        let n = 64;
        let mc = fractional_moment(&law, &params, 1.0, n, 10_000, 2024).unwrap();
        let exact = annealed_log_z(&law, &params, n).unwrap().log_z(n).exp();
        assert!(
            (mc.estimate - exact).abs() < 3.0 * mc.stderr,
            "mc {} exact {exact} se {}",
            mc.estimate,
            mc.stderr
        );
    }

    #[test]
    fn annealed_log_matches_lse_reference() {
        // same recursion evaluated with streaming log-sum-exp
        let law = make_power_law(0.5, 300).unwrap();
        for (lambda, h) in [(0.5, 0.2), (0.4, 0.6)] {
            let params = ModelParams::new(lambda, h).unwrap();
            let table = annealed_log_z(&law, &params, 300).unwrap();
            let rate = 2.0 * lambda * (lambda - h);
            let mut lse = vec![f64::NEG_INFINITY; 301];
            lse[0] = 0.0;
            for m in 1..=300 {
                let mut acc = LogSum::new();
                for j in 0..m {
                    let g = (m - j) as f64;
                    acc.push(lse[j] + law.mass(m - j).ln() + log_half_one_plus_exp(rate * g));
                }
                lse[m] = acc.value();
            }
            for m in 1..=300 {
                assert!(
                    (table.log_z(m) - lse[m]).abs() < 1e-9,
                    "m={m}: {} vs {}",
                    table.log_z(m),
                    lse[m]
                );
            }
        }
    }

    #[test]
    fn tilted_u_reduces_to_renewal_mass_at_lambda_zero() {
        let law = make_power_law(0.5, 256).unwrap();
        let t = tilted_u(&law, 0.0, 0.9, 50, 256).unwrap();
        assert_eq!(t.rate, 0.0);
        let u = renewal_mass(&law, 256).unwrap();
        for j in 0..=256 {
            assert!((t.values[j] - u.u(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_u_dominated_by_renewal_mass() {
        let lambda = 0.1f64;
        let rho = 0.9f64;
        let k = (1.0 / (lambda * lambda * (1.0 - rho))).floor() as usize;
        assert_eq!(k, 1000);
        let law = make_power_law(0.5, 2000).unwrap();
        let t = tilted_u(&law, lambda, rho, k, 1000).unwrap();
        assert!(t.rate <= 0.0);
        let u = renewal_mass(&law, 1000).unwrap();
        for j in 0..=1000 {
            assert!(t.values[j] <= u.u(j) + 1e-14, "j={j}");
        }
        assert_eq!(t.values[0], 1.0);
    }

    #[test]
    fn tilted_u_dominated_by_conservative_rate() {
        // with 2 sqrt(1-rho) < 1 the rate is at most -1/(k sqrt(1-rho)), so
        // U is dominated termwise by the recursion run at that rate
        let lambda = 0.1f64;
        let rho = 0.9f64;
        let k = 1000usize;
        let law = make_power_law(0.5, 2000).unwrap();
        assert!(2.0 * (1.0 - rho).sqrt() < 1.0);
        let t = tilted_u(&law, lambda, rho, k, 1000).unwrap();
        let conservative = -1.0 / (k as f64 * (1.0 - rho).sqrt());
        assert!(t.rate <= conservative + 1e-15);
        let mut kernel = vec![0.0; 1001];
        for g in 1..=1000 {
            kernel[g] = law.mass(g) * 0.5 * (1.0 + (conservative * g as f64).exp());
        }
        let dom = convolve::solve_unit_source(&kernel, 1001);
        for j in 0..=1000 {
            assert!(t.values[j] <= dom[j] + 1e-13, "j={j}");
        }
    }

    #[test]
    fn tilted_u_log_table_view() {
        let law = make_power_law(0.5, 256).unwrap();
        let t = tilted_u(&law, 0.1, 0.9, 1000, 128).unwrap();
        let table = t.to_log_table();
        assert_eq!(table.kind, TableKind::TiltedAnnealed);
        assert_eq!(table.log_z(0), 0.0);
        for j in 1..=128 {
            assert!((table.log_z(j) - t.values[j].ln()).abs() < 1e-15);
        }
        assert!((table.params.h - (0.09 + 1.0 / 1000f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn tilted_u_rejects_positive_rate() {
        let law = make_power_law(0.5, 100).unwrap();
        // k far above the block scale makes the rate positive
        assert!(tilted_u(&law, 0.5, 0.5, 1_000_000, 50).is_err());
    }

    #[test]
    fn fractional_moment_free_case_is_exact() {
        let law = make_power_law(0.5, 128).unwrap();
        // lambda = 0: A = u(N)^gamma exactly, zero variance
        let free = ModelParams::new(0.0, 0.0).unwrap();
        let mc = fractional_moment(&law, &free, 0.5, 32, 16, 7).unwrap();
        let u = renewal_mass(&law, 32).unwrap();
        assert!((mc.estimate - u.u(32).powf(0.5)).abs() < 1e-14);
        assert!(mc.stderr <= 1e-14 * mc.estimate);
    }

    #[test]
    fn fractional_moment_obeys_jensen() {
        let law = make_srw_law(128).unwrap();
        let params = ModelParams::new(0.7, 0.2).unwrap();
        let gamma = 0.5;
        let n = 64;
        let mc = fractional_moment(&law, &params, gamma, n, 4000, 99).unwrap();
        let annealed = annealed_log_z(&law, &params, n).unwrap().log_z(n);
        assert!(
            mc.estimate <= (gamma * annealed).exp() + 3.0 * mc.stderr,
            "A {} vs (EZ)^gamma {}",
            mc.estimate,
            (gamma * annealed).exp()
        );
    }

    #[test]
    fn fractional_moment_validates_input() {
        let law = make_power_law(0.5, 64).unwrap();
        let params = ModelParams::new(0.5, 0.1).unwrap();
        assert!(fractional_moment(&law, &params, 1.5, 16, 10, 1).is_err());
        assert!(fractional_moment(&law, &params, 0.5, 16, 1, 1).is_err());
    }

    #[test]
    fn fractional_moment_reproducible() {
        let law = make_power_law(0.5, 64).unwrap();
        let params = ModelParams::new(0.5, 0.1).unwrap();
        let a = fractional_moment(&law, &params, 0.7, 32, 50, 5).unwrap();
        let b = fractional_moment(&law, &params, 0.7, 32, 50, 5).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn phi_fractional_moment_bound() {
        // E(phi(I)^gamma) <= (1 + exp(2 lambda^2 gamma (gamma - rho) |I|)) / 2^gamma
        let lambda = 0.5;
        let rho = 0.8;
        let gamma = 0.6;
        let params = ModelParams::from_slope(lambda, rho).unwrap();
        for len in [1usize, 4, 16] {
            let replicas = 40_000u64;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for r in 0..replicas {
                let s = sample_replica(1000 + len as u64, r, len, None);
                let v = phi(len, s.prefix()[len], &params).powf(gamma);
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / replicas as f64;
            let se = ((sumsq / replicas as f64 - mean * mean) / replicas as f64).sqrt();
            let bound = (1.0
                + (2.0 * lambda * lambda * gamma * (gamma - rho) * len as f64).exp())
                / 2f64.powf(gamma);
            assert!(mean <= bound + 3.0 * se, "len={len}: {mean} vs {bound}");
        }
    }

    #[test]
    fn banded_table_brackets_exact() {
        for law in [make_power_law(0.5, 2048).unwrap(), make_srw_law(2048).unwrap()] {
            let omega = sample(33, 1500, None);
            let params = ModelParams::new(0.7, 0.3).unwrap();
            let n = if law.period() == 2 { 1500 } else { 1499 };
            let exact = quenched_log_z(&law, &omega, &params, n).unwrap();
            for band in [64usize, 200] {
                let banded = quenched_log_z_banded(&law, &omega, &params, n, band).unwrap();
                let mut m = law.period();
                while m <= n {
                    let lo = banded.table.log_z(m);
                    let hi = banded.log_z_upper(m);
                    assert!(
                        exact.log_z(m) >= lo - 1e-9,
                        "band {band} m={m}: exact {} below lower {lo}",
                        exact.log_z(m)
                    );
                    assert!(
                        exact.log_z(m) <= hi + 1e-9,
                        "band {band} m={m}: exact {} above upper {hi}",
                        exact.log_z(m)
                    );
                    m += law.period();
                }
            }
            // wider band -> tighter certificate; full band -> zero error
            let slack64 = {
                let b = quenched_log_z_banded(&law, &omega, &params, n, 64).unwrap();
                b.log_z_upper(n) - b.table.log_z(n)
            };
            let slack200 = {
                let b = quenched_log_z_banded(&law, &omega, &params, n, 200).unwrap();
                b.log_z_upper(n) - b.table.log_z(n)
            };
            assert!(slack200 <= slack64, "{slack200} vs {slack64}");
            assert!(slack200.is_finite());
            let full = quenched_log_z_banded(&law, &omega, &params, n, n).unwrap();
            assert_eq!(full.log_err[n], f64::NEG_INFINITY);
            assert!((full.table.log_z(n) - exact.log_z(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_export_shape() {
        let law = make_power_law(0.5, 32).unwrap();
        let params = ModelParams::new(0.5, 0.2).unwrap();
        let table = annealed_log_z(&law, &params, 8).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# schema_version=1");
        assert_eq!(lines.next().unwrap(), "n,log_z");
        assert_eq!(text.lines().count(), 2 + 9);
    }
}
