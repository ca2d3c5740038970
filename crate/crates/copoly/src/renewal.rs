//! Inter-arrival laws and renewal-process quantities.
//!
//! A law is stored as an explicit table `K(1..=n_max)` together with an
//! analytically continued tail, so sums over gaps never silently drop mass.
//! Supported laws:
//!
//! * a pure power law `K(n) = c * n^{-(1+alpha)}` normalized including its
//!   infinite tail (period 1);
//! * the first-return law of the symmetric simple random walk, supported on
//!   even gaps (period 2, tail exponent 1/2).

use crate::convolve;
use crate::logspace::compensated_sum;
use crate::series::power_tail_sum;
use crate::{Error, Result, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Which construction produced a law; also the serializable config form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    Power,
    Srw,
}

/// Serializable law specification: `{kind: power|srw, alpha, n_max}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub kind: LawKind,
    /// Tail exponent; required for `power`, ignored for `srw` (always 1/2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub n_max: usize,
}

impl LawSpec {
    pub fn build(&self) -> Result<InterArrivalLaw> {
        match self.kind {
            LawKind::Power => {
                let alpha = self.alpha.ok_or_else(|| {
                    Error::InvalidParameter("power law requires alpha".into())
                })?;
                make_power_law(alpha, self.n_max)
            }
            LawKind::Srw => make_srw_law(self.n_max),
        }
    }
}

/// Truncated heavy-tail inter-arrival distribution with cached tail sums.
#[derive(Clone, Debug)]
pub struct InterArrivalLaw {
    /// K(n) at index n, for n = 1..=n_max; index 0 is zero.
    k_values: Vec<f64>,
    /// ln K(n), -inf where K(n) = 0.
    log_k: Vec<f64>,
    /// tail_cache[n] = sum_{m >= n} K(m) for n = 1..=n_max+1; index 0 holds 1.
    tail_cache: Vec<f64>,
    alpha: f64,
    c_k: f64,
    period: usize,
    kind: LawKind,
}

impl InterArrivalLaw {
    pub fn n_max(&self) -> usize {
        self.k_values.len() - 1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn spec(&self) -> LawSpec {
        LawSpec {
            kind: self.kind,
            alpha: match self.kind {
                LawKind::Power => Some(self.alpha),
                LawKind::Srw => None,
            },
            n_max: self.n_max(),
        }
    }

    /// K(n); requires 1 <= n <= n_max.
    #[inline]
    pub fn mass(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.n_max(), "gap {n} outside law support");
        self.k_values[n]
    }

    /// ln K(n); -inf where the mass vanishes.
    #[inline]
    pub fn log_mass(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.n_max(), "gap {n} outside law support");
        self.log_k[n]
    }

    /// Full mass table indexed by gap length (index 0 is zero).
    pub fn masses(&self) -> &[f64] {
        &self.k_values
    }

    /// Full log-mass table indexed by gap length.
    pub fn log_masses(&self) -> &[f64] {
        &self.log_k
    }

    /// Tail sum `Kbar(n) = sum_{m >= n} K(m)`; `Kbar(1) = 1`.
    ///
    /// Inside the truncation the cached (exact) value is returned; beyond it
    /// the asymptotic continuation `C_K / (period * alpha * n^alpha)`.
    pub fn tail(&self, n: usize) -> f64 {
        assert!(n >= 1, "tail argument must be >= 1");
        if n < self.tail_cache.len() {
            self.tail_cache[n]
        } else {
            self.c_k / (self.period as f64 * self.alpha * (n as f64).powf(self.alpha))
        }
    }

    /// Validates that `n` may index a partition table under this law.
    pub fn check_size(&self, n: usize) -> Result<()> {
        if n > self.n_max() {
            return Err(Error::BeyondTruncation { n, n_max: self.n_max() });
        }
        if self.period == 2 && n % 2 == 1 {
            return Err(Error::OddSizeForPeriodTwo(n));
        }
        Ok(())
    }

    /// Mass table on the sublattice of multiples of the period:
    /// `out[g] = K(period * g)` for `g = 1..=n_max/period`.
    pub fn sublattice_kernel(&self) -> Vec<f64> {
        let p = self.period;
        let len = self.n_max() / p;
        let mut out = vec![0.0; len + 1];
        for g in 1..=len {
            out[g] = self.k_values[p * g];
        }
        out
    }
}

fn finalize_law(
    mut k_values: Vec<f64>,
    deficit: f64,
    alpha: f64,
    c_k: f64,
    period: usize,
    kind: LawKind,
) -> InterArrivalLaw {
    let n_max = k_values.len() - 1;
    k_values[0] = 0.0;
    let mut tail_cache = vec![0.0; n_max + 2];
    tail_cache[n_max + 1] = deficit;
    // compensated backward accumulation keeps Kbar(1) = 1 to ~1e-15
    let mut sum = deficit;
    let mut comp = 0.0;
    for n in (1..=n_max).rev() {
        let v = k_values[n];
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
        tail_cache[n] = sum + comp;
    }
    tail_cache[0] = 1.0;
    let log_k = k_values
        .iter()
        .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .collect();
    InterArrivalLaw {
        k_values,
        log_k,
        tail_cache,
        alpha,
        c_k,
        period,
        kind,
    }
}

/// Pure power law `K(n) = c * n^{-(1+alpha)}`, normalized so that the table
/// plus the analytic tail beyond `n_max` carries total mass 1. The tail
/// constant `C_K` equals the normalization `c`.
pub fn make_power_law(alpha: f64, n_max: usize) -> Result<InterArrivalLaw> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if n_max < 2 {
        return Err(Error::TruncationTooSmall {
            n_max,
            reason: "need at least two support points",
        });
    }
    let s = 1.0 + alpha;
    let mut raw = vec![0.0; n_max + 1];
    for (n, slot) in raw.iter_mut().enumerate().skip(1) {
        *slot = (n as f64).powf(-s);
    }
    let partial = compensated_sum(&raw[1..]);
    let tail = power_tail_sum(s, n_max + 1)?;
    let c = 1.0 / (partial + tail);
    for v in raw.iter_mut() {
        *v *= c;
    }
    Ok(finalize_law(raw, c * tail, alpha, c, 1, LawKind::Power))
}

/// First-return law of the symmetric simple random walk: `K(2m)` is the
/// probability that the walk first revisits the origin at time `2m`.
///
/// Uses `K(2m) = binom(2m, m) 2^{-2m} / (2m - 1)` via the stable product
/// recursion for the central binomial term; the truncation deficit is the
/// exact no-return probability `P(S_1 != 0, ..., S_{n_max} != 0)`.
pub fn make_srw_law(n_max: usize) -> Result<InterArrivalLaw> {
    if n_max % 2 != 0 {
        return Err(Error::OddSizeForPeriodTwo(n_max));
    }
    if n_max < 4 {
        return Err(Error::TruncationTooSmall {
            n_max,
            reason: "need n_max >= 4 for a period-2 law",
        });
    }
    let half = n_max / 2;
    let mut k_values = vec![0.0; n_max + 1];
    // ret = binom(2m, m) 2^{-2m}, the return probability at time 2m
    let mut ret = 1.0f64;
    for m in 1..=half {
        ret *= (2 * m - 1) as f64 / (2 * m) as f64;
        k_values[2 * m] = ret / (2 * m - 1) as f64;
    }
    // no return by n_max <=> S_{n_max} = 0 has the same probability (Feller)
    let deficit = ret;
    let c_k = (2.0 / std::f64::consts::PI).sqrt();
    Ok(finalize_law(k_values, deficit, 0.5, c_k, 2, LawKind::Srw))
}

/// Renewal mass function `u(n) = P(n in tau)` for n = 0..=N.
#[derive(Clone, Debug)]
pub struct RenewalMass {
    u_values: Vec<f64>,
}

impl RenewalMass {
    #[inline]
    pub fn u(&self, n: usize) -> f64 {
        self.u_values[n]
    }

    pub fn len(&self) -> usize {
        self.u_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.u_values
    }

    /// CSV columns `(n, u_n)`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(w, "n,u_n")?;
        for (n, u) in self.u_values.iter().enumerate() {
            writeln!(w, "{n},{u}")?;
        }
        Ok(())
    }
}

/// Expands a sublattice table back to the full lattice (zeros off-lattice).
fn expand_sublattice(compact: Vec<f64>, period: usize, n: usize) -> Vec<f64> {
    if period == 1 {
        return compact;
    }
    let mut full = vec![0.0; n + 1];
    for (g, v) in compact.into_iter().enumerate() {
        if period * g <= n {
            full[period * g] = v;
        }
    }
    full
}

/// Solves the renewal convolution `u(n) = sum_m K(m) u(n-m)`, `u(0) = 1`.
///
/// Period-2 laws are solved on the even sublattice; odd entries are zero.
pub fn renewal_mass(law: &InterArrivalLaw, n: usize) -> Result<RenewalMass> {
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let u_values = if law.period() == 1 {
        convolve::solve_unit_source(&law.masses()[..=n], n + 1)
    } else {
        let kernel = law.sublattice_kernel();
        let compact = convolve::solve_unit_source(&kernel, n / 2 + 1);
        expand_sublattice(compact, 2, n)
    };
    Ok(RenewalMass { u_values })
}

/// `u(j)` divided by its heavy-tail asymptotic form.
///
/// For `alpha < 1` the asymptote is `alpha sin(pi alpha) / (pi C') * j'^{alpha-1}`
/// and for `alpha = 1` it is `1 / (C' log j')`, both evaluated on the
/// sublattice of the law's period (`j' = j / period`,
/// `C' = C_K period^{-(1+alpha)}`), which reduces to the familiar aperiodic
/// form when the period is 1.
pub fn doney_ratio(law: &InterArrivalLaw, j: usize) -> Result<f64> {
    let mass = renewal_mass(law, j)?;
    doney_ratio_from_mass(law, &mass, j)
}

/// Same as [`doney_ratio`] but reuses a precomputed mass table (for sweeps).
pub fn doney_ratio_from_mass(law: &InterArrivalLaw, mass: &RenewalMass, j: usize) -> Result<f64> {
    let alpha = law.alpha();
    if alpha > 1.0 + 1e-12 {
        return Err(Error::UnsupportedAlpha(alpha));
    }
    if j < 2 {
        return Err(Error::InvalidParameter(format!(
            "asymptotic ratio needs j >= 2, got {j}"
        )));
    }
    if law.period() == 2 && j % 2 == 1 {
        return Err(Error::OddSizeForPeriodTwo(j));
    }
    let p = law.period() as f64;
    let j_sub = j as f64 / p;
    let c_sub = law.c_k() * p.powf(-(1.0 + alpha));
    let asymptote = if (alpha - 1.0).abs() < 1e-12 {
        1.0 / (c_sub * j_sub.ln())
    } else {
        alpha * (std::f64::consts::PI * alpha).sin() / (std::f64::consts::PI * c_sub)
            * j_sub.powf(alpha - 1.0)
    };
    Ok(mass.u(j) / asymptote)
}

/// Homogeneous pinning sums `P_xi(n)` for n = 0..=N, from the recursion
/// `P_xi(n) = sum_m xi K(m) P_xi(n-m)` with `P_xi(0) = 1`.
pub fn pinned_profile(law: &InterArrivalLaw, xi: f64, n: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::XiOutOfRange(xi));
    }
    if n > law.n_max() {
        return Err(Error::BeyondTruncation { n, n_max: law.n_max() });
    }
    let profile = if law.period() == 1 {
        let kernel: Vec<f64> = law.masses()[..=n].iter().map(|&k| xi * k).collect();
        convolve::solve_unit_source(&kernel, n + 1)
    } else {
        let kernel: Vec<f64> = law
            .sublattice_kernel()
            .into_iter()
            .map(|k| xi * k)
            .collect();
        let compact = convolve::solve_unit_source(&kernel, n / 2 + 1);
        expand_sublattice(compact, 2, n)
    };
    Ok(profile)
}

/// `P_xi(N)`, the pinning partition value at a single size.
pub fn pinned_sum(law: &InterArrivalLaw, xi: f64, n: usize) -> Result<f64> {
    Ok(pinned_profile(law, xi, n)?[n])
}
