//! Numerical delocalization certificate at slope `h = rho * lambda`.
//!
//! The sufficient conditions live at the block scale
//! `k = floor(1 / (lambda^2 (1 - rho)))` (the inverse annealed free energy up
//! to a factor 2). With `U` the tilted-annealed recursion, the two condition
//! sums are
//!
//! * `sum_{j<k} U(j) <= eps * Y(k, C_K, alpha)` and
//! * `sum_{j<k} sum_{n>=k} U(j) K(n-j) <= eps`,
//!
//! and a certificate requires `xi(eps) < 1` for the pinning-model contraction
//! factor `xi`. The checkable direction at finite parameters runs backwards:
//! compute the smallest `eps` that both condition sums achieve, then test
//! `xi(eps) < 1` together with the structural constraints.
//!
//! A passing report is numerical evidence, not a proof: the conditions are
//! sufficient only in the small-coupling regime (block scale large), and the
//! constants tying them to the free energy are not effective. Every report
//! carries that caveat.

use crate::partition::{tilted_u, TiltedU};
use crate::renewal::InterArrivalLaw;
use crate::series::zeta_bracket;
use crate::{Error, Result, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Caveat line carried by every certificate report.
pub const CERTIFICATE_CAVEAT: &str = "numerical certificate: the sufficient conditions are \
asymptotic in the block scale and their constants are not effective, so a pass is evidence \
of delocalization at h = rho*lambda, not a proof";

/// Tuning knobs for a certificate evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Smallest block scale accepted as "k sufficiently large".
    pub k_min: usize,
    /// Largest block scale the recursion budget allows.
    pub k_budget: usize,
    /// Terms of the zeta-like series partial sum (upper bound adds the
    /// integral tail).
    pub zeta_terms: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            k_min: 100,
            k_budget: 1 << 20,
            zeta_terms: 200_000,
        }
    }
}

/// Structural constraints checked before (and alongside) the numeric work.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StructuralFlags {
    /// `gamma > 1/(1 + alpha)` (equivalently the xi series converges).
    pub gamma_above_threshold: bool,
    /// `gamma < 1`.
    pub gamma_below_one: bool,
    /// `gamma < rho`.
    pub gamma_below_rho: bool,
    /// `rho < 1`.
    pub rho_below_one: bool,
    /// `2 sqrt(1 - rho) < 1`.
    pub rho_margin: bool,
    /// Tilt rate `2 lambda^2 (1-rho) - 2 lambda / sqrt(k) <= 0`.
    pub tilt_rate_nonpositive: bool,
    /// `k >= k_min`.
    pub k_at_least_min: bool,
}

impl StructuralFlags {
    pub fn all(&self) -> bool {
        self.gamma_above_threshold
            && self.gamma_below_one
            && self.gamma_below_rho
            && self.rho_below_one
            && self.rho_margin
            && self.tilt_rate_nonpositive
            && self.k_at_least_min
    }
}

/// Outcome of one condition check at a given `eps`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CondCheck {
    pub lhs: f64,
    pub bound: f64,
    pub pass: bool,
    pub margin: f64,
}

/// Full evaluation record for one `(alpha, gamma, rho, lambda)` tuple.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub k: usize,
    /// `floor(2 / annealed free energy)` at `h = rho lambda`; equals `k`.
    pub k_from_annealed: usize,
    pub tilt_rate: Option<f64>,
    pub structural: StructuralFlags,
    pub y_value: Option<f64>,
    pub lhs1: Option<f64>,
    /// Achieved `eps` of the first condition: `lhs1 / Y`.
    pub eps1: Option<f64>,
    /// Achieved `eps` of the second condition (its own left-hand side).
    pub eps2: Option<f64>,
    pub eps_achieved: Option<f64>,
    pub xi: Option<f64>,
    pub pass: bool,
    pub caveat: String,
    pub schema_version: u32,
}

/// Block scale `k = floor(1 / (lambda^2 (1 - rho)))`.
pub fn block_scale_k(lambda: f64, rho: f64) -> Result<usize> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "block scale undefined at lambda = {lambda}"
        )));
    }
    if !(rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "block scale undefined at rho = {rho} >= 1"
        )));
    }
    let raw = 1.0 / (lambda * lambda * (1.0 - rho));
    if !raw.is_finite() || raw >= usize::MAX as f64 {
        return Err(Error::InvalidParameter(format!(
            "block scale overflow: 1/(lambda^2 (1-rho)) = {raw}"
        )));
    }
    Ok(raw.floor() as usize)
}

/// `floor(2 / F_ann)` with `F_ann` the annealed free energy at `h = rho
/// lambda`; algebraically identical to [`block_scale_k`], reported for the
/// cross-check.
pub fn block_scale_from_annealed(lambda: f64, rho: f64) -> Result<usize> {
    let params = crate::partition::ModelParams::from_slope(lambda, rho)?;
    let f_ann = params.annealed_rate();
    if !(f_ann > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "annealed free energy {f_ann} not positive"
        )));
    }
    Ok((2.0 / f_ann).floor() as usize)
}

/// Scale function `Y(k, C_K, alpha)` of the first condition.
pub fn y_scale(k: usize, c_k: f64, alpha: f64) -> f64 {
    let kf = k as f64;
    if (alpha - 1.0).abs() < 1e-9 {
        2.0 * kf / (c_k * kf.ln())
    } else if alpha < 1.0 {
        kf.powf(alpha) / c_k
    } else {
        kf
    }
}

/// First condition: `sum_{j<k} U(j) <= eps * y`.
pub fn check_cond1(u: &TiltedU, k: usize, eps: f64, y: f64) -> CondCheck {
    let lhs = crate::logspace::compensated_sum(&u.values[..k]);
    let bound = eps * y;
    CondCheck {
        lhs,
        bound,
        pass: lhs <= bound,
        margin: bound - lhs,
    }
}

/// Second condition via the exact tail rewriting
/// `sum_{j<k} sum_{n>=k} U(j) K(n-j) = sum_{j<k} U(j) Kbar(k-j)`.
pub fn check_cond2(u: &TiltedU, law: &InterArrivalLaw, k: usize, eps: f64) -> CondCheck {
    let terms: Vec<f64> = (0..k).map(|j| u.values[j] * law.tail(k - j)).collect();
    let lhs = crate::logspace::compensated_sum(&terms);
    CondCheck {
        lhs,
        bound: eps,
        pass: lhs <= eps,
        margin: eps - lhs,
    }
}

/// Contraction factor
/// `xi = 3^{gamma (3 + 2 alpha)} * 2 * e^{gamma/(1-gamma)} * eps^gamma *
/// sum_n n^{-(1+alpha) gamma}`, with the series replaced by its certified
/// upper bound (partial sum plus integral tail).
pub fn xi_value(alpha: f64, gamma: f64, eps: f64, zeta_terms: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    let s = (1.0 + alpha) * gamma;
    let series = zeta_bracket(s, zeta_terms)?.upper;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps}")));
    }
    Ok(3f64.powf(gamma * (3.0 + 2.0 * alpha))
        * 2.0
        * (gamma / (1.0 - gamma)).exp()
        * eps.powf(gamma)
        * series)
}

/// Evaluates the certificate at one `(alpha, gamma, rho, lambda)` tuple.
///
/// The achieved `eps` is computed from the two condition sums (the smallest
/// eps making both pass) and then tested through `xi(eps) < 1`; `pass`
/// requires every structural flag as well. When `gamma >= rho` the report
/// carries no numeric work, mirroring the parameter region where the bound
/// is vacuous.
pub fn certify(
    law: &InterArrivalLaw,
    alpha: f64,
    gamma: f64,
    rho: f64,
    lambda: f64,
    opts: &CertifyOptions,
) -> Result<CertificateReport> {
    if (law.alpha() - alpha).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "law has alpha = {}, certificate asked for {alpha}",
            law.alpha()
        )));
    }
    let k = block_scale_k(lambda, rho)?;
    if k > opts.k_budget {
        return Err(Error::ResourceLimit {
            k,
            budget: opts.k_budget,
        });
    }
    if k > law.n_max() {
        return Err(Error::BeyondTruncation { n: k, n_max: law.n_max() });
    }
    let k_from_annealed = block_scale_from_annealed(lambda, rho)?;
    let mut structural = StructuralFlags {
        gamma_above_threshold: gamma > 1.0 / (1.0 + alpha),
        gamma_below_one: gamma < 1.0,
        gamma_below_rho: gamma < rho,
        rho_below_one: rho < 1.0,
        rho_margin: 2.0 * (1.0 - rho).sqrt() < 1.0,
        tilt_rate_nonpositive: false,
        k_at_least_min: k >= opts.k_min,
    };

    let blank = |structural: StructuralFlags| CertificateReport {
        alpha,
        gamma,
        rho,
        lambda,
        k,
        k_from_annealed,
        tilt_rate: None,
        structural,
        y_value: None,
        lhs1: None,
        eps1: None,
        eps2: None,
        eps_achieved: None,
        xi: None,
        pass: false,
        caveat: CERTIFICATE_CAVEAT.to_string(),
        schema_version: SCHEMA_VERSION,
    };

    if !structural.gamma_below_rho || !structural.gamma_below_one || k == 0 {
        return Ok(blank(structural));
    }

    let u = tilted_u(law, lambda, rho, k, (k - 1).max(law.period()))?;
    structural.tilt_rate_nonpositive = u.rate <= 0.0;
    let y = y_scale(k, law.c_k(), alpha);
    let cond1 = check_cond1(&u, k, f64::INFINITY, y);
    let lhs1 = cond1.lhs;
    let eps1 = lhs1 / y;
    let cond2 = check_cond2(&u, law, k, f64::INFINITY);
    let eps2 = cond2.lhs;
    let eps_achieved = eps1.max(eps2);
    let xi = if structural.gamma_above_threshold && structural.gamma_below_one {
        Some(xi_value(alpha, gamma, eps_achieved, opts.zeta_terms)?)
    } else {
        None
    };
    let pass = structural.all() && xi.map_or(false, |x| x < 1.0);
    Ok(CertificateReport {
        alpha,
        gamma,
        rho,
        lambda,
        k,
        k_from_annealed,
        tilt_rate: Some(u.rate),
        structural,
        y_value: Some(y),
        lhs1: Some(lhs1),
        eps1: Some(eps1),
        eps2: Some(eps2),
        eps_achieved: Some(eps_achieved),
        xi,
        pass,
        caveat: CERTIFICATE_CAVEAT.to_string(),
        schema_version: SCHEMA_VERSION,
    })
}

/// One bisection probe in an optimize-rho trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifySummary {
    pub rho: f64,
    pub lambda: f64,
    pub k: usize,
    pub pass: bool,
    pub eps_achieved: Option<f64>,
    pub xi: Option<f64>,
}

impl From<&CertificateReport> for CertifySummary {
    fn from(r: &CertificateReport) -> Self {
        CertifySummary {
            rho: r.rho,
            lambda: r.lambda,
            k: r.k,
            pass: r.pass,
            eps_achieved: r.eps_achieved,
            xi: r.xi,
        }
    }
}

/// Search trace for one gamma.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaTrace {
    pub gamma: f64,
    /// Smallest rho certified at every lambda of the grid, when one exists.
    pub rho_star: Option<f64>,
    /// Final bisection bracket (largest failing rho, smallest passing rho).
    pub bracket: Option<(f64, f64)>,
    /// Re-verified pass at rho_star and fail one step below.
    pub well_posed: Option<bool>,
    /// Per-lambda single-coupling thresholds (for the monotonicity log).
    pub per_lambda_rho_star: Vec<(f64, Option<f64>)>,
    /// Smaller lambda never demanded a larger rho_star.
    pub lambda_monotonicity_ok: Option<bool>,
    pub evals: Vec<CertifySummary>,
}

/// Result of the slope search over a `(gamma, lambda)` grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub alpha: f64,
    pub gamma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub rho_tol: f64,
    /// `min_gamma rho_star(gamma)`: the certified slope bound, when any
    /// gamma produced a certificate.
    pub rho_alpha: Option<f64>,
    /// `1 / (1 + alpha)`: no certified slope may undercut this.
    pub sanity_floor: f64,
    pub sanity_ok: Option<bool>,
    pub per_gamma: Vec<GammaTrace>,
    pub caveat: String,
    pub schema_version: u32,
}

/// Options for [`optimize_rho`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub rho_tol: f64,
    pub certify: CertifyOptions,
    /// Also bisect each lambda alone (for the monotonicity trace).
    pub per_lambda_trace: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            rho_tol: 1e-3,
            certify: CertifyOptions::default(),
            per_lambda_trace: true,
        }
    }
}

/// Bisection for the smallest passing point of a monotone predicate on
/// `[lo, hi]`, given `pred(hi)` is known true and `pred(lo)` known false.
fn bisect_smallest_passing<F: FnMut(f64) -> bool>(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut pred: F,
) -> (f64, f64) {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Searches, per gamma, for the smallest `rho` in `(max(gamma, 3/4), 1)` such
/// that the certificate passes at every lambda of the grid, then minimizes
/// over gamma. Bisection well-posedness is re-verified, not assumed; when no
/// feasible rho passes, the gamma is reported without a threshold ("no
/// certificate at this grid").
pub fn optimize_rho(
    law: &InterArrivalLaw,
    alpha: f64,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    if lambda_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidParameter("empty search grid".into()));
    }
    for &l in lambda_grid {
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda = {l} in grid")));
        }
    }
    let lambda_min = lambda_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let effective_budget = opts.certify.k_budget.min(law.n_max());
    // largest rho keeping every k(lambda, rho) within budget
    let rho_hi = 1.0 - 1.0 / (lambda_min * lambda_min * effective_budget as f64);

    let run_gamma = |&gamma: &f64| -> Result<GammaTrace> {
        let mut evals: Vec<CertifySummary> = Vec::new();
        let lo0 = gamma.max(0.75) + opts.rho_tol;
        if rho_hi <= lo0 {
            return Ok(GammaTrace {
                gamma,
                rho_star: None,
                bracket: None,
                well_posed: None,
                per_lambda_rho_star: Vec::new(),
                lambda_monotonicity_ok: None,
                evals,
            });
        }

        let eval_all = |rho: f64, evals: &mut Vec<CertifySummary>| -> Result<bool> {
            let mut all = true;
            for &lambda in lambda_grid {
                let report = certify(law, alpha, gamma, rho, lambda, &opts.certify)?;
                evals.push(CertifySummary::from(&report));
                all &= report.pass;
            }
            Ok(all)
        };

        // per-lambda thresholds for the monotonicity log
        let mut per_lambda_rho_star = Vec::new();
        let mut lambda_monotonicity_ok = None;
        if opts.per_lambda_trace {
            for &lambda in lambda_grid {
                let eval_one = |rho: f64, evals: &mut Vec<CertifySummary>| -> Result<bool> {
                    let report = certify(law, alpha, gamma, rho, lambda, &opts.certify)?;
                    evals.push(CertifySummary::from(&report));
                    Ok(report.pass)
                };
                let star = if !eval_one(rho_hi, &mut evals)? {
                    None
                } else if eval_one(lo0, &mut evals)? {
                    Some(lo0)
                } else {
                    let mut err: Option<Error> = None;
                    let (_, hi) = bisect_smallest_passing(lo0, rho_hi, opts.rho_tol, |rho| {
                        if err.is_some() {
                            return true;
                        }
                        match eval_one(rho, &mut evals) {
                            Ok(p) => p,
                            Err(e) => {
                                err = Some(e);
                                true
                            }
                        }
                    });
                    if let Some(e) = err {
                        return Err(e);
                    }
                    Some(hi)
                };
                per_lambda_rho_star.push((lambda, star));
            }
            // sort by descending lambda; rho_star must not increase
            let mut by_lambda = per_lambda_rho_star.clone();
            by_lambda.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let stars: Vec<f64> = by_lambda.iter().filter_map(|(_, s)| *s).collect();
            if stars.len() >= 2 {
                lambda_monotonicity_ok =
                    Some(stars.windows(2).all(|w| w[1] <= w[0] + opts.rho_tol));
            }
        }

        let pass_hi = eval_all(rho_hi, &mut evals)?;
        if !pass_hi {
            return Ok(GammaTrace {
                gamma,
                rho_star: None,
                bracket: None,
                well_posed: None,
                per_lambda_rho_star,
                lambda_monotonicity_ok,
                evals,
            });
        }
        let pass_lo = eval_all(lo0, &mut evals)?;
        let (rho_star, bracket, well_posed) = if pass_lo {
            // passes across the whole domain: the threshold degenerates to
            // the domain edge and the fail side cannot be exhibited
            (Some(lo0), Some((lo0, lo0)), Some(false))
        } else {
            let mut err: Option<Error> = None;
            let (lo, hi) = bisect_smallest_passing(lo0, rho_hi, opts.rho_tol, |rho| {
                if err.is_some() {
                    return true;
                }
                match eval_all(rho, &mut evals) {
                    Ok(p) => p,
                    Err(e) => {
                        err = Some(e);
                        true
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            // explicit re-verification of both bracket endpoints
            let pass_at_star = eval_all(hi, &mut evals)?;
            let fail_below = !eval_all((hi - opts.rho_tol).max(lo0), &mut evals)?;
            (Some(hi), Some((lo, hi)), Some(pass_at_star && fail_below))
        };

        Ok(GammaTrace {
            gamma,
            rho_star,
            bracket,
            well_posed,
            per_lambda_rho_star,
            lambda_monotonicity_ok,
            evals,
        })
    };

    let per_gamma: Result<Vec<GammaTrace>> = gamma_grid.par_iter().map(run_gamma).collect();
    let per_gamma = per_gamma?;
    let rho_alpha = per_gamma
        .iter()
        .filter_map(|t| t.rho_star)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    let sanity_floor = 1.0 / (1.0 + alpha);
    Ok(OptimizeReport {
        alpha,
        gamma_grid: gamma_grid.to_vec(),
        lambda_grid: lambda_grid.to_vec(),
        rho_tol: opts.rho_tol,
        rho_alpha,
        sanity_floor,
        sanity_ok: rho_alpha.map(|r| r >= sanity_floor),
        per_gamma,
        caveat: CERTIFICATE_CAVEAT.to_string(),
        schema_version: SCHEMA_VERSION,
    })
}
