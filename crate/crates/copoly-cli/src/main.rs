//! `copoly`: renewal-copolymer computations from the command line.
//!
//! Every run writes a JSON artifact `{schema_version, config, result}` into
//! the output directory (plus CSV files for curve-like results) and prints
//! the artifact to stdout. The echoed `config` block contains every resolved
//! default, including generated seeds, and can be replayed verbatim with
//! `copoly run --config <artifact.json>`.
//!
//! Exit codes: 0 success, 1 computational failure (indeterminate bisection,
//! resource limits), 2 usage or configuration error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use copoly::certificate::{certify, optimize_rho, CertifyOptions, OptimizeOptions};
use copoly::coarsegrain::{decompose_check, DEFAULT_ENUMERATION_CAP};
use copoly::disorder::sample;
use copoly::estimator::{
    annealed_free_energy, critical_h, excursion_expectation, last_renewal_ratio,
    quenched_free_energy, slope_table, srw_negative_time_law, write_slope_csv,
};
use copoly::partition::{annealed_log_z, fractional_moment, quenched_log_z, ModelParams};
use copoly::renewal::{
    doney_ratio_from_mass, make_power_law, make_srw_law, renewal_mass, InterArrivalLaw,
};
use copoly::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "copoly", version, about = "renewal copolymer model toolkit")]
struct Cli {
    /// Output directory for artifacts (default: $COPOLY_OUT_DIR or ".")
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Cap the worker-thread count
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Renewal mass function and tail-asymptotic diagnostics
    Renewal(RenewalCfg),
    /// Monte-Carlo quenched free energy
    FreeEnergy(FreeEnergyCfg),
    /// Exact annealed partition table
    Annealed(AnnealedCfg),
    /// Monte-Carlo fractional moment E(Z^gamma)
    FracMoment(FracMomentCfg),
    /// Block-decomposition identity check
    CoarseCheck(CoarseCheckCfg),
    /// Delocalization certificate at one parameter tuple
    Certify(CertifyCfg),
    /// Search the smallest certified slope over a parameter grid
    OptimizeRho(OptimizeRhoCfg),
    /// Critical-point bisection in h
    CriticalH(CriticalHCfg),
    /// Critical-slope table over several couplings
    Slope(SlopeCfg),
    /// Conditioned excursion-weight expectation
    Excursion(ExcursionCfg),
    /// Exact renewal cross-checks (uniform negative-time law and friends)
    AppendixChecks(AppendixCfg),
    /// Replay a run from a JSON config or a previous artifact
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a RunConfig JSON or an artifact containing a `config` block
    #[arg(long)]
    config: PathBuf,
}

/// Serializable form of every subcommand; `command` is the tag.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
enum RunConfig {
    Renewal(RenewalCfg),
    FreeEnergy(FreeEnergyCfg),
    Annealed(AnnealedCfg),
    FracMoment(FracMomentCfg),
    CoarseCheck(CoarseCheckCfg),
    Certify(CertifyCfg),
    OptimizeRho(OptimizeRhoCfg),
    CriticalH(CriticalHCfg),
    Slope(SlopeCfg),
    Excursion(ExcursionCfg),
    AppendixChecks(AppendixCfg),
}

impl RunConfig {
    fn artifact_stem(&self) -> &'static str {
        match self {
            RunConfig::Renewal(_) => "renewal",
            RunConfig::FreeEnergy(_) => "free_energy",
            RunConfig::Annealed(_) => "annealed",
            RunConfig::FracMoment(_) => "frac_moment",
            RunConfig::CoarseCheck(_) => "coarse_check",
            RunConfig::Certify(_) => "certify",
            RunConfig::OptimizeRho(_) => "optimize_rho",
            RunConfig::CriticalH(_) => "critical_h",
            RunConfig::Slope(_) => "slope",
            RunConfig::Excursion(_) => "excursion",
            RunConfig::AppendixChecks(_) => "appendix_checks",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LawArg {
    Power,
    Srw,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenewalCfg {
    /// Inter-arrival law kind
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    /// Tail exponent (power law only)
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Law truncation
    #[arg(long, default_value_t = 100_000)]
    n_max: usize,
    /// Table size
    #[arg(long, default_value_t = 10_000)]
    n: usize,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FreeEnergyCfg {
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    n_max: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    h: f64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    /// Master seed; omitted = drawn from entropy and echoed
    #[arg(long)]
    seed: Option<u64>,
    /// Also emit the per-size curve (n, mean (1/n) log Z)
    #[arg(long, default_value_t = false)]
    curve: bool,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnealedCfg {
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    n_max: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    h: f64,
    #[arg(long, default_value_t = 16_384)]
    n: usize,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FracMomentCfg {
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    n_max: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoarseCheckCfg {
    #[arg(long, value_enum, default_value = "srw")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 4096)]
    n_max: usize,
    #[arg(long, default_value_t = 24)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    h: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertifyCfg {
    /// Inter-arrival law (srw requires alpha = 0.5)
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    lambda: f64,
    /// Law truncation; must cover the block scale k
    #[arg(long, default_value_t = 1 << 20)]
    n_max: usize,
    #[arg(long, default_value_t = 100)]
    k_min: usize,
    #[arg(long, default_value_t = 1 << 20)]
    k_budget: usize,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeRhoCfg {
    /// Inter-arrival law (srw requires alpha = 0.5)
    #[arg(long, value_enum, default_value = "power")]
    law: LawArg,
    #[arg(long)]
    alpha: f64,
    /// Couplings, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.02, 0.01])]
    lambda_grid: Vec<f64>,
    /// Fractional exponents, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.70, 0.75, 0.80])]
    gamma_grid: Vec<f64>,
    #[arg(long, default_value_t = 1 << 20)]
    n_max: usize,
    #[arg(long, default_value_t = 100)]
    k_min: usize,
    #[arg(long, default_value_t = 1 << 20)]
    k_budget: usize,
    #[arg(long, default_value_t = 1e-3)]
    rho_tol: f64,
    #[arg(long, default_value_t = true)]
    per_lambda_trace: bool,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticalHCfg {
    #[arg(long, value_enum, default_value = "srw")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 16_384)]
    n_max: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 2048)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    /// Free-energy detection threshold (default: 10x pilot stderr)
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlopeCfg {
    #[arg(long, value_enum, default_value = "srw")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 16_384)]
    n_max: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.8, 0.6, 0.4])]
    lambda_list: Vec<f64>,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExcursionCfg {
    #[arg(long, value_enum, default_value = "srw")]
    law: LawArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 8192)]
    n_max: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 5.0, 10.0])]
    q_list: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    n: usize,
}

#[derive(Args, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppendixCfg {
    /// Largest size of the uniform negative-time-law check (even sizes)
    #[arg(long, default_value_t = 64)]
    negative_law_n: usize,
    /// Size for the excursion-limit comparison
    #[arg(long, default_value_t = 4096)]
    excursion_n: usize,
    /// Sizes for the last-renewal-ratio trend
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 256, 1024, 4096])]
    ratio_sizes: Vec<usize>,
    #[arg(long, default_value_t = 8192)]
    n_max: usize,
}

/// Failure carrying the exit-code class.
struct Failure {
    usage: bool,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { usage: true, message: message.into() }
    }
    fn compute(message: impl Into<String>) -> Self {
        Failure { usage: false, message: message.into() }
    }
}

impl From<copoly::Error> for Failure {
    fn from(e: copoly::Error) -> Self {
        Failure {
            usage: e.is_usage(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::compute(format!("i/o error: {e}"))
    }
}

fn build_law(kind: LawArg, alpha: f64, n_max: usize) -> Result<InterArrivalLaw, Failure> {
    Ok(match kind {
        LawArg::Power => make_power_law(alpha, n_max)?,
        LawArg::Srw => make_srw_law(n_max)?,
    })
}

fn entropy_seed() -> u64 {
    use std::hash::{BuildHasher, Hasher};
    std::collections::hash_map::RandomState::new()
        .build_hasher()
        .finish()
}

fn resolve_seed(seed: &mut Option<u64>) -> u64 {
    match seed {
        Some(s) => *s,
        None => {
            let s = entropy_seed();
            *seed = Some(s);
            s
        }
    }
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    let mut text = format!("# schema_version={SCHEMA_VERSION}\n{header}\n");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(path)
}

/// Executes one resolved config; returns the result JSON plus CSV paths.
fn execute(config: &mut RunConfig, out_dir: &Path) -> Result<Value, Failure> {
    match config {
        RunConfig::Renewal(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let mass = renewal_mass(&law, cfg.n)?;
            let mut buf = Vec::new();
            mass.write_csv(&mut buf)
                .map_err(|e| Failure::compute(e.to_string()))?;
            fs::write(out_dir.join("renewal_u.csv"), buf)?;
            // asymptotic-ratio curve at powers of two (only for alpha <= 1)
            let mut doney_rows = Vec::new();
            if law.alpha() <= 1.0 {
                let mut j = 2 * law.period();
                while j <= cfg.n {
                    if let Ok(r) = doney_ratio_from_mass(&law, &mass, j) {
                        doney_rows.push(format!("{j},{r}"));
                    }
                    j *= 2;
                }
            }
            write_csv(out_dir, "renewal_doney.csv", "j,ratio", &doney_rows)?;
            Ok(json!({
                "law": law.spec(),
                "c_k": law.c_k(),
                "period": law.period(),
                "truncation_deficit": law.tail(law.n_max() + 1),
                "u_final": mass.u(cfg.n),
                "csv": ["renewal_u.csv", "renewal_doney.csv"],
            }))
        }
        RunConfig::FreeEnergy(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let seed = resolve_seed(&mut cfg.seed);
            let params = ModelParams::new(cfg.lambda, cfg.h)?;
            let est = quenched_free_energy(&law, &params, cfg.n, cfg.replicas, seed)?;
            let mut csv = Vec::new();
            if cfg.curve {
                let p = law.period();
                let mut sums = vec![0.0f64; cfg.n + 1];
                for r in 0..cfg.replicas {
                    let omega = copoly::disorder::sample_replica(seed, r as u64, cfg.n, None);
                    let table = quenched_log_z(&law, &omega, &params, cfg.n)?;
                    for m in (p..=cfg.n).step_by(p) {
                        sums[m] += table.log_z(m) / m as f64;
                    }
                }
                let rows: Vec<String> = (p..=cfg.n)
                    .step_by(p)
                    .map(|m| format!("{m},{}", sums[m] / cfg.replicas as f64))
                    .collect();
                write_csv(out_dir, "free_energy_curve.csv", "n,free_energy", &rows)?;
                csv.push("free_energy_curve.csv");
            }
            Ok(json!({
                "estimate": est,
                "annealed_free_energy": annealed_free_energy(cfg.lambda, cfg.h),
                "csv": csv,
            }))
        }
        RunConfig::Annealed(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let params = ModelParams::new(cfg.lambda, cfg.h)?;
            let table = annealed_log_z(&law, &params, cfg.n)?;
            let mut buf = Vec::new();
            table
                .write_csv(&mut buf)
                .map_err(|e| Failure::compute(e.to_string()))?;
            fs::write(out_dir.join("annealed_log_z.csv"), buf)?;
            Ok(json!({
                "log_z_final": table.log_z(cfg.n),
                "per_site": table.log_z(cfg.n) / cfg.n as f64,
                "annealed_free_energy": annealed_free_energy(cfg.lambda, cfg.h),
                "csv": ["annealed_log_z.csv"],
            }))
        }
        RunConfig::FracMoment(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let seed = resolve_seed(&mut cfg.seed);
            let params = ModelParams::new(cfg.lambda, cfg.h)?;
            let est = fractional_moment(&law, &params, cfg.gamma, cfg.n, cfg.replicas, seed)?;
            Ok(serde_json::to_value(est).expect("serializable"))
        }
        RunConfig::CoarseCheck(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let seed = resolve_seed(&mut cfg.seed);
            let params = ModelParams::new(cfg.lambda, cfg.h)?;
            let omega = sample(seed, cfg.n, None);
            let report = decompose_check(&law, &omega, &params, cfg.n, cfg.k, cfg.cap)?;
            Ok(serde_json::to_value(report).expect("serializable"))
        }
        RunConfig::Certify(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let opts = CertifyOptions {
                k_min: cfg.k_min,
                k_budget: cfg.k_budget,
                zeta_terms: 200_000,
            };
            let report = certify(&law, cfg.alpha, cfg.gamma, cfg.rho, cfg.lambda, &opts)?;
            Ok(serde_json::to_value(report).expect("serializable"))
        }
        RunConfig::OptimizeRho(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let opts = OptimizeOptions {
                rho_tol: cfg.rho_tol,
                certify: CertifyOptions {
                    k_min: cfg.k_min,
                    k_budget: cfg.k_budget,
                    zeta_terms: 200_000,
                },
                per_lambda_trace: cfg.per_lambda_trace,
            };
            let report = optimize_rho(&law, cfg.alpha, &cfg.lambda_grid, &cfg.gamma_grid, &opts)?;
            Ok(serde_json::to_value(report).expect("serializable"))
        }
        RunConfig::CriticalH(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let seed = resolve_seed(&mut cfg.seed);
            let run = critical_h(
                &law,
                cfg.lambda,
                cfg.n,
                cfg.replicas,
                cfg.threshold,
                cfg.tol,
                seed,
            )?;
            if run.h_hat.is_none() {
                // still write the artifact, then fail with code 1
                let value = serde_json::to_value(&run).expect("serializable");
                let artifact = json!({
                    "schema_version": SCHEMA_VERSION,
                    "config": &config,
                    "result": value,
                });
                fs::write(
                    out_dir.join("critical_h.json"),
                    serde_json::to_string_pretty(&artifact).expect("serializable"),
                )?;
                return Err(Failure::compute(
                    "bisection indeterminate after the refinement budget; bracket written to critical_h.json",
                ));
            }
            Ok(serde_json::to_value(run).expect("serializable"))
        }
        RunConfig::Slope(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let seed = resolve_seed(&mut cfg.seed);
            let rows = slope_table(&law, &cfg.lambda_list, cfg.n, cfg.replicas, cfg.tol, seed)?;
            let mut buf = Vec::new();
            write_slope_csv(&rows, &mut buf).map_err(|e| Failure::compute(e.to_string()))?;
            fs::write(out_dir.join("slope.csv"), buf)?;
            Ok(json!({
                "rows": rows,
                "reference_slope_literature": 0.83,
                "csv": ["slope.csv"],
            }))
        }
        RunConfig::Excursion(cfg) => {
            let law = build_law(cfg.law, cfg.alpha, cfg.n_max)?;
            let mut rows = Vec::new();
            let mut results = Vec::new();
            for &q in &cfg.q_list {
                let value = excursion_expectation(&law, q, cfg.n)?;
                let srw_limit = if cfg.law == LawArg::Srw {
                    Some((1.0 - (-q).exp()) / q)
                } else {
                    None
                };
                rows.push(format!(
                    "{q},{value},{}",
                    srw_limit.map_or(String::new(), |v| v.to_string())
                ));
                results.push(json!({
                    "q": q,
                    "value": value,
                    "lower_bound": (-q / 2.0).exp(),
                    "srw_limit": srw_limit,
                }));
            }
            write_csv(out_dir, "excursion.csv", "q,value,srw_limit", &rows)?;
            Ok(json!({ "n": cfg.n, "rows": results, "csv": ["excursion.csv"] }))
        }
        RunConfig::AppendixChecks(cfg) => {
            // uniform negative-time law of the simple random walk
            let mut worst_dev = 0.0f64;
            let mut n = 2;
            while n <= cfg.negative_law_n {
                let law = srw_negative_time_law(n)?;
                let expect = 1.0 / (n as f64 / 2.0 + 1.0);
                for v in &law {
                    worst_dev = worst_dev.max((v - expect).abs());
                }
                n += 2;
            }
            let srw = make_srw_law(cfg.n_max)?;
            let excursion: Vec<Value> = [1.0f64, 2.0, 5.0, 10.0]
                .iter()
                .map(|&q| -> Result<Value, Failure> {
                    let v = excursion_expectation(&srw, q, cfg.excursion_n)?;
                    Ok(json!({
                        "q": q,
                        "value": v,
                        "srw_limit": (1.0 - (-q).exp()) / q,
                    }))
                })
                .collect::<Result<_, _>>()?;
            let mut ratio_rows = Vec::new();
            let mut ratio_json = Vec::new();
            for &size in &cfg.ratio_sizes {
                let mut worst = 0.0f64;
                let mut i = 0;
                while i <= size / 2 {
                    worst = worst.max(last_renewal_ratio(&srw, size, i)?);
                    i += 2;
                }
                ratio_rows.push(format!("{size},{worst}"));
                ratio_json.push(json!({ "n": size, "max_ratio": worst }));
            }
            write_csv(out_dir, "last_renewal_ratio.csv", "n,max_ratio", &ratio_rows)?;
            Ok(json!({
                "negative_time_law": {
                    "n_up_to": cfg.negative_law_n,
                    "max_abs_deviation_from_uniform": worst_dev,
                },
                "excursion": excursion,
                "last_renewal_ratio": ratio_json,
                "csv": ["last_renewal_ratio.csv"],
            }))
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("invalid JSON in {}: {e}", path.display())))?;
    let config_value = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    serde_json::from_value(config_value)
        .map_err(|e| Failure::usage(format!("invalid config: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os("COPOLY_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    let mut config = match cli.command {
        CliCommand::Renewal(cfg) => RunConfig::Renewal(cfg),
        CliCommand::FreeEnergy(cfg) => RunConfig::FreeEnergy(cfg),
        CliCommand::Annealed(cfg) => RunConfig::Annealed(cfg),
        CliCommand::FracMoment(cfg) => RunConfig::FracMoment(cfg),
        CliCommand::CoarseCheck(cfg) => RunConfig::CoarseCheck(cfg),
        CliCommand::Certify(cfg) => RunConfig::Certify(cfg),
        CliCommand::OptimizeRho(cfg) => RunConfig::OptimizeRho(cfg),
        CliCommand::CriticalH(cfg) => RunConfig::CriticalH(cfg),
        CliCommand::Slope(cfg) => RunConfig::Slope(cfg),
        CliCommand::Excursion(cfg) => RunConfig::Excursion(cfg),
        CliCommand::AppendixChecks(cfg) => RunConfig::AppendixChecks(cfg),
        CliCommand::Run(args) => load_config(&args.config)?,
    };

    let result = execute(&mut config, &out_dir)?;
    let artifact = json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "result": result,
    });
    let pretty = serde_json::to_string_pretty(&artifact).expect("serializable");
    fs::write(
        out_dir.join(format!("{}.json", config.artifact_stem())),
        &pretty,
    )?;
    println!("{pretty}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = if f.usage { "usage" } else { "compute" };
            eprintln!(
                "{}",
                json!({ "error": f.message, "kind": kind })
            );
            if f.usage {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
