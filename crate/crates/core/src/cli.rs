//! Command-line front end. Subcommands wire sequence spec files, kernels,
//! and coefficient files to the library operations and emit JSON reports
//! or CSV tables. Exit codes: 0 on pass, 2 on a numeric-check failure
//! (the report is still written), 1 on usage or I/O errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::extend::build_extension;
use crate::formal::{certify_norm, SeriesFile, TruncatedSeries};
use crate::kernel::{build_kernel, KernelFlavor, KernelHandle, RayPoint};
use crate::moments::moment_table;
use crate::quad::QuadConfig;
use crate::seqcore::{check_regularity, SequenceModel, SequenceSpecFile};
use crate::summation::{
    builtin_continuation, flat_gap, m_sum, ContinuationSector, ContinuedBorelFunction,
    GrowthCert,
};

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum FlavorArg {
    /// Constructed flat kernel from the sequence itself.
    Constructed,
    /// Closed-form Gevrey kernel (requires a gevrey sequence spec).
    Gevrey,
}

#[derive(Debug, Parser)]
#[command(name = "ultrasum", version, about = "Generalized Borel-Laplace summability toolkit")]
struct Cli {
    /// Seed for optional randomized sweeps; the core pipelines are
    /// deterministic and ignore it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Kernel cache directory (the ULTRASUM_CACHE env var overrides it).
    #[arg(long, global = true)]
    kernel_cache: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check strong regularity of a sequence spec and report the fits.
    CheckSeq {
        #[arg(long)]
        spec: PathBuf,
        /// Override the pmax stored in the spec file.
        #[arg(long)]
        pmax: Option<usize>,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate |e_M| against its h_M sandwich bounds on a radial grid.
    KernelProfile {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, value_enum)]
        kernel: FlavorArg,
        /// Sector half-opening parameter; the constructed sandwich fit is
        /// tightest well inside (0, gamma).
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Log-spaced grid `lo,hi,n`.
        #[arg(long, default_value = "1e-2,1e2,81")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the moment sequence and its equivalence fit as CSV.
    Moments {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, value_enum)]
        kernel: FlavorArg,
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        #[arg(long)]
        pmax: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the truncated-Laplace extension and report its asymptotics.
    Extend {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, value_enum)]
        kernel: FlavorArg,
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        /// Coefficient file for the asymptotic expansion.
        #[arg(long)]
        data: PathBuf,
        /// Evaluation grid `m1,m2,...[@a1,a2,...]` (moduli, optional args).
        #[arg(long)]
        z_grid: String,
        #[arg(long)]
        nmax: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// M-sum a series: Borel transform, user continuation, Laplace back.
    Sum {
        #[arg(long)]
        series: PathBuf,
        /// Continuation name: one_over_one_plus_u, exp, rational(c0,c1,..).
        #[arg(long)]
        continuation: String,
        /// Central direction of the continuation sector, radians.
        #[arg(long)]
        direction: f64,
        /// Evaluation point `modulus,arg`.
        #[arg(long)]
        z: String,
        /// Laplace direction override; nearest admissible to arg z otherwise.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Sequence spec; Gevrey order 1 when omitted.
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FlavorArg::Gevrey)]
        kernel: FlavorArg,
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        /// Growth certificate |g(u)| <= k4 / h_M(k5/|u|).
        #[arg(long, default_value_t = 1.0)]
        k4: f64,
        #[arg(long, default_value_t = 1.0)]
        k5: f64,
        /// Continuation sector opening as a fraction of pi.
        #[arg(long, default_value_t = 0.9)]
        opening: f64,
        /// Skip the growth spot-check on the continuation.
        #[arg(long)]
        allow_growth_violation: bool,
    },
    /// Measure the flat gap between the truncated extension and the M-sum.
    Gap {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, value_enum)]
        kernel: FlavorArg,
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        continuation: String,
        #[arg(long)]
        direction: f64,
        #[arg(long)]
        z_grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        k4: f64,
        #[arg(long, default_value_t = 1.0)]
        k5: f64,
        #[arg(long, default_value_t = 0.9)]
        opening: f64,
        #[arg(long)]
        allow_growth_violation: bool,
    },
}

/// Run the CLI on `argv` (including the program name); returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are success paths, everything else is usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cache_dir = std::env::var_os("ULTRASUM_CACHE")
        .map(PathBuf::from)
        .or(cli.kernel_cache.clone());
    match dispatch(cli.cmd, cache_dir.as_deref()) {
        Ok(pass) => {
            if pass {
                0
            } else {
                2
            }
        }
        Err(msg) => {
            eprintln!("ultrasum: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command, cache_dir: Option<&Path>) -> Result<bool, String> {
    match cmd {
        Command::CheckSeq { spec, pmax, out } => cmd_check_seq(&spec, pmax, out.as_deref()),
        Command::KernelProfile { seq, kernel, delta, grid, out } => {
            cmd_kernel_profile(&seq, kernel, delta, &grid, &out, cache_dir)
        }
        Command::Moments { seq, kernel, delta, pmax, out } => {
            cmd_moments(&seq, kernel, delta, pmax, out.as_deref(), cache_dir)
        }
        Command::Extend { seq, kernel, delta, data, z_grid, nmax, out } => {
            cmd_extend(&seq, kernel, delta, &data, &z_grid, nmax, &out, cache_dir)
        }
        Command::Sum {
            series,
            continuation,
            direction,
            z,
            tau,
            out,
            seq,
            kernel,
            delta,
            k4,
            k5,
            opening,
            allow_growth_violation,
        } => cmd_sum(
            &series,
            &continuation,
            direction,
            &z,
            tau,
            &out,
            seq.as_deref(),
            kernel,
            delta,
            GrowthCert { k4, k5 },
            opening,
            allow_growth_violation,
            cache_dir,
        ),
        Command::Gap {
            seq,
            kernel,
            delta,
            data,
            continuation,
            direction,
            z_grid,
            out,
            k4,
            k5,
            opening,
            allow_growth_violation,
        } => cmd_gap(
            &seq,
            kernel,
            delta,
            &data,
            &continuation,
            direction,
            &z_grid,
            &out,
            GrowthCert { k4, k5 },
            opening,
            allow_growth_violation,
            cache_dir,
        ),
    }
}

// ---------------------------------------------------------------- helpers

fn load_sequence(path: &Path, pmax_override: Option<usize>) -> Result<SequenceModel, String> {
    let txt = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut spec: SequenceSpecFile =
        serde_json::from_str(&txt).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(p) = pmax_override {
        spec.pmax = p;
    }
    spec.into_model()
}

fn build_flavored_kernel(
    seq: &SequenceModel,
    flavor: FlavorArg,
    delta: f64,
    cache_dir: Option<&Path>,
) -> Result<KernelHandle, String> {
    let flavor = match flavor {
        FlavorArg::Constructed => KernelFlavor::ConstructedThilliez,
        FlavorArg::Gevrey => match seq.source {
            crate::seqcore::SequenceSource::GevreyAlpha(a) => KernelFlavor::ClosedFormGevrey(a),
            _ => return Err("the gevrey kernel needs a gevrey sequence spec".into()),
        },
    };
    let mut kernel =
        build_kernel(seq, delta, flavor, QuadConfig::default()).map_err(|e| e.to_string())?;
    if let Some(dir) = cache_dir {
        kernel.cache_load(dir).map_err(|e| e.to_string())?;
    }
    Ok(kernel)
}

fn save_cache(kernel: &KernelHandle, cache_dir: Option<&Path>) -> Result<(), String> {
    if let Some(dir) = cache_dir {
        if kernel.cache_is_warm() {
            kernel.cache_save(dir).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("grid spec {spec:?} is not lo,hi,n"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad grid lo {:?}", parts[0]))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad grid hi {:?}", parts[1]))?;
    let n: usize = parts[2].trim().parse().map_err(|_| format!("bad grid n {:?}", parts[2]))?;
    if !(lo > 0.0 && hi > lo) {
        return Err(format!("grid spec {spec:?} needs 0 < lo < hi"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()).collect())
}

/// `m1,m2,...[@a1,a2,...]`: the product of a modulus list and an argument
/// list (arguments default to 0).
fn parse_z_grid(spec: &str) -> Result<Vec<RayPoint>, String> {
    let (mods, args) = match spec.split_once('@') {
        Some((m, a)) => (m, a),
        None => (spec, "0"),
    };
    let parse_list = |s: &str| -> Result<Vec<f64>, String> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number {x:?} in {spec:?}")))
            .collect()
    };
    let moduli = parse_list(mods)?;
    let arguments = parse_list(args)?;
    if moduli.is_empty() || arguments.is_empty() {
        return Err(format!("empty z grid {spec:?}"));
    }
    let mut grid = Vec::with_capacity(moduli.len() * arguments.len());
    for &m in &moduli {
        for &a in &arguments {
            grid.push(RayPoint::new(m, a));
        }
    }
    Ok(grid)
}

fn parse_z(spec: &str) -> Result<RayPoint, String> {
    let (m, a) = spec.split_once(',').ok_or_else(|| format!("z spec {spec:?} is not modulus,arg"))?;
    let modulus: f64 = m.trim().parse().map_err(|_| format!("bad modulus {m:?}"))?;
    let argument: f64 = a.trim().parse().map_err(|_| format!("bad argument {a:?}"))?;
    Ok(RayPoint::new(modulus, argument))
}

fn load_series(path: &Path, seq: &SequenceModel) -> Result<TruncatedSeries, String> {
    let txt = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: SeriesFile =
        serde_json::from_str(&txt).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut series = file.into_series().map_err(|e| e.to_string())?;
    if !series.is_zero() {
        series.norm_cert = Some(certify_norm(&series, seq).map_err(|e| e.to_string())?);
    }
    Ok(series)
}

fn build_continuation(
    name: &str,
    direction: f64,
    opening: f64,
    growth: GrowthCert,
    seq: &SequenceModel,
    allow_violation: bool,
) -> Result<ContinuedBorelFunction, String> {
    let eval = builtin_continuation(name).map_err(|e| e.to_string())?;
    let sector = ContinuationSector { direction, opening };
    if allow_violation {
        Ok(ContinuedBorelFunction::unchecked(eval, sector, growth))
    } else {
        ContinuedBorelFunction::checked(eval, sector, growth, seq).map_err(|e| e.to_string())
    }
}

fn write_out(path: Option<&Path>, contents: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, contents)
            .map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_complex(z: Complex64) -> serde_json::Value {
    serde_json::json!([z.re, z.im])
}

// ------------------------------------------------------------ subcommands

fn cmd_check_seq(
    spec: &Path,
    pmax: Option<usize>,
    out: Option<&Path>,
) -> Result<bool, String> {
    let seq = load_sequence(spec, pmax)?;
    let tail_depth = (seq.pmax / 2).max(8).min(seq.pmax);
    let report = check_regularity(&seq, tail_depth).map_err(|e| e.to_string())?;
    let mut body = String::from("{\n");
    let flat = report.to_flat_map();
    for (i, (key, value)) in flat.iter().enumerate() {
        let sep = if i + 1 == flat.len() { "" } else { "," };
        body.push_str(&format!("  \"{key}\": {value}{sep}\n"));
    }
    body.push_str("}\n");
    write_out(out, &body)?;
    Ok(report.logconvex_pass && report.moderate_growth.pass && report.strong_nq.pass)
}

fn cmd_kernel_profile(
    seq_path: &Path,
    flavor: FlavorArg,
    delta: f64,
    grid_spec: &str,
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<bool, String> {
    let seq = load_sequence(seq_path, None)?;
    let mut kernel = build_flavored_kernel(&seq, flavor, delta, cache_dir)?;
    let grid = parse_grid(grid_spec)?;
    if !grid.is_empty() && !kernel.cache_is_warm() {
        let lo = grid.first().copied().unwrap().min(1e-2);
        let hi = grid.last().copied().unwrap().max(1e2);
        // warm on reciprocals too: G is probed at 1/x for the e_M rows
        kernel
            .warm_up((1.0 / hi).min(lo), (1.0 / lo).max(hi), 1e-8)
            .map_err(|e| e.to_string())?;
    }
    let fit = if grid.is_empty() {
        None
    } else {
        Some(kernel.verify_sandwich(&grid).map_err(|e| e.to_string())?)
    };
    let mut csv = String::from("x, abs_e, h_lower(k2), h_upper(k3), im_rel\n");
    for &x in &grid {
        let fit = fit.as_ref().unwrap();
        let e = kernel.eval_e(RayPoint::positive_real(x)).map_err(|e| e.to_string())?;
        let lower = fit.k1 * x * seq.eval_h(fit.k2 / x).map_err(|e| e.to_string())?;
        let upper = x * seq.eval_h(fit.k3 / x).map_err(|e| e.to_string())?;
        let im_rel = if e.norm() > 0.0 { e.im.abs() / e.norm() } else { 0.0 };
        csv.push_str(&format!(
            "{}, {}, {}, {}, {}\n",
            fmt17(x),
            fmt17(e.norm()),
            fmt17(lower),
            fmt17(upper),
            fmt17(im_rel)
        ));
    }
    std::fs::write(out, csv).map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    save_cache(&kernel, cache_dir)?;
    Ok(fit.map(|f| f.pass).unwrap_or(true))
}

fn cmd_moments(
    seq_path: &Path,
    flavor: FlavorArg,
    delta: f64,
    pmax: usize,
    out: Option<&Path>,
    cache_dir: Option<&Path>,
) -> Result<bool, String> {
    let seq = load_sequence(seq_path, None)?;
    let mut kernel = build_flavored_kernel(&seq, flavor, delta, cache_dir)?;
    let table = moment_table(&mut kernel, pmax).map_err(|e| e.to_string())?;
    write_out(out, &table.to_csv())?;
    save_cache(&table.kernel, cache_dir)?;
    Ok(table.equivalence.pass)
}

#[allow(clippy::too_many_arguments)]
fn cmd_extend(
    seq_path: &Path,
    flavor: FlavorArg,
    delta: f64,
    data: &Path,
    z_grid: &str,
    nmax: usize,
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<bool, String> {
    let seq = load_sequence(seq_path, None)?;
    let mut kernel = build_flavored_kernel(&seq, flavor, delta, cache_dir)?;
    let series = load_series(data, &seq)?;
    let need = series.order().max(nmax).max(4);
    let table = moment_table(&mut kernel, need).map_err(|e| e.to_string())?;
    let op = build_extension(&table.kernel, &table, series, 0.1).map_err(|e| e.to_string())?;
    let grid = parse_z_grid(z_grid)?;
    let report = op.asymptotic_report(&grid, nmax).map_err(|e| e.to_string())?;
    let body = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(out, body + "\n")
        .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    save_cache(&table.kernel, cache_dir)?;
    Ok(report.pass)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sum(
    series_path: &Path,
    continuation: &str,
    direction: f64,
    z_spec: &str,
    tau: Option<f64>,
    out: &Path,
    seq_path: Option<&Path>,
    flavor: FlavorArg,
    delta: f64,
    growth: GrowthCert,
    opening: f64,
    allow_violation: bool,
    cache_dir: Option<&Path>,
) -> Result<bool, String> {
    let seq = match seq_path {
        Some(p) => load_sequence(p, None)?,
        None => crate::seqcore::build_sequence(
            crate::seqcore::SequenceSource::GevreyAlpha(1.0),
            64,
        )
        .map_err(|e| e.to_string())?,
    };
    let mut kernel = build_flavored_kernel(&seq, flavor, delta, cache_dir)?;
    let series = load_series(series_path, &seq)?;
    let z = parse_z(z_spec)?;
    let table =
        moment_table(&mut kernel, series.order().max(4)).map_err(|e| e.to_string())?;
    let g = build_continuation(continuation, direction, opening, growth, &seq, allow_violation)?;
    let results = match tau {
        Some(tau) => {
            // fixed direction: still run the continuation/series cross-check
            m_sum(&table.kernel, &table, &series, &g, direction, &[])
                .map_err(|e| e.to_string())?;
            vec![crate::summation::m_laplace(&table.kernel, &g, tau, z)
                .map_err(|e| e.to_string())?]
        }
        None => m_sum(&table.kernel, &table, &series, &g, direction, &[z])
            .map_err(|e| e.to_string())?,
    };
    let r = &results[0];
    let body = serde_json::json!({
        "value": json_complex(r.value),
        "direction_used": r.direction_used,
        "abs_error_estimate": r.quad.abs_error_estimate,
        "evaluations": r.quad.evaluations,
        "z": [r.z.modulus, r.z.argument],
    });
    let body = serde_json::to_string_pretty(&body).map_err(|e| e.to_string())?;
    std::fs::write(out, body + "\n")
        .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    save_cache(&table.kernel, cache_dir)?;
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gap(
    seq_path: &Path,
    flavor: FlavorArg,
    delta: f64,
    data: &Path,
    continuation: &str,
    direction: f64,
    z_grid: &str,
    out: &Path,
    growth: GrowthCert,
    opening: f64,
    allow_violation: bool,
    cache_dir: Option<&Path>,
) -> Result<bool, String> {
    let seq = load_sequence(seq_path, None)?;
    let mut kernel = build_flavored_kernel(&seq, flavor, delta, cache_dir)?;
    let series = load_series(data, &seq)?;
    let table =
        moment_table(&mut kernel, series.order().max(4)).map_err(|e| e.to_string())?;
    let op = build_extension(&table.kernel, &table, series, 0.1).map_err(|e| e.to_string())?;
    let g = build_continuation(continuation, direction, opening, growth, &seq, allow_violation)?;
    let grid = parse_z_grid(z_grid)?;
    let report = flat_gap(&op, &g, direction, &grid).map_err(|e| e.to_string())?;
    let entries: Vec<serde_json::Value> = report
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "modulus": e.modulus,
                "gap": e.gap,
                "ratio6": e.ratio6,
            })
        })
        .collect();
    let body = serde_json::json!({
        "entries": entries,
        "fitted_c": report.fitted_c,
        "fitted_k": report.fitted_k,
        "pass": report.pass,
    });
    let body = serde_json::to_string_pretty(&body).map_err(|e| e.to_string())?;
    std::fs::write(out, body + "\n")
        .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
    save_cache(&table.kernel, cache_dir)?;
    Ok(report.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("1e-2,1e2,5").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[0] - 1e-2).abs() < 1e-12 && (g[4] - 1e2).abs() < 1e-10);
        assert!(parse_grid("1e-2,1e2,0").unwrap().is_empty());
        assert_eq!(parse_grid("1e-2,1e2,1").unwrap(), vec![1e-2]);
        assert!(parse_grid("0,1,3").is_err());
        assert!(parse_grid("1,2").is_err());
    }

    #[test]
    fn z_grid_parsing() {
        let g = parse_z_grid("0.02,0.05,0.1").unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|z| z.argument == 0.0));
        let g = parse_z_grid("0.1,0.2@0,0.3,-0.3").unwrap();
        assert_eq!(g.len(), 6);
        assert!(parse_z_grid("0.1,oops").is_err());
    }

    #[test]
    fn z_point_parsing() {
        let z = parse_z("0.1,0.05").unwrap();
        assert!((z.modulus - 0.1).abs() < 1e-15 && (z.argument - 0.05).abs() < 1e-15);
        assert!(parse_z("0.1").is_err());
    }

    #[test]
    fn help_exits_zero_and_usage_exits_one() {
        assert_eq!(run(["ultrasum", "--help"]), 0);
        assert_eq!(run(["ultrasum", "--definitely-not-a-flag"]), 1);
        assert_eq!(run(["ultrasum"]), 1);
    }
}
