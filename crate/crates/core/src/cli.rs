//! Command-line front end: `infsup`, `converge`, `equivalence` and `spurious`.
//!
//! Exit codes: 0 on success, 2 for usage errors, 3 for numerical failures or
//! failed tolerance checks (a JSON diagnostic goes to stderr).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    convergence_against_reference, convergence_study, equivalence_report, infsup_constant_seeded,
    observed_order, spurious_modes_for_pair, ConvergenceReport, EigenMethod, EquivalenceReport,
    FCase, InfSupEstimate, ManufacturedCase, SpuriousReport, DENSE_INFSUP_LIMIT,
};
use crate::assembly::{TabulatedForcing, DEFAULT_QUADRATURE_ORDER};
use crate::error::Error;
use crate::solver::{Forcing, Pair, PairSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Relative residual above which a solve or eigen estimate is reported as failed.
const RESIDUAL_LIMIT: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "ncstokes",
    version,
    about = "Nonconforming Stokes element experiments on uniform square meshes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discrete inf-sup constants per pair and mesh level.
    Infsup(InfsupArgs),
    /// Errors and observed orders for the manufactured solution or a discrete reference.
    Converge(ConvergeArgs),
    /// Compare the checkerboard-reduced and bubble-enriched solutions.
    Equivalence(EquivalenceArgs),
    /// Dimension of the spurious pressure kernel of a velocity space.
    Spurious(SpuriousArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Pretty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output format.
    #[arg(long, value_enum, default_value = "pretty")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Viscosity.
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    /// Gauss points per axis for assembly and error norms.
    #[arg(long, default_value_t = DEFAULT_QUADRATURE_ORDER)]
    pub quadrature: usize,
    /// Seed for randomized starting vectors.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InfsupArgs {
    /// Pair ids, comma separated: p1nc-p0t, p1ncb-p0, q1-p0t, dssy-p0.
    #[arg(long, value_delimiter = ',', default_value = "q1-p0t,p1nc-p0t,p1ncb-p0", value_parser = parse_pair)]
    pub pair: Vec<Pair>,
    /// Mesh levels: `4,8,16` or the doubling range `4..32`.
    #[arg(long, value_parser = parse_levels)]
    pub n: Levels,
    /// Eigensolver; `auto` is dense up to n = 32.
    #[arg(long, value_enum, default_value = "auto")]
    pub method: Method,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[arg(long, default_value = "p1nc-p0t", value_parser = parse_pair)]
    pub pair: Pair,
    /// Manufactured pressure profile.
    #[arg(long, default_value = "1", conflicts_with = "forcing_file")]
    pub f_case: FCase,
    /// Tabulated body force (`# n=.. order=..`, then `j,k,q,fx,fy`).
    #[arg(long, requires = "reference")]
    pub forcing_file: Option<PathBuf>,
    /// Discrete reference for tabulated forcing, `dssy:<n>`.
    #[arg(long, value_parser = parse_reference, requires = "forcing_file")]
    pub reference: Option<usize>,
    /// Mesh levels: `4,8,16` or the doubling range `4..128`.
    #[arg(long, value_parser = parse_levels)]
    pub n: Levels,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EquivalenceArgs {
    /// Mesh levels (even).
    #[arg(long, value_parser = parse_levels, default_value = "4,8,16")]
    pub n: Levels,
    /// Manufactured forcing.
    #[arg(long, conflicts_with = "constant")]
    pub f_case: Option<FCase>,
    /// Constant body force `fx,fy`.
    #[arg(long, value_parser = parse_constant, allow_hyphen_values = true)]
    pub constant: Option<[f64; 2]>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct SpuriousArgs {
    /// Velocity space, named by pair: p1nc-p0 (or p1nc-p0t), p1ncb-p0, q1-p0t, dssy-p0.
    #[arg(long, value_parser = parse_velocity_pair)]
    pub pair: Pair,
    #[arg(long, value_parser = parse_levels)]
    pub n: Levels,
    #[command(flatten)]
    pub common: Common,
}

/// A nonempty list of mesh sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(pub Vec<usize>);

/// `a..b` expands to `a, 2a, 4a, …` up to `b`; otherwise a comma list.
pub fn parse_levels(s: &str) -> Result<Levels, String> {
    let s = s.trim();
    let levels = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| format!("bad range start in `{s}`"))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|_| format!("bad range end in `{s}`"))?;
        if a == 0 || b < a {
            return Err(format!("empty range `{s}`"));
        }
        std::iter::successors(Some(a), |n| Some(n * 2))
            .take_while(|n| *n <= b)
            .collect()
    } else {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("`{t}` is not a mesh size"))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    if levels.is_empty() {
        return Err("empty n-list".into());
    }
    Ok(Levels(levels))
}

fn parse_pair(s: &str) -> Result<Pair, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_velocity_pair(s: &str) -> Result<Pair, String> {
    match s {
        "p1nc-p0" => Ok(Pair::P1ncReduced),
        other => parse_pair(other),
    }
}

fn parse_reference(s: &str) -> Result<usize, String> {
    let n = s
        .strip_prefix("dssy:")
        .ok_or_else(|| format!("reference must look like `dssy:<n>` (got `{s}`)"))?;
    n.parse().map_err(|_| format!("`{n}` is not a mesh size"))
}

fn parse_constant(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `fx,fy` (got `{s}`)"))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{t}` is not a number"))
    };
    Ok([parse(a)?, parse(b)?])
}

enum Failure {
    Usage(String),
    Numerical(serde_json::Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. }
            | Error::Singular { .. }
            | Error::NotConverged { .. }
            | Error::EmptyConstrainedSpace => Failure::Numerical(json!({
                "schema": 1,
                "error": e.to_string(),
                "details": match &e {
                    Error::NotPositiveDefinite { index, pivot } => json!({ "pivot_index": index, "pivot": pivot }),
                    Error::Singular { curvature, near_null } => json!({ "curvature": curvature, "near_null": near_null }),
                    Error::NotConverged { iterations, residual } => json!({ "iterations": iterations, "residual": residual }),
                    _ => serde_json::Value::Null,
                },
            })),
            other => Failure::Usage(other.to_string()),
        }
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(None) => EXIT_OK,
        Ok(Some(failed)) => {
            let _ = writeln!(
                stderr,
                "{}",
                json!({ "schema": 1, "error": "tolerance check failed", "report": failed })
            );
            EXIT_NUMERICAL
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Numerical(diag)) => {
            let _ = writeln!(stderr, "{diag}");
            EXIT_NUMERICAL
        }
    }
}

/// A rendered report plus whether all of its tolerance checks passed.
struct Report {
    csv: Vec<Vec<String>>,
    json: serde_json::Value,
    pretty: String,
    passed: bool,
}

/// Returns the JSON report when one of its tolerance checks failed.
fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<Option<serde_json::Value>, Failure> {
    let (report, common) = match &cli.command {
        Command::Infsup(a) => (infsup(a)?, &a.common),
        Command::Converge(a) => (converge(a)?, &a.common),
        Command::Equivalence(a) => (equivalence(a)?, &a.common),
        Command::Spurious(a) => (spurious(a)?, &a.common),
    };
    let text = match common.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &report.csv {
                w.write_record(row)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?)
                .expect("csv output is utf-8")
        }
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&report.json).expect("report serializes")
        ),
        Format::Pretty => report.pretty,
    };
    let io = |e: std::io::Error| Failure::Usage(e.to_string());
    match &common.output {
        Some(path) => File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(io)?,
        None => stdout.write_all(text.as_bytes()).map_err(io)?,
    }
    Ok((!report.passed).then_some(report.json))
}

fn common_spec(pair: Pair, n: usize, c: &Common) -> PairSpec {
    PairSpec::new(pair, n)
        .with_nu(c.nu)
        .with_quadrature(c.quadrature)
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.4}"))
}

fn envelope<T: Serialize>(command: &str, body: T) -> serde_json::Value {
    json!({ "schema": 1, "command": command, "results": body })
}

fn infsup(a: &InfsupArgs) -> Result<Report, Failure> {
    let mut rows = vec![[
        "pair",
        "n",
        "h",
        "beta",
        "order",
        "method",
        "iterations",
        "residual",
    ]
    .map(String::from)
    .to_vec()];
    let mut pretty = format!(
        "{:<10} {:>6} {:>12} {:>7} {:>8} {:>10}\n",
        "pair", "h", "beta", "order", "method", "residual"
    );
    let mut all: Vec<(InfSupEstimate, Option<f64>)> = Vec::new();
    let mut passed = true;
    for &pair in &a.pair {
        let mut prev: Option<f64> = None;
        for &n in &a.n.0 {
            let spec = common_spec(pair, n, &a.common);
            let method = match a.method {
                Method::Auto if n <= DENSE_INFSUP_LIMIT => EigenMethod::Dense,
                Method::Auto | Method::Lanczos => EigenMethod::Lanczos,
                Method::Dense => EigenMethod::Dense,
            };
            let est = infsup_constant_seeded(spec, method, a.common.seed)?;
            let order = prev.map(|p| observed_order(p, est.beta));
            passed &= est.residual <= 1e-6;
            rows.push(vec![
                pair.to_string(),
                n.to_string(),
                sci(est.h),
                sci(est.beta),
                opt(order),
                format!("{:?}", est.method).to_lowercase(),
                est.iterations.to_string(),
                sci(est.residual),
            ]);
            pretty.push_str(&format!(
                "{:<10} {:>6} {:>12.4E} {:>7} {:>8} {:>10.2e}\n",
                pair.to_string(),
                format!("1/{n}"),
                est.beta,
                order.map_or("-".to_string(), |o| format!("{o:.2}")),
                format!("{:?}", est.method).to_lowercase(),
                est.residual
            ));
            prev = Some(est.beta);
            all.push((est, order));
        }
    }
    let body: Vec<_> = all
        .iter()
        .map(|(e, order)| json!({ "estimate": e, "order": order }))
        .collect();
    Ok(Report {
        csv: rows,
        json: envelope("infsup", body),
        pretty,
        passed,
    })
}

fn convergence_rows(r: &ConvergenceReport) -> (Vec<Vec<String>>, String, bool) {
    let mut rows = vec![[
        "pair",
        "n",
        "h",
        "h1_semi",
        "order_h1",
        "l2_velocity",
        "order_l2_velocity",
        "l2_pressure",
        "order_l2_pressure",
        "cg_iterations",
        "relative_residual",
    ]
    .map(String::from)
    .to_vec()];
    let mut pretty = format!(
        "{} against {}\n{:>7} {:>11} {:>7} {:>11} {:>7} {:>11} {:>7}\n",
        r.pair, r.target, "h", "|u-uh|1h", "order", "|u-uh|0", "order", "|p-ph|0", "order"
    );
    let mut passed = true;
    let o = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for l in &r.levels {
        passed &= l.relative_residual <= RESIDUAL_LIMIT;
        rows.push(vec![
            r.pair.to_string(),
            l.n.to_string(),
            sci(l.h),
            sci(l.errors.h1_semi),
            opt(l.order_h1),
            sci(l.errors.l2_velocity),
            opt(l.order_l2_velocity),
            sci(l.errors.l2_pressure),
            opt(l.order_l2_pressure),
            l.cg_iterations.to_string(),
            sci(l.relative_residual),
        ]);
        pretty.push_str(&format!(
            "{:>7} {:>11.4E} {:>7} {:>11.4E} {:>7} {:>11.4E} {:>7}\n",
            format!("1/{}", l.n),
            l.errors.h1_semi,
            o(l.order_h1),
            l.errors.l2_velocity,
            o(l.order_l2_velocity),
            l.errors.l2_pressure,
            o(l.order_l2_pressure)
        ));
    }
    (rows, pretty, passed)
}

fn converge(a: &ConvergeArgs) -> Result<Report, Failure> {
    let template = common_spec(a.pair, a.n.0[0], &a.common);
    let report = match (&a.forcing_file, a.reference) {
        (Some(path), Some(reference_n)) => {
            let file =
                File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let forcing = TabulatedForcing::read_csv(BufReader::new(file), None)?;
            convergence_against_reference(template, &forcing, &a.n.0, reference_n)?
        }
        _ => convergence_study(
            template,
            &ManufacturedCase::new(a.f_case).with_nu(a.common.nu),
            &a.n.0,
        )?,
    };
    let (csv, pretty, passed) = convergence_rows(&report);
    Ok(Report {
        csv,
        json: envelope("converge", &report),
        pretty,
        passed,
    })
}

fn equivalence(a: &EquivalenceArgs) -> Result<Report, Failure> {
    let f_case = match (a.f_case, a.constant) {
        (None, None) => Some(FCase::One),
        (c, _) => c,
    };
    let case = f_case.map(|c| ManufacturedCase::new(c).with_nu(a.common.nu));
    let manufactured = |x: f64, y: f64| case.map_or([0.0; 2], |c| c.forcing(x, y));
    let constant = a.constant.unwrap_or([0.0; 2]);
    let constant_f = move |_: f64, _: f64| constant;
    let forcing = if case.is_some() {
        Forcing::Pointwise(&manufactured)
    } else {
        Forcing::Pointwise(&constant_f)
    };
    let mut reports: Vec<EquivalenceReport> = Vec::new();
    for &n in &a.n.0 {
        reports.push(equivalence_report(forcing, n)?);
    }
    let header = [
        "n",
        "h",
        "max_velocity_difference",
        "bubble_load",
        "predicted_alpha",
        "observed_alpha",
        "checkerboard_residual",
        "bubble_coefficient",
        "bubble_checkerboard_pairing",
        "passed",
    ];
    let mut rows = vec![header.map(String::from).to_vec()];
    let mut pretty = format!(
        "{:>4} {:>12} {:>13} {:>13} {:>12} {:>12} {:>9} {}\n",
        "n",
        "max|u-u'|",
        "predicted a",
        "observed a",
        "sigma resid",
        "bubble",
        "h*b(psi,s)",
        "pass"
    );
    for r in &reports {
        rows.push(vec![
            r.n.to_string(),
            sci(r.h),
            sci(r.max_velocity_difference),
            sci(r.bubble_load),
            sci(r.predicted_alpha),
            sci(r.observed_alpha),
            sci(r.checkerboard_residual),
            sci(r.bubble_coefficient),
            format!("{:.15}", r.bubble_checkerboard_pairing),
            r.passed.to_string(),
        ]);
        pretty.push_str(&format!(
            "{:>4} {:>12.2e} {:>13.6e} {:>13.6e} {:>12.2e} {:>12.2e} {:>9.6} {}\n",
            r.n,
            r.max_velocity_difference,
            r.predicted_alpha,
            r.observed_alpha,
            r.checkerboard_residual,
            r.bubble_coefficient,
            r.bubble_checkerboard_pairing,
            if r.passed { "yes" } else { "NO" }
        ));
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(Report {
        csv: rows,
        json: envelope("equivalence", &reports),
        pretty,
        passed,
    })
}

fn spurious(a: &SpuriousArgs) -> Result<Report, Failure> {
    let mut reports: Vec<SpuriousReport> = Vec::new();
    for &n in &a.n.0 {
        reports.push(spurious_modes_for_pair(a.pair, n)?);
    }
    let mut rows = vec![[
        "velocity",
        "n",
        "dimension",
        "checkerboard_alignment",
        "smallest_relative",
    ]
    .map(String::from)
    .to_vec()];
    let mut pretty = format!(
        "{:<16} {:>4} {:>9} {:>22}\n",
        "velocity", "n", "dimension", "checkerboard alignment"
    );
    for r in &reports {
        rows.push(vec![
            r.velocity.clone(),
            r.n.to_string(),
            r.dimension.to_string(),
            format!("{:.15}", r.checkerboard_alignment),
            sci(r.smallest_relative),
        ]);
        pretty.push_str(&format!(
            "{:<16} {:>4} {:>9} {:>22.15}\n",
            r.velocity, r.n, r.dimension, r.checkerboard_alignment
        ));
    }
    Ok(Report {
        csv: rows,
        json: envelope("spurious", &reports),
        pretty,
        passed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("ncstokes").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn level_syntax() {
        assert_eq!(parse_levels("4..32").unwrap().0, vec![4, 8, 16, 32]);
        assert_eq!(parse_levels("4..40").unwrap().0, vec![4, 8, 16, 32]);
        assert_eq!(parse_levels("4,8, 16").unwrap().0, vec![4, 8, 16]);
        assert_eq!(parse_levels("6").unwrap().0, vec![6]);
        assert!(parse_levels("").is_err());
        assert!(parse_levels(",").is_err());
        assert!(parse_levels("8..4").is_err());
        assert!(parse_levels("x").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["infsup", "--n", ""]).0, EXIT_USAGE);
        assert_eq!(run_args(&["infsup", "--n", "4", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(
            run_args(&["infsup", "--pair", "p2-p1", "--n", "4"]).0,
            EXIT_USAGE
        );
        let (code, _, err) = run_args(&["spurious", "--n", "3", "--pair", "p1ncb-p0"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("even"), "{err}");
        assert_eq!(run_args(&["converge", "--n", "4,12"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_lists_flags() {
        let (code, out, _) = run_args(&["converge", "--help"]);
        assert_eq!(code, EXIT_OK);
        for flag in [
            "--pair",
            "--f-case",
            "--forcing-file",
            "--reference",
            "--n",
            "--format",
            "--output",
            "--nu",
            "--quadrature",
            "--seed",
        ] {
            assert!(out.contains(flag), "missing {flag}");
        }
    }

    #[test]
    fn spurious_report() {
        let (code, out, _) = run_args(&[
            "spurious", "--pair", "p1nc-p0", "--n", "4", "--format", "csv",
        ]);
        assert_eq!(code, EXIT_OK);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[2], "1");
        let (_, out, _) = run_args(&[
            "spurious", "--pair", "p1ncb-p0", "--n", "4", "--format", "csv",
        ]);
        assert_eq!(out.lines().nth(1).unwrap().split(',').nth(2), Some("0"));
    }

    #[test]
    fn csv_output_is_reproducible() {
        let args = [
            "infsup", "--pair", "p1nc-p0t", "--n", "4,8", "--format", "csv",
        ];
        let (code, a, _) = run_args(&args);
        assert_eq!(code, EXIT_OK);
        assert_eq!(a, run_args(&args).1);
        let beta: f64 = a
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .parse()
            .unwrap();
        assert!((beta - 0.5).abs() < 1e-3);
    }

    #[test]
    fn json_has_schema() {
        let (code, out, _) = run_args(&[
            "equivalence",
            "--n",
            "4",
            "--constant",
            "1,0",
            "--format",
            "json",
        ]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["results"][0]["passed"], true);
    }
}
