//! Assemble and solve one problem, then write the matrices in MatrixMarket
//! format, the solution as CSV and the solver diagnostics as JSON.
//!
//! cargo run --release --example export_system -- [pair] [n] [output dir]

use std::fs::File;
use std::path::PathBuf;

use ncstokes::analysis::{FCase, ManufacturedCase};
use ncstokes::solver::{solve_discretization, Discretization, Forcing, Pair, PairSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let pair: Pair = args.next().map_or(Ok(Pair::P1ncBubble), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(8), |s| s.parse())?;
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "stokes-export".into()));

    let case = ManufacturedCase::new(FCase::One);
    let f = |x: f64, y: f64| case.forcing(x, y);
    let disc = Discretization::new(PairSpec::new(pair, n))?;
    let system = disc.assemble(Forcing::Pointwise(&f))?;
    system.write_matrix_market(&dir, &format!("{pair} n={n}"))?;

    let sol = solve_discretization(&disc, Forcing::Pointwise(&f))?;
    sol.write_velocity_csv(File::create(dir.join("velocity.csv"))?)?;
    sol.write_pressure_csv(File::create(dir.join("pressure.csv"))?)?;
    serde_json::to_writer_pretty(
        File::create(dir.join("diagnostics.json"))?,
        &sol.diagnostics_json(),
    )?;
    println!(
        "wrote A.mtx, B.mtx, Mp.mtx, velocity.csv, pressure.csv, diagnostics.json to {}",
        dir.display()
    );
    println!(
        "residual {:.2e}, {} CG steps",
        sol.diagnostics.residual_inf, sol.diagnostics.cg_iterations
    );
    Ok(())
}
