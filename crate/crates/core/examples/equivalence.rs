//! Solve with both stable pairs and check that the velocities agree and the
//! pressures differ by `−h (f, ψ_b) σ`.
//!
//! cargo run --release --example equivalence

use ncstokes::analysis::equivalence_report;
use ncstokes::solver::Forcing;

fn main() -> ncstokes::Result<()> {
    // asymmetric, so (f, ψ_b) does not cancel over the macros
    let f = |x: f64, y: f64| [y * y + (3.0 * x).sin(), x * (1.0 - y)];
    println!(
        "{:>4} {:>11} {:>14} {:>14} {:>11} {:>11}",
        "n", "max|u-u'|", "-h(f,psi)", "(p'-p,s)/|s|2", "resid", "bubble"
    );
    for n in [2, 4, 8, 16, 32] {
        let r = equivalence_report(Forcing::Pointwise(&f), n)?;
        println!(
            "{:>4} {:>11.2e} {:>14.6e} {:>14.6e} {:>11.2e} {:>11.2e}",
            n,
            r.max_velocity_difference,
            r.predicted_alpha,
            r.observed_alpha,
            r.checkerboard_residual,
            r.bubble_coefficient
        );
    }
    Ok(())
}
