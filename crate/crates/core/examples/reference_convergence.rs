//! Tabulated body force and convergence against a DSSY × P₀ solution on a
//! finer mesh, for data that has no closed-form solution.
//!
//! cargo run --release --example reference_convergence

use std::io::BufReader;

use ncstokes::analysis::convergence_against_reference;
use ncstokes::assembly::TabulatedForcing;
use ncstokes::solver::{Pair, PairSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference_n = 64;
    // a force with a kink along x = 1/3
    let f = |x: f64, y: f64| [(x - 1.0 / 3.0).abs() * y, (5.0 * x * y).cos()];
    let table = TabulatedForcing::sample(reference_n, 4, f)?;
    let path = std::env::temp_dir().join("ncstokes-forcing.csv");
    table.write_csv(std::fs::File::create(&path)?)?;
    let table = TabulatedForcing::read_csv(
        BufReader::new(std::fs::File::open(&path)?),
        Some((reference_n, 4)),
    )?;

    for pair in [Pair::P1ncReduced, Pair::P1ncBubble] {
        let report = convergence_against_reference(
            PairSpec::new(pair, 4),
            &table,
            &[4, 8, 16, 32],
            reference_n,
        )?;
        println!("{pair} against {}", report.target);
        for l in &report.levels {
            let o = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
            println!(
                "  1/{:<3} |u-ur|1h {:.3e} ({})  |u-ur|0 {:.3e} ({})  |p-pr|0 {:.3e} ({})",
                l.n,
                l.errors.h1_semi,
                o(l.order_h1),
                l.errors.l2_velocity,
                o(l.order_l2_velocity),
                l.errors.l2_pressure,
                o(l.order_l2_pressure)
            );
        }
    }
    Ok(())
}
