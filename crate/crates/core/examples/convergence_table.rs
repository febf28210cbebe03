//! Errors and observed orders for the manufactured solution.
//!
//! cargo run --release --example convergence_table -- [f-case 1|2] [max n, default 128] [pair]

use ncstokes::analysis::{convergence_study, FCase, ManufacturedCase};
use ncstokes::solver::{Pair, PairSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let case: FCase = args.next().unwrap_or_else(|| "1".into()).parse()?;
    let max_n: usize = args.next().map_or(Ok(128), |s| s.parse())?;
    let pair: Pair = args.next().map_or(Ok(Pair::P1ncReduced), |s| s.parse())?;
    let ns: Vec<usize> = std::iter::successors(Some(4), |n| Some(n * 2))
        .take_while(|n| *n <= max_n)
        .collect();
    let report = convergence_study(PairSpec::new(pair, 4), &ManufacturedCase::new(case), &ns)?;
    let fmt_order = |o: Option<f64>| o.map_or("-".to_string(), |o| format!("{o:.4}"));
    println!("{pair}, f-case {case}");
    println!(
        "{:>7} {:>11} {:>7} {:>11} {:>7} {:>11} {:>7}",
        "h", "|u-uh|1h", "order", "|u-uh|0", "order", "|p-ph|0", "order"
    );
    for l in &report.levels {
        println!(
            "{:>7} {:>11.4E} {:>7} {:>11.4E} {:>7} {:>11.4E} {:>7}",
            format!("1/{}", l.n),
            l.errors.h1_semi,
            fmt_order(l.order_h1),
            l.errors.l2_velocity,
            fmt_order(l.order_l2_velocity),
            l.errors.l2_pressure,
            fmt_order(l.order_l2_pressure),
        );
    }
    Ok(())
}
