//! Interpolation errors of the P1NC interpolant of the manufactured velocity.
//!
//! cargo run --release --example interpolation

use ncstokes::analysis::{interpolation_errors, observed_order, FCase, ManufacturedCase};

fn main() -> ncstokes::Result<()> {
    let case = ManufacturedCase::new(FCase::One);
    let mut prev: Option<(f64, f64)> = None;
    println!(
        "{:>6} {:>12} {:>6} {:>12} {:>6}",
        "h", "|u-Pu|1h", "order", "|u-Pu|0", "order"
    );
    for n in [4, 8, 16, 32, 64, 128] {
        let (h1, l2) = interpolation_errors(&case, n, 4)?;
        let (o1, o0) = prev.map_or(("-".into(), "-".into()), |(p1, p0)| {
            (
                format!("{:.3}", observed_order(p1, h1)),
                format!("{:.3}", observed_order(p0, l2)),
            )
        });
        println!(
            "{:>6} {:>12.4e} {:>6} {:>12.4e} {:>6}",
            format!("1/{n}"),
            h1,
            o1,
            l2,
            o0
        );
        prev = Some((h1, l2));
    }
    Ok(())
}
