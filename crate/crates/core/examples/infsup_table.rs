//! Discrete inf-sup constants of the Q1, P1NC and bubble-enriched pairs.
//!
//! cargo run --release --example infsup_table -- [max n, default 32]

use ncstokes::analysis::{infsup_constant, observed_order};
use ncstokes::solver::{Pair, PairSpec};

fn main() -> ncstokes::Result<()> {
    let max_n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(32);
    let pairs = [Pair::Q1Reduced, Pair::P1ncReduced, Pair::P1ncBubble];
    println!(
        "{:>6} {:>22} {:>22} {:>22}",
        "h", pairs[0], pairs[1], pairs[2]
    );
    let mut prev: Option<Vec<f64>> = None;
    let mut n = 4;
    while n <= max_n {
        let betas = pairs
            .iter()
            .map(|&p| infsup_constant(PairSpec::new(p, n)).map(|e| e.beta))
            .collect::<ncstokes::Result<Vec<_>>>()?;
        let mut line = format!("{:>6}", format!("1/{n}"));
        for (i, b) in betas.iter().enumerate() {
            let order = prev.as_ref().map_or("-".to_string(), |p| {
                format!("{:.2}", observed_order(p[i], *b))
            });
            line.push_str(&format!(" {:>14.4E} {:>7}", b, order));
        }
        println!("{line}");
        prev = Some(betas);
        n *= 2;
    }
    Ok(())
}
