//! Dimension of the spurious pressure kernel for every velocity space, and the
//! P1NC mode written out as element values.
//!
//! cargo run --release --example spurious_modes

use ncstokes::analysis::spurious_modes_for_pair;
use ncstokes::solver::Pair;

fn main() -> ncstokes::Result<()> {
    for pair in Pair::ALL {
        for n in [2, 4, 8] {
            let r = spurious_modes_for_pair(pair, n)?;
            println!(
                "{:<16} n={:<2} dim={} checkerboard alignment={:.12}",
                r.velocity, n, r.dimension, r.checkerboard_alignment
            );
        }
    }
    let r = spurious_modes_for_pair(Pair::P1ncReduced, 4)?;
    let mode = &r.basis[0];
    let scale = mode[0].abs();
    println!("\nP1NC kernel at n=4, scaled to unit entries (row k = 4 on top):");
    for k in (0..4).rev() {
        let row: Vec<String> = (0..4)
            .map(|j| format!("{:+.0}", mode[j + 4 * k] / scale))
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
