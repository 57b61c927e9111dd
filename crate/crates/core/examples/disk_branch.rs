//! Traces the disk branch from `λ = 0` until the density concentrates.
//!
//! Usage: `cargo run --release --example disk_branch [rings]`

use std::sync::Arc;

use mfcont::continuation::{trace_branch, ContinuationControls};
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    let rings = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(16);
    let mesh = Arc::new(build_mesh(DomainSpec::disk(1.0), rings)?);
    let branch = trace_branch(&mesh, &ContinuationControls::default())?;
    println!("{:>4} {:>10} {:>12} {:>10} {:>10} {:>8} {:>9}", "i", "lambda", "E", "sigma1", "sigma2", "max_u", "dl/ds");
    for (i, p) in branch.points.iter().enumerate() {
        println!(
            "{i:4} {:10.5} {:12.8} {:10.4} {:10.4} {:8.3} {:9.5} {:?}",
            p.lambda(),
            p.energy(),
            p.sigma1(),
            p.sigma2(),
            p.max_u,
            p.dlambda_ds,
            p.kind
        );
    }
    println!("kind {:?}, termination {:?}", branch.kind, branch.termination);
    if let Some(m) = &branch.message {
        println!("{m}");
    }
    for c in &branch.critical_points {
        println!("{:?} at λ = {:.6}, a* = {:.3e}", c.flag, c.lambda, c.a_star);
    }
    Ok(())
}
