//! A 4×1 rectangle stays bounded through `λ = 8π` and turns at a fold
//! `λ* > 8π`; past it the first constrained eigenvalue is negative.
//!
//! Usage: `cargo run --release --example rectangle_fold [resolution]`

use std::sync::Arc;

use mfcont::continuation::{trace_branch, ContinuationControls, EIGHT_PI};
use mfcont::spectral::nonpositive_count;
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    let res = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let mesh = Arc::new(build_mesh(DomainSpec::rectangle(4.0, 1.0), res)?);
    let branch = trace_branch(&mesh, &ContinuationControls::default())?;
    let Some(fold) = branch.critical_points.first() else {
        println!("no fold before {:?}", branch.termination);
        return Ok(());
    };
    println!("kind {:?}, λ* = {:.6} (λ*/8π = {:.4})", branch.kind, fold.lambda, fold.lambda / EIGHT_PI);
    println!("a* = {:.4e}, E* = {:.8}", fold.a_star, fold.energy);
    let lo = fold.index.saturating_sub(4);
    let hi = (fold.index + 5).min(branch.points.len());
    for p in &branch.points[lo..hi] {
        println!(
            "  λ {:.8}  E {:.8}  σ₁ {:+.4e}  dλ/ds {:+.4e}  nonpositive {}",
            p.lambda(),
            p.energy(),
            p.sigma1(),
            p.dlambda_ds,
            nonpositive_count(&p.spectrum)
        );
    }
    // a second mode crosses zero further along the upper branch
    if let Some(p) = branch.points[fold.index..].iter().find(|p| p.sigma2() <= 0.0) {
        println!("σ₂ crosses zero near λ = {:.4}", p.lambda());
    }
    println!("termination {:?}: {}", branch.termination, branch.message.as_deref().unwrap_or(""));
    Ok(())
}
