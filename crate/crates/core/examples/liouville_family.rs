//! The radial family `u_a(r) = 2 ln((1 + a²)/(1 + a² r²))` at
//! `λ = 8π a²/(1 + a²)` reproduced by Newton's method on polar grids.

use std::sync::Arc;

use mfcont::continuation::EIGHT_PI;
use mfcont::meanfield::solve_from_zero;
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    for a2 in [0.5, 1.0, 3.0, 10.0] {
        let lambda = EIGHT_PI * a2 / (1.0 + a2);
        println!("a² = {a2}, λ = {lambda:.6}");
        let mut prev: Option<f64> = None;
        for rings in [16, 32, 64] {
            let mesh = Arc::new(build_mesh(DomainSpec::disk(1.0), rings)?);
            let sol = solve_from_zero(&mesh, lambda)?;
            let err = mesh
                .nodes()
                .iter()
                .zip(sol.psi.values())
                .map(|(p, psi)| {
                    let r2 = p[0] * p[0] + p[1] * p[1];
                    (lambda * psi - 2.0 * ((1.0 + a2) / (1.0 + a2 * r2)).ln()).abs()
                })
                .fold(0.0, f64::max);
            let order = prev.map_or(String::new(), |e| format!(" order {:.2}", (e / err).log2()));
            prev = Some(err);
            println!(
                "  {rings:3} rings: sup |λψ - u_a| = {err:.3e}{order}  ({} Newton steps)",
                sol.iterations
            );
        }
    }
    Ok(())
}
