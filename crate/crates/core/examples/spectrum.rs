//! Mean-constrained spectrum at one solution: eigenvalues, multiplicities,
//! the dense cross-check, and the second-variation report.

use std::sync::Arc;

use mfcont::meanfield::solve_from_zero;
use mfcont::spectral::{
    constrained_spectrum, default_margin, dense_constrained_spectrum, nondegeneracy_check,
    proportionality_check,
};
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    for (spec, res, lambda) in [
        (DomainSpec::disk(1.0), 12, 12.0),
        (DomainSpec::rectangle(1.0, 1.0), 12, 20.0),
        (DomainSpec::rectangle(4.0, 1.0), 8, 30.0),
    ] {
        let mesh = Arc::new(build_mesh(spec, res)?);
        let sol = solve_from_zero(&mesh, lambda)?;
        let s = constrained_spectrum(&sol, 6)?;
        println!("{spec:?} at λ = {lambda} ({} nodes)", mesh.len());
        for k in 0..s.k_computed {
            println!(
                "  σ{} = {:10.5}  τ = {:10.5}  mult {}  ⟨[ψ]₀,φ⟩ = {:+.3e}",
                k + 1,
                s.sigmas[k],
                s.taus[k],
                s.multiplicity(k),
                s.psi_fourier[k]
            );
        }
        println!("  σ̂₁ (no mean constraint) = {:.5}", s.sigma_hat_1);
        let dense = dense_constrained_spectrum(&sol, 4)?;
        let gap = s
            .sigmas
            .iter()
            .zip(&dense.sigmas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("  dense vs iterative: {gap:.2e}");
        let prop = proportionality_check(&sol, &s)?;
        println!("  proportionality errors: {:.1e}", prop.iter().fold(0.0f64, |m, e| m.max(*e)));
        let q = nondegeneracy_check(&sol, &s, default_margin(lambda))?;
        println!(
            "  max of second variation on {{1, e_E}}⊥: {:.5} (nondegenerate {}, h1 {}, h2 {})",
            q.mu_max, q.nondegenerate, q.h1_holds, q.h2_holds
        );
    }
    Ok(())
}
