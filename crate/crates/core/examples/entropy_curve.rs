//! Microcanonical curve `S(E)` of a branch: `β = -λ`, concavity and the
//! landmark energies, written as CSV on stdout.
//!
//! Usage: `cargo run --release --example entropy_curve [aspect] [resolution]`

use std::sync::Arc;

use mfcont::continuation::{trace_branch, ContinuationControls};
use mfcont::thermo::{energy_parametrize, verify_entropy_identities};
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    let mut args = std::env::args().skip(1);
    let aspect: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(4.0);
    let res = args.next().and_then(|a| a.parse().ok()).unwrap_or(12);
    let mesh = Arc::new(build_mesh(DomainSpec::rectangle(aspect, 1.0), res)?);
    let branch = trace_branch(&mesh, &ContinuationControls::default())?;
    let curve = energy_parametrize(&branch)?;
    println!("E,S,beta,d2S_dE2");
    for r in &curve.rows {
        println!("{:.10e},{:.10e},{:.10e},{:.10e}", r.energy, r.entropy, r.beta, r.d2s_de2);
    }
    let check = verify_entropy_identities(&curve)?;
    eprintln!("kind {:?}", curve.kind);
    eprintln!("max |dS/dE + λ| (relative): {:.2e}", check.max_slope_error);
    for iv in &curve.concavity_intervals {
        eprintln!("curvature sign {:+} on [{:.6}, {:.6}]", iv.sign, iv.e_lo, iv.e_hi);
    }
    eprintln!("{:#?}", curve.landmarks);
    Ok(())
}
