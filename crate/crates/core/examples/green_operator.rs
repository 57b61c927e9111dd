//! Dirichlet Green operator on the disk: mean Green energy against `1/16π`
//! and second-order convergence of a Poisson solve.

use std::f64::consts::PI;

use mfcont::{build_mesh, mean_green_energy, DomainSpec};

fn main() -> mfcont::Result<()> {
    println!("rings  nodes  E0             rel.err    poisson sup err");
    let mut prev: Option<f64> = None;
    for rings in [16, 32, 64, 128] {
        let mesh = build_mesh(DomainSpec::disk(1.0), rings)?;
        let e0 = mean_green_energy(&mesh)?;
        // -Δu = 1 has u = (1 - r²)/4
        let u = mesh.green_apply(&mesh.constant(1.0))?;
        let err = mesh
            .nodes()
            .iter()
            .zip(u.values())
            .map(|(p, v)| (v - (1.0 - p[0] * p[0] - p[1] * p[1]) / 4.0).abs())
            .fold(0.0, f64::max);
        let order = prev.map_or(String::new(), |e| format!("  order {:.2}", (e / err).log2()));
        prev = Some(err);
        println!(
            "{rings:5}  {:5}  {e0:.10}  {:.2e}   {err:.2e}{order}",
            mesh.len(),
            (e0 * 16.0 * PI - 1.0).abs()
        );
    }
    Ok(())
}
