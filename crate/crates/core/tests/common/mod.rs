//! Test-side dense oracle shared by the integration suites.

use std::f64::consts::PI;

use mfcont::mesh::{Mesh, Neighbor};
use mfcont::Solution;
use nalgebra::{DMatrix, SymmetricEigen};

fn dense_stiffness(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.len();
    let mut k = DMatrix::zeros(n, n);
    for (i, cell) in mesh.links().iter().enumerate() {
        for link in cell {
            k[(i, i)] += link.conductance;
            if let Neighbor::Interior(j) = link.neighbor {
                k[(i, j)] -= link.conductance;
            }
        }
    }
    k
}

/// `σ_k` from `Kφ = τ (D − ccᵀ) φ`, `D = diag(wρ)`, `c = wρ`, via the
/// reciprocal problem `(D − ccᵀ) φ = ν K φ` in Cholesky coordinates.
pub fn oracle_sigmas(sol: &Solution, count: usize) -> Vec<f64> {
    let mesh = sol.mesh();
    let n = mesh.len();
    let k = dense_stiffness(mesh);
    let c: Vec<f64> = mesh
        .weights()
        .iter()
        .zip(sol.rho.values())
        .map(|(w, r)| w * r)
        .collect();
    let mut m = DMatrix::from_fn(n, n, |i, j| -c[i] * c[j]);
    for i in 0..n {
        m[(i, i)] += c[i];
    }
    let l = k.cholesky().expect("stiffness is SPD").l();
    let linv = l.clone().try_inverse().unwrap();
    let s = &linv * m * linv.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut nus: Vec<f64> = eig.eigenvalues.iter().copied().filter(|v| *v > 1e-12).collect();
    nus.sort_by(|a, b| b.partial_cmp(a).unwrap());
    nus.iter().take(count).map(|nu| 1.0 / nu - sol.lambda).collect()
}

/// Composite Simpson rule on `[0, 1]`.
fn simpson(f: impl Fn(f64) -> f64, intervals: usize) -> f64 {
    let h = 1.0 / intervals as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..intervals {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// `E₀` and `dE/dλ(0)` on the unit disk by radial quadrature of the uniform
/// state `ψ₀ = (1 − r²) / 4π` and its covariance.
pub fn radial_oracles() -> (f64, f64) {
    let psi0 = |r: f64| (1.0 - r * r) / (4.0 * PI);
    let area = PI;
    let int_psi = simpson(|r| 2.0 * PI * r * psi0(r), 2000);
    let int_psi2 = simpson(|r| 2.0 * PI * r * psi0(r).powi(2), 2000);
    let e0 = 0.5 * int_psi / area;
    let slope = (int_psi2 - int_psi * int_psi / area) / area;
    (e0, slope)
}
