//! The nonlinear problem: density map, energy and entropy functionals,
//! ρ-weighted geometry and the Newton solver.

use std::sync::Arc;

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{mdot, RankOneSolver};
use crate::mesh::{Field, Mesh};

/// Default Newton tolerance on the weighted residual norm.
pub const NEWTON_TOL: f64 = 1e-10;
/// Default Newton iteration cap.
pub const NEWTON_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 10;
/// Bordered solves worse than this are treated as a singular Jacobian.
const SINGULAR_SOLVE_RESIDUAL: f64 = 1e-8;

/// `exp(λψ - max)` and its normalizing integral, the building block of the
/// density and of the log-density.
fn shifted_exponentials(mesh: &Mesh, lambda: f64, psi: &Field) -> Result<(Vec<f64>, f64, f64)> {
    let top = psi
        .iter()
        .map(|&v| lambda * v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::NonFinite("density exponent"));
    }
    let e: Vec<f64> = psi.iter().map(|&v| (lambda * v - top).exp()).collect();
    let z: f64 = mesh.weights().iter().zip(&e).map(|(w, v)| w * v).sum();
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::NonFinite("density normalization"));
    }
    Ok((e, z, top))
}

/// `ρ = e^{λψ} / ∫ e^{λψ}`, evaluated with the maximum exponent subtracted.
pub fn density(mesh: &Mesh, lambda: f64, psi: &Field) -> Result<Field> {
    mesh.check(psi)?;
    let (e, z, _) = shifted_exponentials(mesh, lambda, psi)?;
    Ok(psi.with_values(e.into_iter().map(|v| v / z).collect()))
}

/// `ln ρ`, finite even where `ρ` underflows.
fn log_density(mesh: &Mesh, lambda: f64, psi: &Field) -> Result<Field> {
    let (_, z, top) = shifted_exponentials(mesh, lambda, psi)?;
    let shift = top + z.ln();
    Ok(psi.map(|v| lambda * v - shift))
}

/// `E = ½ ∫ ρ G[ρ]`.
pub fn energy(mesh: &Mesh, rho: &Field) -> Result<f64> {
    let u = mesh.green_apply(rho)?;
    Ok(0.5 * mesh.inner(rho, &u))
}

/// `S = -∫ ρ ln ρ`.
pub fn entropy(mesh: &Mesh, rho: &Field) -> Result<f64> {
    mesh.check(rho)?;
    let mut s = 0.0;
    for (node, (w, r)) in mesh.weights().iter().zip(rho.iter()).enumerate() {
        if !(*r > 0.0) {
            return Err(Error::NonPositiveDensity { node });
        }
        s -= w * r * r.ln();
    }
    Ok(s)
}

/// Pointwise residual `W⁻¹Kψ − ρ(ψ)` of the discrete equation.
pub fn residual(mesh: &Mesh, lambda: f64, psi: &Field) -> Result<Field> {
    let rho = density(mesh, lambda, psi)?;
    mesh.neg_laplacian(psi).add_scaled(-1.0, &rho)
}

/// `‖f‖_W = (∫ f²)^{1/2}`.
pub fn weighted_norm(mesh: &Mesh, f: &Field) -> f64 {
    mesh.inner(f, f).sqrt()
}

/// Which linearization [`jacobian_apply`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianVariant {
    /// `η ↦ W⁻¹Kη − λρ[η]₀`.
    Exact,
    /// Drops the mean projection, `η ↦ W⁻¹Kη − λρη`. Only useful as a
    /// negative control for derivative checks.
    WithoutMeanProjection,
}

/// Applies the linearization of the residual at `(λ, ψ)`.
pub fn jacobian_apply(
    mesh: &Mesh,
    lambda: f64,
    rho: &Field,
    eta: &Field,
    variant: JacobianVariant,
) -> Result<Field> {
    mesh.check(rho)?;
    mesh.check(eta)?;
    let mean = match variant {
        JacobianVariant::Exact => mesh.inner(rho, eta),
        JacobianVariant::WithoutMeanProjection => 0.0,
    };
    let lap = mesh.neg_laplacian(eta);
    let values = lap
        .iter()
        .zip(rho.iter().zip(eta.iter()))
        .map(|(l, (r, e))| l - lambda * r * (e - mean))
        .collect();
    Ok(eta.with_values(values))
}

/// Relative mismatch between a central difference of the residual along
/// `direction` and the Jacobian applied to it.
pub fn jacobian_fd_check(
    mesh: &Mesh,
    lambda: f64,
    psi: &Field,
    direction: &Field,
    variant: JacobianVariant,
) -> Result<f64> {
    let scale = psi.sup_norm().max(1.0) / direction.sup_norm().max(f64::MIN_POSITIVE);
    let eps = 1e-5 * scale;
    let plus = residual(mesh, lambda, &psi.add_scaled(eps, direction)?)?;
    let minus = residual(mesh, lambda, &psi.add_scaled(-eps, direction)?)?;
    let fd = plus.zip_map(&minus, |a, b| (a - b) / (2.0 * eps))?;
    let rho = density(mesh, lambda, psi)?;
    let jv = jacobian_apply(mesh, lambda, &rho, direction, variant)?;
    let diff = fd.add_scaled(-1.0, &jv)?;
    Ok(weighted_norm(mesh, &diff) / weighted_norm(mesh, &jv).max(f64::MIN_POSITIVE))
}

/// `W J` at the given state, as a sparse-plus-rank-one solver:
/// `K − λ W diag(ρ) + λ (Wρ)(Wρ)ᵀ`.
pub(crate) fn jacobian_solver<'m>(
    mesh: &'m Mesh,
    lambda: f64,
    rho: &Field,
) -> Result<RankOneSolver<'m>> {
    let c: Vec<f64> = mesh.weights().iter().zip(rho.iter()).map(|(w, r)| w * r).collect();
    let shift: Vec<f64> = c.iter().map(|v| lambda * v).collect();
    RankOneSolver::new(mesh, shift, c, lambda)
}

/// A converged (or evaluated) state of the discrete problem.
#[derive(Clone, Debug)]
pub struct Solution {
    pub(crate) mesh: Arc<Mesh>,
    pub lambda: f64,
    pub psi: Field,
    pub rho: Field,
    pub energy: f64,
    pub entropy: f64,
    pub mean_psi: f64,
    pub psi0_norm: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl Solution {
    /// Evaluates every derived quantity for a given `(λ, ψ)` without solving.
    pub fn evaluate(mesh: &Arc<Mesh>, lambda: f64, psi: Field) -> Result<Solution> {
        mesh.check(&psi)?;
        let rho = density(mesh, lambda, &psi)?;
        let log_rho = log_density(mesh, lambda, &psi)?;
        let entropy = -mesh.inner(&rho, &log_rho);
        let energy = energy(mesh, &rho)?;
        let mean_psi = mesh.inner(&rho, &psi);
        let var = mdot(
            &weighted_density(mesh, &rho),
            psi.values(),
            psi.values(),
        ) - mean_psi * mean_psi;
        let residual = mesh.neg_laplacian(&psi).add_scaled(-1.0, &rho)?;
        Ok(Solution {
            mesh: Arc::clone(mesh),
            lambda,
            residual_norm: weighted_norm(mesh, &residual),
            psi,
            rho,
            energy,
            entropy,
            mean_psi,
            psi0_norm: var.max(0.0).sqrt(),
            iterations: 0,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// `λψ`, the solution of `-Δu = λρ` written in the classical normalization.
    pub fn u_max(&self) -> f64 {
        self.lambda * self.psi.max()
    }

    pub fn geometry(&self) -> Result<WeightedGeometry<'_>> {
        WeightedGeometry::new(self)
    }

    /// `‖ψ‖²_{H¹₀} = ψᵀKψ`.
    pub fn dirichlet_energy(&self) -> f64 {
        self.mesh.dirichlet_form(&self.psi)
    }
}

pub(crate) fn weighted_density(mesh: &Mesh, rho: &Field) -> Vec<f64> {
    mesh.weights().iter().zip(rho.iter()).map(|(w, r)| w * r).collect()
}

/// Newton's method for the discrete equation at fixed `λ`, with the exact
/// Jacobian (including its rank-one mean term) and residual-based damping.
pub fn newton_solve(
    mesh: &Arc<Mesh>,
    lambda: f64,
    psi_init: &Field,
    tol: f64,
    max_iter: usize,
) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("Newton tolerance must be positive, got {tol}")));
    }
    mesh.check(psi_init)?;
    if psi_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial guess"));
    }
    let mut psi = psi_init.clone();
    let mut res = residual(mesh, lambda, &psi)?;
    let mut norm = weighted_norm(mesh, &res);
    let mut iter = 0;
    while norm > tol {
        if iter >= max_iter {
            return Err(Error::NonConvergence {
                lambda,
                iterations: iter,
                residual: norm,
            });
        }
        iter += 1;
        let rho = density(mesh, lambda, &psi)?;
        let solver = jacobian_solver(mesh, lambda, &rho)?;
        let rhs: Vec<f64> = mesh
            .weights()
            .iter()
            .zip(res.iter())
            .map(|(w, r)| -w * r)
            .collect();
        let (step, solve_res) = solver.solve(&rhs).map_err(|_| Error::NearFold { lambda })?;
        if solve_res > SINGULAR_SOLVE_RESIDUAL {
            return Err(Error::NearFold { lambda });
        }
        let step = psi.with_values(step);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = psi.add_scaled(t, &step)?;
            if let Ok(r) = residual(mesh, lambda, &trial) {
                let n = weighted_norm(mesh, &r);
                if n.is_finite() && n < norm {
                    accepted = Some((trial, r, n));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((p, r, n)) => {
                debug!("newton lambda={lambda:.6} iter={iter} damping={t} residual={n:.3e}");
                psi = p;
                res = r;
                norm = n;
            }
            None => {
                return Err(Error::NonConvergence {
                    lambda,
                    iterations: iter,
                    residual: norm,
                })
            }
        }
    }
    let mut sol = Solution::evaluate(mesh, lambda, psi)?;
    sol.iterations = iter;
    Ok(sol)
}

/// Solves at `λ` starting from `ψ = 0`.
pub fn solve_from_zero(mesh: &Arc<Mesh>, lambda: f64) -> Result<Solution> {
    newton_solve(mesh, lambda, &mesh.zeros(), NEWTON_TOL, NEWTON_MAX_ITER)
}

/// Inner products, projections and the orthonormal pair `e₀, e_E` attached
/// to a solution.
pub struct WeightedGeometry<'s> {
    sol: &'s Solution,
    metric: Vec<f64>,
    psi_centered: Field,
}

impl<'s> WeightedGeometry<'s> {
    pub fn new(sol: &'s Solution) -> Result<Self> {
        let metric = weighted_density(&sol.mesh, &sol.rho);
        let mean = mdot(&metric, sol.psi.values(), &vec![1.0; metric.len()]);
        let psi_centered = sol.psi.map(|v| v - mean);
        Ok(WeightedGeometry {
            sol,
            metric,
            psi_centered,
        })
    }

    pub fn solution(&self) -> &Solution {
        self.sol
    }

    /// The diagonal `wᵢρᵢ` of the ρ-weighted inner product.
    pub fn metric(&self) -> &[f64] {
        &self.metric
    }

    /// `⟨f, g⟩_λ = ∫ ρ f g`.
    pub fn inner(&self, f: &Field, g: &Field) -> f64 {
        mdot(&self.metric, f.values(), g.values())
    }

    pub fn norm(&self, f: &Field) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// `⟨f⟩_λ = ∫ ρ f`.
    pub fn mean(&self, f: &Field) -> f64 {
        self.metric.iter().zip(f.iter()).map(|(m, v)| m * v).sum()
    }

    /// `[f]₀ = f − ⟨f⟩_λ`.
    pub fn project_zero_mean(&self, f: &Field) -> Field {
        let m = self.mean(f);
        f.map(|v| v - m)
    }

    /// `[ψ]₀`.
    pub fn psi_centered(&self) -> &Field {
        &self.psi_centered
    }

    pub fn e0(&self) -> Field {
        self.sol.psi.map(|_| 1.0)
    }

    /// `e_E = [ψ]₀ / ‖[ψ]₀‖_λ`.
    pub fn e_energy(&self) -> Result<Field> {
        let n = self.norm(&self.psi_centered);
        if !(n > 0.0) {
            return Err(Error::DegenerateGeometry("psi is constant"));
        }
        Ok(self.psi_centered.scaled(1.0 / n))
    }

    /// `α₀(f) = ⟨f, e₀⟩_λ`.
    pub fn alpha0(&self, f: &Field) -> f64 {
        self.mean(f)
    }

    /// `α_E(f) = ⟨f, e_E⟩_λ`.
    pub fn alpha_e(&self, f: &Field) -> Result<f64> {
        Ok(self.inner(f, &self.e_energy()?))
    }
}

pub fn weighted_inner(sol: &Solution, f: &Field, g: &Field) -> Result<f64> {
    sol.mesh.check(f)?;
    sol.mesh.check(g)?;
    Ok(WeightedGeometry::new(sol)?.inner(f, g))
}

pub fn project_zero_mean(sol: &Solution, f: &Field) -> Result<Field> {
    sol.mesh.check(f)?;
    Ok(WeightedGeometry::new(sol)?.project_zero_mean(f))
}

pub fn alpha0(sol: &Solution, f: &Field) -> Result<f64> {
    sol.mesh.check(f)?;
    Ok(WeightedGeometry::new(sol)?.alpha0(f))
}

pub fn alpha_e(sol: &Solution, f: &Field) -> Result<f64> {
    sol.mesh.check(f)?;
    WeightedGeometry::new(sol)?.alpha_e(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainSpec};
    use std::f64::consts::PI;

    fn disk(n: usize) -> Arc<Mesh> {
        Arc::new(build_mesh(DomainSpec::disk(1.0), n).unwrap())
    }

    #[test]
    fn density_is_uniform_at_zero_lambda() {
        let m = disk(8);
        let psi = m.field_from_fn(|x, y| x * x - y);
        let rho = density(&m, 0.0, &psi).unwrap();
        let u = 1.0 / m.quadrature_area();
        assert!(rho.iter().all(|r| (r - u).abs() < 1e-14));
        assert!((m.integrate(&rho) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_survives_huge_exponents() {
        let m = disk(8);
        let psi = m.field_from_fn(|x, _| 1e3 * x);
        let rho = density(&m, 10.0, &psi).unwrap();
        assert!(rho.iter().all(|r| r.is_finite()));
        assert!((m.integrate(&rho) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_of_zero_state() {
        let m = disk(8);
        let r = residual(&m, 3.0, &m.zeros()).unwrap();
        let u = 1.0 / m.quadrature_area();
        assert!(r.iter().all(|v| (v + u).abs() < 1e-14));
    }

    #[test]
    fn linear_problem_takes_one_step() {
        let m = disk(16);
        let sol = solve_from_zero(&m, 0.0).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.entropy - m.quadrature_area().ln()).abs() < 1e-12);
    }

    #[test]
    fn energy_identity_holds_to_rounding() {
        let m = disk(16);
        let sol = solve_from_zero(&m, 4.0 * PI).unwrap();
        assert!((2.0 * sol.energy - sol.mean_psi).abs() < 1e-8 * sol.mean_psi);
        assert!((sol.dirichlet_energy() - sol.mean_psi).abs() < 1e-8 * sol.mean_psi);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = disk(12);
        let sol = solve_from_zero(&m, 2.0 * PI).unwrap();
        let dir = m.field_from_fn(|x, y| (3.0 * x).sin() + y * y);
        let exact =
            jacobian_fd_check(&m, sol.lambda, &sol.psi, &dir, JacobianVariant::Exact).unwrap();
        let broken = jacobian_fd_check(
            &m,
            sol.lambda,
            &sol.psi,
            &dir,
            JacobianVariant::WithoutMeanProjection,
        )
        .unwrap();
        assert!(exact < 1e-6, "{exact}");
        assert!(broken > 1e-3, "{broken}");
    }

    #[test]
    fn geometry_basis_is_orthonormal() {
        let m = disk(12);
        let sol = solve_from_zero(&m, 5.0).unwrap();
        let g = sol.geometry().unwrap();
        let e0 = g.e0();
        let ee = g.e_energy().unwrap();
        assert!((g.norm(&e0) - 1.0).abs() < 1e-12);
        assert!((g.norm(&ee) - 1.0).abs() < 1e-12);
        assert!(g.inner(&e0, &ee).abs() < 1e-12);
        assert!((g.alpha_e(&ee).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_tolerance_is_a_config_error() {
        let m = disk(8);
        assert!(matches!(
            newton_solve(&m, 1.0, &m.zeros(), -1.0, 5),
            Err(Error::Config(_))
        ));
    }
}
