//! The mean-constrained linearized spectrum, the second variation on the
//! energy-constrained subspace and the hypothesis checks built from them.
//!
//! The eigenproblem `-Δφ = τ ρ [φ]₀` is solved through the operator
//! `B φ = [G[ρφ]]₀` on ρ-mean-zero fields. `B` is compact, positive and
//! self-adjoint in `⟨·,·⟩_λ`, its eigenvalues are `1/τ`, and unlike the
//! `λ`-scaled form it stays well defined at `λ = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{mdot, top_eigenpairs, EigenPairs, EigenRequest, SpdRankOne};
use crate::meanfield::{weighted_density, Solution};
use crate::mesh::Field;

/// Default number of eigenpairs.
pub const DEFAULT_COUNT: usize = 6;
/// Relative spread under which eigenvalues are reported as one cluster.
pub const CLUSTER_TOL: f64 = 1e-7;
/// Threshold for counting an eigenvalue as nonpositive.
pub const NONPOSITIVE_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-12;

/// Eigenpairs of the mean-constrained linearization at one solution.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub lambda: f64,
    pub k_computed: usize,
    /// Ascending.
    pub sigmas: Vec<f64>,
    /// `τ_k = λ + σ_k`.
    pub taus: Vec<f64>,
    /// Eigenfields with `‖[φ_k]₀‖_λ = 1`.
    pub phis: Vec<Field>,
    pub alpha0s: Vec<f64>,
    pub alpha_es: Vec<f64>,
    /// `⟨[ψ]₀, [φ_k]₀⟩_λ`.
    pub psi_fourier: Vec<f64>,
    /// First eigenvalue of the linearization without the mean constraint.
    pub sigma_hat_1: f64,
    /// `‖-Δφ_k − τ_k ρ [φ_k]₀‖ / ‖τ_k ρ [φ_k]₀‖` in the weighted norm.
    pub residuals: Vec<f64>,
    /// Index groups of numerically repeated eigenvalues.
    pub clusters: Vec<Vec<usize>>,
}

impl Spectrum {
    pub fn sigma1(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma2(&self) -> Option<f64> {
        self.sigmas.get(1).copied()
    }

    /// `μ_k = λ / (λ + σ_k)`.
    pub fn mus(&self) -> Vec<f64> {
        self.taus.iter().map(|t| self.lambda / t).collect()
    }

    /// Size of the cluster containing eigenvalue `k`.
    pub fn multiplicity(&self, k: usize) -> usize {
        self.clusters
            .iter()
            .find(|c| c.contains(&k))
            .map_or(1, |c| c.len())
    }
}

/// Second-variation diagnostics on the subspace orthogonal to `e₀` and `e_E`.
#[derive(Clone, Debug, Serialize)]
pub struct QuadraticFormReport {
    pub lambda: f64,
    /// Largest value of `A_λ(φ) / ‖φ‖²_λ` over the constrained subspace.
    pub mu_max: f64,
    #[serde(skip)]
    pub maximizer: Option<Field>,
    pub margin: f64,
    pub nondegenerate: bool,
    /// `-λ / (λ + σ₂)`.
    pub mu0_required: f64,
    /// `mu_max ≤ mu0_required`.
    pub h1_holds: bool,
    /// `σ₂ ≥ ¼ λ|σ₁| / (λ + σ₁)`, vacuous for `σ₁ ≥ 0`.
    pub h2_holds: bool,
    /// `α_1(ψ)² / ‖[ψ]₀‖²_λ`.
    pub gamma_sq: f64,
    /// `λγ² + σ₁ > 0` and `σ₂ ≥ λ(λ + γ²σ₁) / (λγ² + σ₁)`.
    pub sufficient_stability_holds: bool,
}

fn mean_zero_operator<'a>(
    sol: &'a Solution,
    metric: &'a [f64],
) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    move |x: &[f64]| {
        let rhs: Vec<f64> = metric.iter().zip(x).map(|(m, v)| m * v).collect();
        let mut u = sol.mesh.solve_stiffness(&rhs)?;
        let mean: f64 = metric.iter().zip(&u).map(|(m, v)| m * v).sum();
        u.iter_mut().for_each(|v| *v -= mean);
        Ok(u)
    }
}

fn orient(phi: &mut Field, reference: &[f64], metric: &[f64]) {
    let d = mdot(metric, phi.values(), reference);
    let flip = if d.abs() > 1e-10 {
        d < 0.0
    } else {
        let k = phi
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if v.abs() > phi.values()[b].abs() + 1e-12 { i } else { b });
        phi.values()[k] < 0.0
    };
    if flip {
        phi.values_mut().iter_mut().for_each(|v| *v = -*v);
    }
}

pub(crate) fn cluster(taus: &[f64]) -> Vec<Vec<usize>> {
    let scale = taus.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (k, t) in taus.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (taus[*c.last().unwrap()] - t).abs() <= CLUSTER_TOL * scale => c.push(k),
            _ => out.push(vec![k]),
        }
    }
    out
}

/// Assembles a [`Spectrum`] from mean-zero eigenvectors `[φ_k]₀` of `B` with
/// eigenvalues `ν_k = 1/τ_k` (descending).
fn assemble(sol: &Solution, pairs: EigenPairs, sigma_hat_1: f64) -> Result<Spectrum> {
    let mesh = &sol.mesh;
    let geom = sol.geometry()?;
    let metric = geom.metric().to_vec();
    let psi0 = geom.psi_centered().clone();
    let e_e = geom.e_energy()?;
    let lambda = sol.lambda;

    let mut taus = Vec::new();
    let mut phis = Vec::new();
    let mut residuals = Vec::new();
    for (nu, v) in pairs.values.iter().zip(pairs.vectors) {
        if !(*nu > 0.0) {
            return Err(Error::EigenNonConvergence {
                iterations: pairs.iterations,
                residual: f64::NAN,
            });
        }
        let tau = 1.0 / nu;
        let rhs: Vec<f64> = metric.iter().zip(&v).map(|(m, x)| m * x).collect();
        let u = mesh.solve_stiffness(&rhs)?;
        let mut phi = sol.psi.with_values(u.iter().map(|x| tau * x).collect());
        let centered = geom.project_zero_mean(&phi);
        let n = geom.norm(&centered);
        phi = phi.scaled(1.0 / n);
        orient(&mut phi, psi0.values(), &metric);

        let centered = geom.project_zero_mean(&phi);
        let lap = mesh.neg_laplacian(&phi);
        let target = sol
            .rho
            .zip_map(&centered, |r, c| tau * r * c)?;
        let diff = lap.add_scaled(-1.0, &target)?;
        residuals.push(mesh.inner(&diff, &diff).sqrt() / mesh.inner(&target, &target).sqrt());
        taus.push(tau);
        phis.push(phi);
    }

    let sigmas: Vec<f64> = taus.iter().map(|t| t - lambda).collect();
    let alpha0s = phis.iter().map(|p| geom.alpha0(p)).collect();
    let alpha_es = phis.iter().map(|p| geom.inner(p, &e_e)).collect();
    let psi_fourier = phis
        .iter()
        .map(|p| geom.inner(&psi0, &geom.project_zero_mean(p)))
        .collect();
    let clusters = cluster(&taus);
    Ok(Spectrum {
        lambda,
        k_computed: taus.len(),
        sigmas,
        taus,
        phis,
        alpha0s,
        alpha_es,
        psi_fourier,
        sigma_hat_1,
        residuals,
        clusters,
    })
}

/// First eigenvalue of `-Δφ − λρ[φ]₀ = σ̂ ρ φ`, from the largest eigenvalue
/// of `(K + λ ccᵀ)⁻¹ W diag(ρ)` with `c = Wρ`.
pub fn sigma_hat_1(sol: &Solution) -> Result<f64> {
    let metric = weighted_density(&sol.mesh, &sol.rho);
    let solver = SpdRankOne::new(&sol.mesh, metric.clone(), sol.lambda)?;
    let req = EigenRequest::new(&metric, 1).with_tol(1e-10);
    let pairs = top_eigenpairs(metric.len(), &req, |x| {
        let rhs: Vec<f64> = metric.iter().zip(x).map(|(m, v)| m * v).collect();
        solver.solve(&rhs)
    })?;
    Ok(1.0 / pairs.values[0] - sol.lambda)
}

/// The `k` smallest eigenvalues `σ` of `-Δφ = (λ + σ) ρ [φ]₀` with their
/// eigenfields and coefficients, by a block Krylov iteration on `B`.
pub fn constrained_spectrum(sol: &Solution, k: usize) -> Result<Spectrum> {
    if k == 0 {
        return Err(Error::Config("spectrum needs k >= 1".into()));
    }
    let metric = weighted_density(&sol.mesh, &sol.rho);
    let n = metric.len();
    let req = EigenRequest::new(&metric, k)
        .with_constraints(vec![vec![1.0; n]])
        .with_tol(EIGEN_TOL);
    let pairs = top_eigenpairs(n, &req, mean_zero_operator(sol, &metric))?;
    let hat = sigma_hat_1(sol)?;
    assemble(sol, pairs, hat)
}

/// Same spectrum from a dense eigendecomposition of the symmetrized operator.
/// Intended for small meshes only.
pub fn dense_constrained_spectrum(sol: &Solution, k: usize) -> Result<Spectrum> {
    use faer::{linalg::solvers::Solve, Mat, Side};

    let mesh = &sol.mesh;
    let n = mesh.len();
    if n > 4000 {
        return Err(Error::Config(format!("dense spectrum refused for {n} nodes")));
    }
    let metric = weighted_density(mesh, &sol.rho);
    let sq: Vec<f64> = metric.iter().map(|m| m.sqrt()).collect();
    let mut kmat = Mat::<f64>::zeros(n, n);
    for (i, cell) in mesh.links().iter().enumerate() {
        for l in cell {
            kmat[(i, i)] += l.conductance;
            if let crate::mesh::Neighbor::Interior(j) = l.neighbor {
                kmat[(i, j)] -= l.conductance;
            }
        }
    }
    let llt = kmat
        .llt(Side::Lower)
        .map_err(|_| Error::LinearSolve {
            context: "dense Cholesky of the stiffness matrix".into(),
            residual: f64::NAN,
        })?;
    let rhs = Mat::<f64>::from_fn(n, n, |i, j| if i == j { sq[i] } else { 0.0 });
    let kinv_s = llt.solve(&rhs);
    // P S K⁻¹ S P with P = I − s sᵀ, s = sqrt(m).
    let mut core = Mat::<f64>::from_fn(n, n, |i, j| sq[i] * kinv_s[(i, j)]);
    for _ in 0..2 {
        let col_s: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| sq[i] * core[(i, j)]).sum())
            .collect();
        for i in 0..n {
            for j in 0..n {
                core[(i, j)] -= sq[i] * col_s[j];
            }
        }
        core = core.transpose().to_owned();
    }
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (core[(i, j)] + core[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenNonConvergence {
            iterations: 0,
            residual: f64::NAN,
        })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let count = k.min(n - 1);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for col in (0..n).rev().take(count) {
        values.push(s[col]);
        vectors.push((0..n).map(|i| u[(i, col)] / sq[i]).collect());
    }
    let pairs = EigenPairs {
        values,
        vectors,
        iterations: 0,
    };
    let hat = sigma_hat_1(sol)?;
    assemble(sol, pairs, hat)
}

/// Relative error of `α₀(φ_k) = ‖[ψ]₀‖_λ τ_k α_E(φ_k)` for each eigenpair.
pub fn proportionality_check(sol: &Solution, spec: &Spectrum) -> Result<Vec<f64>> {
    let geom = sol.geometry()?;
    let e_e = geom.e_energy()?;
    Ok(spec
        .phis
        .iter()
        .zip(&spec.taus)
        .map(|(phi, tau)| {
            let lhs = geom.alpha0(phi);
            let rhs = sol.psi0_norm * tau * geom.inner(phi, &e_e);
            let scale = lhs.abs().max(rhs.abs()).max(geom.norm(phi));
            (lhs - rhs).abs() / scale
        })
        .collect())
}

/// `A_λ(φ) = λ ∫ ρφ G[ρφ] − ∫ ρφ²`.
pub fn quadratic_form(sol: &Solution, phi: &Field) -> Result<f64> {
    let mesh = &sol.mesh;
    mesh.check(phi)?;
    let f = sol.rho.zip_map(phi, |r, p| r * p)?;
    let g = mesh.green_apply(&f)?;
    Ok(sol.lambda * mesh.inner(&f, &g) - mesh.inner(&f, phi))
}

/// Default strictness margin for the negativity of the second variation.
pub fn default_margin(lambda: f64) -> f64 {
    (1e-8 * lambda).max(1e-12)
}

/// Largest Rayleigh value of `A_λ` on the subspace orthogonal to `e₀` and
/// `e_E`, together with the stability hypotheses that use `σ₁, σ₂`.
pub fn nondegeneracy_check(
    sol: &Solution,
    spec: &Spectrum,
    margin: f64,
) -> Result<QuadraticFormReport> {
    let sigma2 = spec
        .sigma2()
        .ok_or_else(|| Error::Config("nondegeneracy check needs at least two eigenvalues".into()))?;
    let sigma1 = spec.sigma1();
    let lambda = sol.lambda;
    let geom = sol.geometry()?;
    let metric = geom.metric().to_vec();
    let n = metric.len();
    let psi0 = geom.e_energy()?;
    let req = EigenRequest::new(&metric, 1)
        .with_constraints(vec![vec![1.0; n], psi0.values().to_vec()])
        .with_tol(1e-10);
    let mut op = mean_zero_operator(sol, &metric);
    let pairs = top_eigenpairs(n, &req, |x| op(x))?;
    let nu = pairs.values[0];
    let maximizer = sol.psi.with_values(pairs.vectors[0].clone());
    let mu_max = lambda * nu - 1.0;

    let mu0_required = -lambda / (lambda + sigma2);
    let h2_holds = sigma1 >= 0.0 || sigma2 >= 0.25 * lambda * sigma1.abs() / (lambda + sigma1);
    let alpha1 = spec.psi_fourier[0];
    let gamma_sq = alpha1 * alpha1 / (sol.psi0_norm * sol.psi0_norm);
    let lead = lambda * gamma_sq + sigma1;
    let sufficient_stability_holds =
        lead > 0.0 && sigma2 >= lambda * (lambda + gamma_sq * sigma1) / lead;

    Ok(QuadraticFormReport {
        lambda,
        mu_max,
        maximizer: Some(maximizer),
        margin,
        nondegenerate: mu_max <= -margin,
        mu0_required,
        h1_holds: mu_max <= mu0_required,
        h2_holds,
        gamma_sq,
        sufficient_stability_holds,
    })
}

/// Number of computed `σ_k ≤ 0`, with multiplicity.
pub fn nonpositive_count(spec: &Spectrum) -> usize {
    let tol = NONPOSITIVE_TOL * spec.lambda.max(1.0);
    spec.sigmas.iter().filter(|s| **s <= tol).count()
}

/// `⟨[φ_i]₀, [φ_j]₀⟩_λ − δ_ij`, largest entry.
pub fn orthogonality_defect(sol: &Solution, spec: &Spectrum) -> Result<f64> {
    let geom = sol.geometry()?;
    let centered: Vec<Field> = spec.phis.iter().map(|p| geom.project_zero_mean(p)).collect();
    let mut worst = 0.0f64;
    for (i, a) in centered.iter().enumerate() {
        for (j, b) in centered.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((geom.inner(a, b) - target).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::solve_from_zero;
    use crate::mesh::{build_mesh, build_polar_mesh, DomainSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn iterative_and_dense_agree() {
        let m = Arc::new(build_mesh(DomainSpec::rectangle(1.0, 1.0), 10).unwrap());
        let sol = solve_from_zero(&m, 10.0).unwrap();
        let a = constrained_spectrum(&sol, 4).unwrap();
        let b = dense_constrained_spectrum(&sol, 4).unwrap();
        for (x, y) in a.sigmas.iter().zip(&b.sigmas) {
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
    }

    #[test]
    fn disk_at_zero_resolves_near_triple_value() {
        // radial and first angular modes share τ = π j₁,₁² in the continuum;
        // the grid keeps only the angular pair exactly degenerate
        let m = Arc::new(build_polar_mesh(1.0, 24, 48).unwrap());
        let sol = solve_from_zero(&m, 0.0).unwrap();
        let spec = constrained_spectrum(&sol, 4).unwrap();
        let exact = PI * 3.831705970207512f64.powi(2);
        assert!(spec.taus[..3].iter().all(|t| (t - exact).abs() < 0.5), "{:?}", spec.taus);
        assert!(spec.clusters.iter().any(|c| c.len() == 2), "{:?}", spec.taus);
        assert!(spec.residuals.iter().all(|r| *r < 1e-8));
        assert!(orthogonality_defect(&sol, &spec).unwrap() < 1e-8);
    }

    #[test]
    fn quadratic_form_of_eigenfields() {
        let m = Arc::new(build_mesh(DomainSpec::disk(1.0), 12).unwrap());
        let sol = solve_from_zero(&m, 4.0 * PI).unwrap();
        let spec = constrained_spectrum(&sol, 4).unwrap();
        let g = sol.geometry().unwrap();
        for k in 0..4 {
            let p = g.project_zero_mean(&spec.phis[k]);
            let a = quadratic_form(&sol, &p).unwrap();
            let expect = -spec.sigmas[k] / spec.taus[k];
            assert!((a - expect).abs() < 1e-8 * expect.abs().max(1.0), "{a} {expect}");
        }
        let props = proportionality_check(&sol, &spec).unwrap();
        assert!(props.iter().all(|e| *e < 1e-6), "{props:?}");
        let rep = nondegeneracy_check(&sol, &spec, default_margin(sol.lambda)).unwrap();
        assert!(rep.nondegenerate && rep.mu_max < 0.0);
    }

    #[test]
    fn square_at_zero_has_flat_form() {
        let m = Arc::new(build_mesh(DomainSpec::rectangle(1.0, 1.0), 8).unwrap());
        let sol = solve_from_zero(&m, 0.0).unwrap();
        let spec = constrained_spectrum(&sol, 3).unwrap();
        let rep = nondegeneracy_check(&sol, &spec, default_margin(0.0)).unwrap();
        assert!((rep.mu_max + 1.0).abs() < 1e-14);
        assert_eq!(nonpositive_count(&spec), 0);
    }

    #[test]
    fn clustering_groups_close_values() {
        let c = cluster(&[1.0, 1.0 + 1e-9, 2.0, 3.0, 3.0]);
        assert_eq!(c, vec![vec![0, 1], vec![2], vec![3, 4]]);
    }
}
