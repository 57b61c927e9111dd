//! Sparse factorizations with nonlocal rank-one borders, and a block
//! eigensolver for operators that are self-adjoint in a diagonal metric.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::{Mat, MatMut, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{norm2, Mesh};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ mᵢ aᵢ bᵢ`.
pub(crate) fn mdot(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
    m.iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

pub(crate) fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += c * b;
    }
}

/// LU factor of `K - diag(shift)`, reusing the symbolic analysis of `K`.
pub(crate) struct ShiftedLu<'m> {
    mesh: &'m Mesh,
    shift: Vec<f64>,
    lu: Lu<usize, f64>,
}

impl<'m> ShiftedLu<'m> {
    pub fn new(mesh: &'m Mesh, shift: Vec<f64>) -> Result<Self> {
        let mut a = mesh.stiffness().clone();
        {
            let vals = a.val_mut();
            for (k, &p) in mesh.diag_positions().iter().enumerate() {
                vals[p] -= shift[k];
            }
        }
        let lu = Lu::try_new_with_symbolic(mesh.lu_symbolic().clone(), a.as_ref()).map_err(
            |e| Error::LinearSolve {
                context: format!("sparse LU of the shifted stiffness matrix: {e:?}"),
                residual: f64::NAN,
            },
        )?;
        Ok(ShiftedLu { mesh, shift, lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        let n = x.len();
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
        x
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.mesh.apply_stiffness(x);
        for ((v, s), xi) in y.iter_mut().zip(&self.shift).zip(x) {
            *v -= s * xi;
        }
        y
    }
}

/// Solver for `(K - diag(shift) + γ c cᵀ) x = b` by Sherman–Morrison on the
/// sparse LU, followed by iterative refinement on the full operator. The
/// refinement keeps the solve accurate where the sparse part alone is nearly
/// singular but the bordered operator is not.
pub(crate) struct RankOneSolver<'m> {
    base: ShiftedLu<'m>,
    c: Vec<f64>,
    gamma: f64,
    z: Vec<f64>,
    denom: f64,
}

const REFINE_STEPS: usize = 6;
const REFINE_TOL: f64 = 1e-13;

impl<'m> RankOneSolver<'m> {
    pub fn new(mesh: &'m Mesh, shift: Vec<f64>, c: Vec<f64>, gamma: f64) -> Result<Self> {
        let base = ShiftedLu::new(mesh, shift)?;
        let z = base.solve(&c);
        let denom = 1.0 + gamma * dot(&c, &z);
        if !denom.is_finite() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank-one bordered factorization"));
        }
        Ok(RankOneSolver {
            base,
            c,
            gamma,
            z,
            denom,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.base.apply(x);
        axpy(&mut y, self.gamma * dot(&self.c, x), &self.c);
        y
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.base.solve(b);
        let m = self.gamma * dot(&self.c, &y) / self.denom;
        axpy(&mut y, -m, &self.z);
        y
    }

    /// Solves and returns the achieved relative residual.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        let scale = norm2(b);
        if scale == 0.0 {
            return Ok((vec![0.0; b.len()], 0.0));
        }
        let mut x = self.raw_solve(b);
        let mut res = f64::INFINITY;
        for _ in 0..=REFINE_STEPS {
            let ax = self.apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
            let new_res = norm2(&r) / scale;
            if !new_res.is_finite() {
                return Err(Error::NonFinite("bordered solve"));
            }
            if new_res >= res {
                break;
            }
            res = new_res;
            if res <= REFINE_TOL {
                break;
            }
            let dx = self.raw_solve(&r);
            axpy(&mut x, 1.0, &dx);
        }
        Ok((x, res))
    }
}

/// Solves `K x = b + γ c (cᵀx)`-free form `(K + γ c cᵀ) x = b` with the cached
/// Cholesky factor of `K`.
pub(crate) struct SpdRankOne<'m> {
    mesh: &'m Mesh,
    c: Vec<f64>,
    gamma: f64,
    z: Vec<f64>,
    denom: f64,
}

impl<'m> SpdRankOne<'m> {
    pub fn new(mesh: &'m Mesh, c: Vec<f64>, gamma: f64) -> Result<Self> {
        let z = mesh.solve_stiffness(&c)?;
        let denom = 1.0 + gamma * dot(&c, &z);
        Ok(SpdRankOne {
            mesh,
            c,
            gamma,
            z,
            denom,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.mesh.solve_stiffness(b)?;
        let m = self.gamma * dot(&self.c, &y) / self.denom;
        axpy(&mut y, -m, &self.z);
        Ok(y)
    }
}

/// Largest eigenpairs of an operator that is self-adjoint in the metric
/// `⟨a, b⟩ = Σ mᵢ aᵢ bᵢ`, restricted to the metric complement of a set of
/// constraint vectors.
pub(crate) struct EigenRequest<'a> {
    pub metric: &'a [f64],
    pub constraints: Vec<Vec<f64>>,
    pub count: usize,
    pub block: usize,
    pub tol: f64,
    pub max_basis: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct EigenPairs {
    /// Descending.
    pub values: Vec<f64>,
    /// Metric-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl<'a> EigenRequest<'a> {
    pub fn new(metric: &'a [f64], count: usize) -> Self {
        EigenRequest {
            metric,
            constraints: Vec::new(),
            count,
            block: count.clamp(4, 8),
            tol: 1e-12,
            max_basis: 0,
            max_iterations: 400,
            seed: 0x5eed_2d0f,
        }
    }

    pub fn with_constraints(mut self, constraints: Vec<Vec<f64>>) -> Self {
        self.constraints = constraints;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

struct Basis<'a> {
    metric: &'a [f64],
    constraints: Vec<Vec<f64>>,
    vecs: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
}

impl<'a> Basis<'a> {
    fn project_constraints(&self, x: &mut [f64]) {
        for q in &self.constraints {
            let c = mdot(self.metric, q, x);
            axpy(x, -c, q);
        }
    }

    /// Orthogonalizes against constraints and the basis (two passes) and
    /// normalizes. Returns `None` when nothing new is left.
    fn orthonormalize(&self, mut x: Vec<f64>) -> Option<Vec<f64>> {
        let before = mdot(self.metric, &x, &x).sqrt();
        if before == 0.0 || !before.is_finite() {
            return None;
        }
        for _ in 0..2 {
            self.project_constraints(&mut x);
            for v in &self.vecs {
                let c = mdot(self.metric, v, &x);
                axpy(&mut x, -c, v);
            }
        }
        let after = mdot(self.metric, &x, &x).sqrt();
        if after <= 1e-10 * before {
            return None;
        }
        x.iter_mut().for_each(|v| *v /= after);
        Some(x)
    }
}

/// Block Krylov–Davidson iteration with Rayleigh–Ritz extraction, residual
/// expansion and thick restart.
pub(crate) fn top_eigenpairs(
    n: usize,
    req: &EigenRequest<'_>,
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<EigenPairs> {
    let metric = req.metric;
    let mut constraints: Vec<Vec<f64>> = Vec::new();
    for c in &req.constraints {
        let mut x = c.clone();
        let before = mdot(metric, &x, &x).sqrt();
        for _ in 0..2 {
            for q in &constraints {
                let d = mdot(metric, q, &x);
                axpy(&mut x, -d, q);
            }
        }
        let after = mdot(metric, &x, &x).sqrt();
        if before == 0.0 || after <= 1e-10 * before {
            return Err(Error::DegenerateGeometry("constraint vectors are linearly dependent"));
        }
        x.iter_mut().for_each(|v| *v /= after);
        constraints.push(x);
    }
    let available = n.saturating_sub(constraints.len());
    let count = req.count.min(available);
    if count == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: vec![],
            iterations: 0,
        });
    }
    let block = req.block.max(count).min(available);
    let max_basis = if req.max_basis == 0 {
        (3 * block + 2 * count + 40).max(60)
    } else {
        req.max_basis
    }
    .min(available);
    let keep = (count + block).min(max_basis.saturating_sub(block).max(count));

    let mut basis = Basis {
        metric,
        constraints,
        vecs: Vec::new(),
        images: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);

    let mut push = |basis: &mut Basis<'_>, x: Vec<f64>| -> Result<bool> {
        let Some(v) = basis.orthonormalize(x) else {
            return Ok(false);
        };
        let mut bv = apply(&v)?;
        basis.project_constraints(&mut bv);
        if bv.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("eigensolver operator application"));
        }
        basis.vecs.push(v);
        basis.images.push(bv);
        Ok(true)
    };

    for _ in 0..block {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        push(&mut basis, x)?;
    }

    let mut worst = f64::INFINITY;
    for iteration in 1..=req.max_iterations {
        let m = basis.vecs.len();
        let h = Mat::<f64>::from_fn(m, m, |i, j| {
            0.5 * (mdot(metric, &basis.vecs[i], &basis.images[j])
                + mdot(metric, &basis.vecs[j], &basis.images[i]))
        });
        let evd = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::EigenNonConvergence {
                iterations: iteration,
                residual: f64::NAN,
            })?;
        let s = evd.S().column_vector();
        let u = evd.U();
        // descending order
        let order: Vec<usize> = (0..m).rev().collect();
        let scale = s[m - 1].abs().max(s[0].abs()).max(f64::MIN_POSITIVE);

        let ritz = |col: usize| -> (Vec<f64>, Vec<f64>) {
            let mut x = vec![0.0; n];
            let mut bx = vec![0.0; n];
            for i in 0..m {
                let c = u[(i, col)];
                axpy(&mut x, c, &basis.vecs[i]);
                axpy(&mut bx, c, &basis.images[i]);
            }
            (x, bx)
        };

        let wanted = block.min(m);
        let mut residual_vectors = Vec::new();
        let mut all_converged = true;
        worst = 0.0;
        let mut pairs = Vec::with_capacity(count);
        for (rank, &col) in order.iter().take(wanted).enumerate() {
            let theta = s[col];
            let (x, bx) = ritz(col);
            let mut r = bx;
            axpy(&mut r, -theta, &x);
            let rn = mdot(metric, &r, &r).sqrt();
            let rel = rn / theta.abs().max(1e-3 * scale);
            if rank < count {
                worst = worst.max(rel);
                if rel > req.tol {
                    all_converged = false;
                }
                pairs.push((theta, x, rel));
            }
            if rel > 0.1 * req.tol {
                residual_vectors.push(r);
            }
        }

        if all_converged && pairs.len() == count {
            let mut values = Vec::with_capacity(count);
            let mut vectors = Vec::with_capacity(count);
            for (t, x, _) in pairs {
                values.push(t);
                vectors.push(x);
            }
            return Ok(EigenPairs {
                values,
                vectors,
                iterations: iteration,
            });
        }

        if m + residual_vectors.len() > max_basis {
            let mut vecs = Vec::with_capacity(keep);
            let mut images = Vec::with_capacity(keep);
            for &col in order.iter().take(keep.min(m)) {
                let (x, bx) = ritz(col);
                vecs.push(x);
                images.push(bx);
            }
            // re-orthonormalize the kept Ritz block to absorb drift
            basis.vecs.clear();
            basis.images.clear();
            for (x, bx) in vecs.into_iter().zip(images) {
                let norm = mdot(metric, &x, &x).sqrt();
                basis.vecs.push(x.iter().map(|v| v / norm).collect());
                basis.images.push(bx.iter().map(|v| v / norm).collect());
            }
        }

        let mut added = 0;
        for r in residual_vectors {
            if basis.vecs.len() >= max_basis {
                break;
            }
            if push(&mut basis, r)? {
                added += 1;
            }
        }
        if added == 0 {
            if basis.vecs.len() >= available {
                break;
            }
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            if !push(&mut basis, x)? && basis.vecs.len() >= max_basis {
                break;
            }
        }
    }

    // Exhausted the space: the last Rayleigh–Ritz is exact if the basis spans it.
    let m = basis.vecs.len();
    if m >= available && m >= count {
        let h = Mat::<f64>::from_fn(m, m, |i, j| {
            0.5 * (mdot(metric, &basis.vecs[i], &basis.images[j])
                + mdot(metric, &basis.vecs[j], &basis.images[i]))
        });
        if let Ok(evd) = h.self_adjoint_eigen(Side::Lower) {
            let s = evd.S().column_vector();
            let u = evd.U();
            let mut values = Vec::new();
            let mut vectors = Vec::new();
            let mut residuals = Vec::new();
            for col in (0..m).rev().take(count) {
                let mut x = vec![0.0; n];
                let mut bx = vec![0.0; n];
                for i in 0..m {
                    axpy(&mut x, u[(i, col)], &basis.vecs[i]);
                    axpy(&mut bx, u[(i, col)], &basis.images[i]);
                }
                axpy(&mut bx, -s[col], &x);
                let rel = mdot(metric, &bx, &bx).sqrt() / s[col].abs().max(f64::MIN_POSITIVE);
                values.push(s[col]);
                vectors.push(x);
                residuals.push(rel);
            }
            if residuals.iter().all(|r| *r <= req.tol.max(1e-10)) {
                return Ok(EigenPairs {
                    values,
                    vectors,
                    iterations: req.max_iterations,
                });
            }
        }
    }

    Err(Error::EigenNonConvergence {
        iterations: req.max_iterations,
        residual: worst,
    })
}
