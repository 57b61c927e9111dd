//! Structured discretizations of the domain, lumped quadrature, the Dirichlet
//! stiffness matrix and the Green operator.
//!
//! Both layouts are cell-centered finite volumes: every unknown sits at the
//! center of a cell, the Dirichlet boundary sits on the outer cell faces. With
//! `W` the diagonal matrix of cell areas and `K` the symmetric stiffness matrix,
//! the discrete Laplacian is `-Δu ≈ W⁻¹ K u`, integrals are `∫ f = Σ wᵢ fᵢ`, and
//! the Green operator is `G[f] = K⁻¹ W f`. In this form `∫ f G[g]` is exactly
//! symmetric and every integration-by-parts identity of the continuous problem
//! holds to rounding.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// Relative residual above which a Poisson solve is reported as failed.
const POISSON_RESIDUAL_TOL: f64 = 1e-9;

/// Shape of the computational domain. Both shapes are centered at the origin,
/// which is their centroid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum DomainSpec {
    UnitDisk { radius: f64 },
    Rectangle { width: f64, height: f64 },
}

impl DomainSpec {
    pub fn disk(radius: f64) -> Self {
        DomainSpec::UnitDisk { radius }
    }

    pub fn rectangle(width: f64, height: f64) -> Self {
        DomainSpec::Rectangle { width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DomainSpec::UnitDisk { radius } => radius.is_finite() && radius > 0.0,
            DomainSpec::Rectangle { width, height } => {
                width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("domain dimensions must be positive: {self:?}")))
        }
    }

    /// Closed-form area `|Ω|`.
    pub fn area(&self) -> f64 {
        match *self {
            DomainSpec::UnitDisk { radius } => PI * radius * radius,
            DomainSpec::Rectangle { width, height } => width * height,
        }
    }

    /// Long side over short side; 1 for the disk.
    pub fn aspect_ratio(&self) -> f64 {
        match *self {
            DomainSpec::UnitDisk { .. } => 1.0,
            DomainSpec::Rectangle { width, height } => width.max(height) / width.min(height),
        }
    }

    /// Radius of the disk with the same area.
    pub fn equivalent_radius(&self) -> f64 {
        (self.area() / PI).sqrt()
    }

    /// Isoperimetric ratio `L² / (4π|Ω|)`, equal to 1 for the disk.
    pub fn isoperimetric_ratio(&self) -> f64 {
        let perimeter = match *self {
            DomainSpec::UnitDisk { radius } => 2.0 * PI * radius,
            DomainSpec::Rectangle { width, height } => 2.0 * (width + height),
        };
        perimeter * perimeter / (4.0 * PI * self.area())
    }
}

/// Opaque identity of a mesh; fields remember the mesh they were built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeshId(u64);

/// Structured layout backing a mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    /// `rings × sectors` cells, node index `ring * sectors + sector`.
    Polar {
        rings: usize,
        sectors: usize,
        dr: f64,
        dtheta: f64,
    },
    /// `nx × ny` cells, node index `i * ny + j`.
    Cartesian { nx: usize, ny: usize, hx: f64, hy: f64 },
}

/// Endpoint of a stencil link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Interior(usize),
    Boundary(usize),
}

/// One face of a cell with its conductance (face length over center distance).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub neighbor: Neighbor,
    pub conductance: f64,
}

/// A discretized domain. Immutable after construction; the Cholesky factor of
/// the stiffness matrix is computed once and shared by every Green solve.
pub struct Mesh {
    id: MeshId,
    spec: DomainSpec,
    resolution: usize,
    layout: Layout,
    h: f64,
    nodes: Vec<[f64; 2]>,
    boundary_nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
    links: Vec<Vec<Link>>,
    quadrature_area: f64,
    area_error: f64,
    stiffness: SparseColMat<usize, f64>,
    diag_positions: Vec<usize>,
    green: Llt<usize, f64>,
    lu_symbolic: SymbolicLu<usize>,
}

impl std::fmt::Debug for Mesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mesh")
            .field("spec", &self.spec)
            .field("layout", &self.layout)
            .field("nodes", &self.nodes.len())
            .field("h", &self.h)
            .finish()
    }
}

/// Builds the default mesh for a domain.
///
/// For the disk, `resolution` is the number of rings and the polar grid uses
/// `4 * resolution` sectors. For rectangles, `resolution` is the number of
/// cells across the shorter side; the longer side gets the closest cell count
/// with the same spacing.
pub fn build_mesh(spec: DomainSpec, resolution: usize) -> Result<Mesh> {
    spec.validate()?;
    if resolution < 4 {
        return Err(Error::Config(format!(
            "mesh resolution must be at least 4, got {resolution}"
        )));
    }
    match spec {
        DomainSpec::UnitDisk { radius } => build_polar_mesh(radius, resolution, 4 * resolution),
        DomainSpec::Rectangle { width, height } => {
            let h0 = width.min(height) / resolution as f64;
            let nx = ((width / h0).round() as usize).max(resolution);
            let ny = ((height / h0).round() as usize).max(resolution);
            build_cartesian_mesh(width, height, nx, ny, resolution)
        }
    }
}

/// Polar cell-centered grid on the disk of the given radius.
pub fn build_polar_mesh(radius: f64, rings: usize, sectors: usize) -> Result<Mesh> {
    let spec = DomainSpec::disk(radius);
    spec.validate()?;
    if rings < 4 || sectors < 4 {
        return Err(Error::Config(format!(
            "polar mesh needs at least 4 rings and 4 sectors, got {rings}x{sectors}"
        )));
    }
    let dr = radius / rings as f64;
    let dtheta = 2.0 * PI / sectors as f64;
    let n = rings * sectors;
    let idx = |i: usize, j: usize| i * sectors + (j % sectors);

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut links = Vec::with_capacity(n);
    let mut boundary_nodes = Vec::with_capacity(sectors);

    for i in 0..rings {
        let r = (i as f64 + 0.5) * dr;
        for j in 0..sectors {
            let theta = (j as f64 + 0.5) * dtheta;
            nodes.push([r * theta.cos(), r * theta.sin()]);
            weights.push(r * dr * dtheta);

            let mut cell = Vec::with_capacity(4);
            if i + 1 < rings {
                cell.push(Link {
                    neighbor: Neighbor::Interior(idx(i + 1, j)),
                    conductance: (i + 1) as f64 * dtheta,
                });
            } else {
                let b = boundary_nodes.len();
                boundary_nodes.push([radius * theta.cos(), radius * theta.sin()]);
                cell.push(Link {
                    neighbor: Neighbor::Boundary(b),
                    conductance: radius * dtheta / (0.5 * dr),
                });
            }
            if i > 0 {
                cell.push(Link {
                    neighbor: Neighbor::Interior(idx(i - 1, j)),
                    conductance: i as f64 * dtheta,
                });
            }
            let angular = dr / (r * dtheta);
            cell.push(Link {
                neighbor: Neighbor::Interior(idx(i, j + 1)),
                conductance: angular,
            });
            cell.push(Link {
                neighbor: Neighbor::Interior(idx(i, j + sectors - 1)),
                conductance: angular,
            });
            links.push(cell);
        }
    }

    let layout = Layout::Polar {
        rings,
        sectors,
        dr,
        dtheta,
    };
    Mesh::assemble(spec, rings, layout, dr, nodes, boundary_nodes, weights, links)
}

/// Uniform cell-centered grid on `[-w/2, w/2] × [-h/2, h/2]`.
pub fn build_cartesian_mesh(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    resolution: usize,
) -> Result<Mesh> {
    let spec = DomainSpec::rectangle(width, height);
    spec.validate()?;
    if nx < 4 || ny < 4 {
        return Err(Error::Config(format!(
            "cartesian mesh needs at least 4 cells per side, got {nx}x{ny}"
        )));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;
    let n = nx * ny;
    let idx = |i: usize, j: usize| i * ny + j;

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut links = Vec::with_capacity(n);
    let mut boundary_nodes = Vec::new();

    let x_of = |i: f64| -0.5 * width + i * hx;
    let y_of = |j: f64| -0.5 * height + j * hy;

    for i in 0..nx {
        for j in 0..ny {
            let x = x_of(i as f64 + 0.5);
            let y = y_of(j as f64 + 0.5);
            nodes.push([x, y]);
            weights.push(hx * hy);

            let mut cell = Vec::with_capacity(4);
            let mut side = |inside: Option<usize>, bpoint: [f64; 2], full: f64, half: f64| {
                match inside {
                    Some(k) => cell.push(Link {
                        neighbor: Neighbor::Interior(k),
                        conductance: full,
                    }),
                    None => {
                        let b = boundary_nodes.len();
                        boundary_nodes.push(bpoint);
                        cell.push(Link {
                            neighbor: Neighbor::Boundary(b),
                            conductance: half,
                        });
                    }
                }
            };
            side(
                (i + 1 < nx).then(|| idx(i + 1, j)),
                [x_of(nx as f64), y],
                hy / hx,
                hy / (0.5 * hx),
            );
            side(
                (i > 0).then(|| idx(i - 1, j)),
                [x_of(0.0), y],
                hy / hx,
                hy / (0.5 * hx),
            );
            side(
                (j + 1 < ny).then(|| idx(i, j + 1)),
                [x, y_of(ny as f64)],
                hx / hy,
                hx / (0.5 * hy),
            );
            side(
                (j > 0).then(|| idx(i, j - 1)),
                [x, y_of(0.0)],
                hx / hy,
                hx / (0.5 * hy),
            );
            links.push(cell);
        }
    }

    let layout = Layout::Cartesian { nx, ny, hx, hy };
    Mesh::assemble(
        spec,
        resolution,
        layout,
        hx.max(hy),
        nodes,
        boundary_nodes,
        weights,
        links,
    )
}

impl Mesh {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: DomainSpec,
        resolution: usize,
        layout: Layout,
        h: f64,
        nodes: Vec<[f64; 2]>,
        boundary_nodes: Vec<[f64; 2]>,
        weights: Vec<f64>,
        links: Vec<Vec<Link>>,
    ) -> Result<Mesh> {
        let n = nodes.len();
        let mut triplets = Vec::with_capacity(5 * n);
        let mut diagonal = vec![0.0; n];
        for (k, cell) in links.iter().enumerate() {
            for link in cell {
                diagonal[k] += link.conductance;
                if let Neighbor::Interior(m) = link.neighbor {
                    triplets.push(Triplet::new(k, m, -link.conductance));
                }
            }
            triplets.push(Triplet::new(k, k, diagonal[k]));
        }
        let stiffness = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Config(format!("stiffness assembly failed: {e:?}")))?;

        let mut diag_positions = vec![usize::MAX; n];
        {
            let col_ptr = stiffness.symbolic().col_ptr();
            let row_idx = stiffness.symbolic().row_idx();
            for j in 0..n {
                for p in col_ptr[j]..col_ptr[j + 1] {
                    if row_idx[p] == j {
                        diag_positions[j] = p;
                    }
                }
            }
        }

        let green = stiffness.sp_cholesky(Side::Lower).map_err(|e| Error::LinearSolve {
            context: format!("Cholesky factorization of the stiffness matrix failed: {e:?}"),
            residual: f64::NAN,
        })?;
        let lu_symbolic = SymbolicLu::try_new(stiffness.symbolic()).map_err(|e| {
            Error::LinearSolve {
                context: format!("symbolic LU analysis failed: {e:?}"),
                residual: f64::NAN,
            }
        })?;

        let quadrature_area: f64 = weights.iter().sum();
        let area_error = (quadrature_area - spec.area()).abs() / spec.area();

        Ok(Mesh {
            id: MeshId(NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)),
            spec,
            resolution,
            layout,
            h,
            nodes,
            boundary_nodes,
            weights,
            links,
            quadrature_area,
            area_error,
            stiffness,
            diag_positions,
            green,
            lu_symbolic,
        })
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Characteristic grid spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn boundary_nodes(&self) -> &[[f64; 2]] {
        &self.boundary_nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn links(&self) -> &[Vec<Link>] {
        &self.links
    }

    /// `Σ wᵢ`, the discrete area used for all densities on this mesh.
    pub fn quadrature_area(&self) -> f64 {
        self.quadrature_area
    }

    /// Relative deviation of `Σ wᵢ` from the closed-form area.
    pub fn area_error(&self) -> f64 {
        self.area_error
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.spec.aspect_ratio()
    }

    pub(crate) fn stiffness(&self) -> &SparseColMat<usize, f64> {
        &self.stiffness
    }

    pub(crate) fn diag_positions(&self) -> &[usize] {
        &self.diag_positions
    }

    pub(crate) fn lu_symbolic(&self) -> &SymbolicLu<usize> {
        &self.lu_symbolic
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    pub fn constant(&self, c: f64) -> Field {
        Field {
            mesh: self.id,
            values: vec![c; self.len()],
        }
    }

    /// Samples a function of the node coordinates.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field {
            mesh: self.id,
            values: self.nodes.iter().map(|p| f(p[0], p[1])).collect(),
        }
    }

    pub fn field(&self, values: Vec<f64>) -> Result<Field> {
        if values.len() != self.len() {
            return Err(Error::MeshMismatch);
        }
        Ok(Field {
            mesh: self.id,
            values,
        })
    }

    pub fn check(&self, f: &Field) -> Result<()> {
        if f.mesh != self.id || f.values.len() != self.len() {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }

    /// `∫ f`.
    pub fn integrate(&self, f: &Field) -> f64 {
        self.weights.iter().zip(&f.values).map(|(w, v)| w * v).sum()
    }

    /// `∫ f g`.
    pub fn inner(&self, f: &Field, g: &Field) -> f64 {
        self.weights
            .iter()
            .zip(f.values.iter().zip(&g.values))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// `K u` (not divided by the cell areas).
    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        self.links
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                // flux form: differences of nearby values cancel exactly
                cell.iter()
                    .map(|link| match link.neighbor {
                        Neighbor::Interior(m) => link.conductance * (u[k] - u[m]),
                        Neighbor::Boundary(_) => link.conductance * u[k],
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// Pointwise discrete `-Δu = W⁻¹ K u`.
    pub fn neg_laplacian(&self, u: &Field) -> Field {
        let mut values = self.apply_stiffness(&u.values);
        for (v, w) in values.iter_mut().zip(&self.weights) {
            *v /= w;
        }
        Field {
            mesh: self.id,
            values,
        }
    }

    /// Discrete Dirichlet form `∫|∇u|² = uᵀ K u`.
    pub fn dirichlet_form(&self, u: &Field) -> f64 {
        self.apply_stiffness(&u.values)
            .iter()
            .zip(&u.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Solves `K u = b` with the cached Cholesky factor.
    pub(crate) fn solve_stiffness(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut u = rhs.to_vec();
        let n = u.len();
        self.green
            .solve_in_place(MatMut::from_column_major_slice_mut(&mut u, n, 1));
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Poisson solve"));
        }
        let ku = self.apply_stiffness(&u);
        let scale = norm2(rhs).max(f64::MIN_POSITIVE);
        let res = ku
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / scale;
        if res > POISSON_RESIDUAL_TOL && norm2(rhs) > 0.0 {
            return Err(Error::LinearSolve {
                context: "Dirichlet Poisson solve".into(),
                residual: res,
            });
        }
        Ok(u)
    }

    /// `G[f]`: the solution of `-Δu = f` with `u = 0` on the boundary.
    pub fn green_apply(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let rhs: Vec<f64> = f.values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        Ok(Field {
            mesh: self.id,
            values: self.solve_stiffness(&rhs)?,
        })
    }
}

/// `E₀`, the energy `½∫ρ₀G[ρ₀]` of the uniform density `ρ₀ = 1/|Ω|`, which
/// is also where every branch starts. Equals `1/16π` on the unit disk.
pub fn mean_green_energy(mesh: &Mesh) -> Result<f64> {
    let rho0 = mesh.constant(1.0 / mesh.quadrature_area());
    let u = mesh.green_apply(&rho0)?;
    Ok(0.5 * mesh.inner(&rho0, &u))
}

/// Free-function form of [`Mesh::green_apply`].
pub fn green_apply(mesh: &Mesh, f: &Field) -> Result<Field> {
    mesh.green_apply(f)
}

/// One value per cell of a mesh; the boundary value is implicitly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    mesh: MeshId,
    values: Vec<f64>,
}

impl Field {
    pub fn mesh_id(&self) -> MeshId {
        self.mesh
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn same_mesh(&self, other: &Field) -> bool {
        self.mesh == other.mesh && self.values.len() == other.values.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            mesh: self.mesh,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same mesh.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch);
        }
        Ok(Field {
            mesh: self.mesh,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), self.values.len());
        Field {
            mesh: self.mesh,
            values,
        }
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_sup_error(rings: usize) -> f64 {
        let mesh = build_polar_mesh(1.0, rings, 16).unwrap();
        let u = mesh.green_apply(&mesh.constant(1.0)).unwrap();
        mesh.nodes()
            .iter()
            .zip(u.values())
            .map(|(p, v)| {
                let r2 = p[0] * p[0] + p[1] * p[1];
                (v - (1.0 - r2) / 4.0).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn quadrature_covers_area() {
        let sq = build_mesh(DomainSpec::rectangle(1.0, 1.0), 64).unwrap();
        assert!((sq.quadrature_area() - 1.0).abs() < 1e-2);
        let disk = build_mesh(DomainSpec::disk(1.0), 64).unwrap();
        assert!((disk.quadrature_area() - PI).abs() < 1e-2 * PI);
        assert!(disk.area_error() < 1e-12);
    }

    #[test]
    fn aspect_ratio_is_recorded() {
        let m = build_mesh(DomainSpec::rectangle(10.0, 1.0), 8).unwrap();
        assert_eq!(m.aspect_ratio(), 10.0);
        match m.layout() {
            Layout::Cartesian { nx, ny, .. } => assert_eq!((nx, ny), (80, 8)),
            _ => panic!("expected a cartesian layout"),
        }
    }

    #[test]
    fn small_resolution_is_rejected() {
        assert!(matches!(
            build_mesh(DomainSpec::disk(1.0), 3),
            Err(Error::Config(_))
        ));
        assert!(build_mesh(DomainSpec::rectangle(-1.0, 1.0), 8).is_err());
    }

    #[test]
    fn every_link_is_classified() {
        let m = build_mesh(DomainSpec::rectangle(2.0, 1.0), 6).unwrap();
        for cell in m.links() {
            assert_eq!(cell.len(), 4);
            for l in cell {
                match l.neighbor {
                    Neighbor::Interior(k) => assert!(k < m.len()),
                    Neighbor::Boundary(b) => assert!(b < m.boundary_nodes().len()),
                }
                assert!(l.conductance > 0.0);
            }
        }
    }

    #[test]
    fn green_of_zero_is_zero() {
        let m = build_mesh(DomainSpec::disk(1.0), 8).unwrap();
        let u = m.green_apply(&m.zeros()).unwrap();
        assert!(u.sup_norm() == 0.0);
    }

    #[test]
    fn disk_poisson_converges_at_second_order() {
        let e: Vec<f64> = [16, 32, 64].iter().map(|&n| disk_sup_error(n)).collect();
        let p1 = (e[0] / e[1]).log2();
        let p2 = (e[1] / e[2]).log2();
        assert!(p1 >= 1.8 && p2 >= 1.8, "orders {p1} {p2} from {e:?}");
    }

    #[test]
    fn green_is_linear() {
        let m = build_polar_mesh(1.0, 32, 16).unwrap();
        let u = m.green_apply(&m.constant(1.0 / PI)).unwrap();
        for (p, v) in m.nodes().iter().zip(u.values()) {
            let r2 = p[0] * p[0] + p[1] * p[1];
            assert!((v - (1.0 - r2) / (4.0 * PI)).abs() < 1e-3);
        }
    }

    #[test]
    fn mismatched_field_is_rejected() {
        let a = build_mesh(DomainSpec::disk(1.0), 4).unwrap();
        let b = build_mesh(DomainSpec::disk(1.0), 4).unwrap();
        assert!(matches!(a.green_apply(&b.zeros()), Err(Error::MeshMismatch)));
    }
}
