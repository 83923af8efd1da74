//! P1 finite elements for the Laplace–Beltrami operator with a per-triangle metric.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::boundary::BoundaryTrace;
use crate::doubled::DoubledSurface;
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, SkylineCholesky};
use crate::surface::SurfaceMesh;

/// Per-vertex real values tied to one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    fingerprint: [u8; 32],
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: &SurfaceMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertex_count() {
            return Err(Error::MeshMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(vec![
                "field has non-finite values".into()
            ]));
        }
        Ok(Self {
            fingerprint: *mesh.fingerprint(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn belongs_to(&self, mesh: &SurfaceMesh) -> bool {
        &self.fingerprint == mesh.fingerprint()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{i},{v:.16e}");
        }
        s
    }
}

/// Element stiffness of triangle `t`: `A·√det G·∇λaᵀ G⁻¹ ∇λb`.
pub fn element_stiffness(mesh: &SurfaceMesh, t: usize) -> [[f64; 3]; 3] {
    let lt = mesh.local_triangle(t);
    let g = mesh.metric()[t];
    let ginv = g.inverse();
    let grads = lt.grad_barycentric();
    let scale = lt.area * g.det().sqrt();
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let (p, q) = (grads[a], grads[b]);
            k[a][b] = scale
                * (ginv.g11 * p[0] * q[0]
                    + ginv.g12 * (p[0] * q[1] + p[1] * q[0])
                    + ginv.g22 * p[1] * q[1]);
        }
    }
    k
}

pub fn assemble_stiffness(mesh: &SurfaceMesh) -> CsrMatrix {
    let locals: Vec<[[f64; 3]; 3]> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| element_stiffness(mesh, t))
        .collect();
    let mut triplets = Vec::with_capacity(9 * locals.len());
    for (t, k) in mesh.triangles().iter().zip(&locals) {
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((t[a], t[b], k[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.vertex_count(), triplets)
}

/// Dirichlet problem with a fixed vertex set and one reusable factorization.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    stiffness: Arc<CsrMatrix>,
    fixed: Vec<usize>,
    free: Vec<usize>,
    slot: Vec<usize>,
    factor: SkylineCholesky,
}

impl DirichletSolver {
    pub fn new(stiffness: Arc<CsrMatrix>, fixed: &[usize]) -> Result<Self> {
        let n = stiffness.dim();
        let mut is_fixed = vec![false; n];
        for &v in fixed {
            is_fixed[v] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&v| !is_fixed[v]).collect();
        let mut slot = vec![usize::MAX; n];
        for (i, &v) in free.iter().enumerate() {
            slot[v] = i;
        }
        let factor = SkylineCholesky::factor(&stiffness.submatrix(&free))?;
        Ok(Self {
            stiffness,
            fixed: fixed.to_vec(),
            free,
            slot,
            factor,
        })
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    /// Solves with `values[i]` prescribed at `fixed[i]`; returns all vertex values.
    pub fn solve(&self, values: &[f64]) -> Vec<f64> {
        let n = self.stiffness.dim();
        let mut u = vec![0.0; n];
        for (&v, &x) in self.fixed.iter().zip(values) {
            u[v] = x;
        }
        let rhs: Vec<f64> = self
            .free
            .iter()
            .map(|&i| {
                -self
                    .stiffness
                    .row(i)
                    .filter(|&(j, _)| self.slot[j] == usize::MAX)
                    .map(|(j, k)| k * u[j])
                    .sum::<f64>()
            })
            .collect();
        let x = self.factor.solve(&rhs);
        for (&v, &xv) in self.free.iter().zip(&x) {
            u[v] = xv;
        }
        u
    }

    /// `K u` at the given vertices (weak normal derivative times test function mass).
    pub fn residual_at(&self, u: &[f64], at: &[usize]) -> Vec<f64> {
        at.iter()
            .map(|&i| self.stiffness.row(i).map(|(j, k)| k * u[j]).sum())
            .collect()
    }
}

/// Condition imposed on the inner boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// `u = 0` on the holes.
    Grounded,
    /// `∂_ν u = 0` on the holes.
    Isolated,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Grounded => "grounded",
            Flavor::Isolated => "isolated",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grounded" => Ok(Flavor::Grounded),
            "isolated" => Ok(Flavor::Isolated),
            other => Err(Error::Config(format!("unknown flavor '{other}'"))),
        }
    }
}

/// Forward solver for one flavor on one mesh, with data given on Γ0.
#[derive(Debug, Clone)]
pub struct ForwardSolver {
    mesh: SurfaceMesh,
    flavor: Flavor,
    gamma0: Vec<usize>,
    solver: DirichletSolver,
}

impl ForwardSolver {
    pub fn new(mesh: &SurfaceMesh, flavor: Flavor) -> Result<Self> {
        let k = Arc::new(assemble_stiffness(mesh));
        let gamma0 = mesh.gamma0().to_vec();
        let mut fixed = gamma0.clone();
        if flavor == Flavor::Grounded {
            for l in mesh.hole_loops() {
                fixed.extend_from_slice(l);
            }
        }
        let solver = DirichletSolver::new(k, &fixed)?;
        Ok(Self {
            mesh: mesh.clone(),
            flavor,
            gamma0,
            solver,
        })
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn gamma0(&self) -> &[usize] {
        &self.gamma0
    }

    pub fn dirichlet(&self) -> &DirichletSolver {
        &self.solver
    }

    /// Harmonic extension of nodal data on Γ0.
    pub fn extend(&self, data: &[f64]) -> Result<Vec<f64>> {
        if data.len() != self.gamma0.len() {
            return Err(Error::GridMismatch {
                expected: self.gamma0.len(),
                got: data.len(),
            });
        }
        let mut values = data.to_vec();
        values.resize(self.solver.fixed().len(), 0.0);
        Ok(self.solver.solve(&values))
    }

    pub fn solve(&self, data: &BoundaryTrace) -> Result<ScalarField> {
        ScalarField::new(&self.mesh, self.extend(data.values())?)
    }
}

/// Discrete harmonic `u` with `u = f` on Γ0 and `u = 0` on the holes.
pub fn solve_grounded(mesh: &SurfaceMesh, f: &BoundaryTrace) -> Result<ScalarField> {
    ForwardSolver::new(mesh, Flavor::Grounded)?.solve(f)
}

/// Discrete harmonic `v` with `v = h` on Γ0 and natural condition on the holes.
pub fn solve_isolated(mesh: &SurfaceMesh, h: &BoundaryTrace) -> Result<ScalarField> {
    ForwardSolver::new(mesh, Flavor::Isolated)?.solve(h)
}

/// Dirichlet solver on a doubled surface with data on both copies of Γ0.
#[derive(Debug, Clone)]
pub struct DoubledSolver {
    plus: Vec<usize>,
    minus: Vec<usize>,
    solver: DirichletSolver,
}

impl DoubledSolver {
    pub fn new(doubled: &DoubledSurface) -> Result<Self> {
        let k = Arc::new(assemble_stiffness(doubled.mesh()));
        let plus = doubled.gamma0_plus().to_vec();
        let minus = doubled.gamma0_minus_aligned();
        let mut fixed = plus.clone();
        fixed.extend_from_slice(&minus);
        Ok(Self {
            solver: DirichletSolver::new(k, &fixed)?,
            plus,
            minus,
        })
    }

    /// `data_minus[i]` is prescribed at the mirror image of `Γ0⁺[i]`.
    pub fn solve(&self, data_plus: &[f64], data_minus: &[f64]) -> Result<Vec<f64>> {
        for d in [data_plus, data_minus] {
            if d.len() != self.plus.len() {
                return Err(Error::GridMismatch {
                    expected: self.plus.len(),
                    got: d.len(),
                });
            }
        }
        let mut values = data_plus.to_vec();
        values.extend_from_slice(data_minus);
        Ok(self.solver.solve(&values))
    }

    pub fn minus_nodes(&self) -> &[usize] {
        &self.minus
    }
}

/// Harmonic field on the doubled surface with the given data on Γ0⁺ and Γ0⁻.
pub fn solve_dirichlet_doubled(
    doubled: &DoubledSurface,
    data_plus: &BoundaryTrace,
    data_minus: &BoundaryTrace,
) -> Result<ScalarField> {
    let u = DoubledSolver::new(doubled)?.solve(data_plus.values(), data_minus.values())?;
    ScalarField::new(doubled.mesh(), u)
}

fn gradient_covector(mesh: &SurfaceMesh, t: usize, u: &[f64]) -> Vector2<f64> {
    let grads = mesh.local_triangle(t).grad_barycentric();
    let tri = mesh.triangles()[t];
    let mut d = Vector2::zeros();
    for a in 0..3 {
        d += Vector2::new(grads[a][0], grads[a][1]) * u[tri[a]];
    }
    d
}

/// `‖∇u − Φ∇v‖` in the metric L² norm; zero iff `v + i·u` is holomorphic.
pub fn cr_residual(mesh: &SurfaceMesh, u: &ScalarField, v: &ScalarField) -> Result<f64> {
    if !u.belongs_to(mesh) || !v.belongs_to(mesh) {
        return Err(Error::MeshMismatch);
    }
    Ok(cr_residual_raw(mesh, u.values(), v.values()))
}

pub(crate) fn cr_residual_raw(mesh: &SurfaceMesh, u: &[f64], v: &[f64]) -> f64 {
    // summed in triangle order so the result does not depend on scheduling
    let sum: f64 = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| {
            let g = mesh.metric()[t];
            let ginv = g.inverse().matrix();
            let gu = ginv * gradient_covector(mesh, t, u);
            let gv = ginv * gradient_covector(mesh, t, v);
            let diff = gu - mesh.rotation(t) * gv;
            mesh.metric_area(t) * g.norm2([diff.x, diff.y])
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sum.sqrt()
}

/// Metric Dirichlet energy norm `‖∇u‖`.
pub fn gradient_norm(mesh: &SurfaceMesh, u: &[f64]) -> f64 {
    let sum: f64 = (0..mesh.triangle_count())
        .map(|t| {
            let g = mesh.metric()[t];
            let gu = g.inverse().matrix() * gradient_covector(mesh, t, u);
            mesh.metric_area(t) * g.norm2([gu.x, gu.y])
        })
        .sum();
    sum.sqrt()
}

/// Flux `∮ ∂_ν u ds` through each hole, from the stiffness action on the hole nodes.
pub fn hole_periods(mesh: &SurfaceMesh, u: &ScalarField) -> Result<Vec<f64>> {
    if !u.belongs_to(mesh) {
        return Err(Error::MeshMismatch);
    }
    let k = assemble_stiffness(mesh);
    Ok(hole_fluxes(mesh, &k, u.values()))
}

pub(crate) fn hole_fluxes(mesh: &SurfaceMesh, k: &CsrMatrix, u: &[f64]) -> Vec<f64> {
    mesh.hole_loops()
        .map(|l| {
            l.iter()
                .map(|&i| k.row(i).map(|(j, kij)| kij * u[j]).sum::<f64>())
                .sum()
        })
        .collect()
}
