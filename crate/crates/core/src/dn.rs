//! Discrete Dirichlet-to-Neumann operators on Γ0.

use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::boundary::{BoundaryGrid, BoundaryTrace};
use crate::error::{Error, Result};
use crate::harmonic::{Flavor, ForwardSolver};
use crate::surface::SurfaceMesh;

/// Dense DN matrix `Λ = W⁻¹ S` with `S` the symmetric Schur complement of the
/// stiffness onto Γ0 and `W` the boundary quadrature weights.
#[derive(Debug, Clone)]
pub struct DNOperator {
    flavor: Flavor,
    matrix: DMatrix<f64>,
    grid: Arc<BoundaryGrid>,
    fingerprint: Option<String>,
}

/// Ascending eigenpairs; eigenvectors are orthonormal in the boundary quadrature.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl DNOperator {
    pub fn from_matrix(
        flavor: Flavor,
        matrix: DMatrix<f64>,
        grid: Arc<BoundaryGrid>,
    ) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: matrix.nrows(),
            });
        }
        Ok(Self {
            flavor,
            matrix,
            grid,
            fingerprint: None,
        })
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn grid(&self) -> &Arc<BoundaryGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Hex digest of the source mesh, when assembled from one.
    pub fn fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(f))
            .as_slice()
            .to_vec()
    }

    pub fn apply_trace(&self, f: &BoundaryTrace) -> Result<BoundaryTrace> {
        crate::boundary::check_same(&self.grid, f.grid())?;
        BoundaryTrace::new(self.grid.clone(), self.apply(f.values()))
    }

    /// The quadrature-symmetric form `W Λ`.
    pub fn weighted(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        DMatrix::from_fn(self.len(), self.len(), |i, j| w[i] * self.matrix[(i, j)])
    }

    /// Copy with the boundary metric scaled by `factor²` (arc length by `factor`).
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let grid = BoundaryGrid::from_parts(
            self.grid.s().iter().map(|s| s * factor).collect(),
            self.grid.weights().iter().map(|w| w * factor).collect(),
            self.grid.length() * factor,
        )?;
        Ok(Self {
            flavor: self.flavor,
            matrix: &self.matrix / factor,
            grid: Arc::new(grid),
            fingerprint: None,
        })
    }

    /// First `k` eigenpairs of `W^{-1/2} S W^{-1/2}`, ascending.
    pub fn spectrum(&self, k: usize) -> Spectrum {
        let n = self.len();
        let k = k.min(n);
        let w = self.grid.weights();
        let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let mut sym = DMatrix::from_fn(n, n, |i, j| sw[i] * self.matrix[(i, j)] / sw[j]);
        let t = sym.transpose();
        sym = (sym + t) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut values = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            values.push(eig.eigenvalues[idx]);
            let v = eig.eigenvectors.column(idx);
            vectors.push((0..n).map(|i| v[i] / sw[i]).collect());
        }
        Spectrum { values, vectors }
    }

    /// DN CSV: header `DN <flavor> <n> <length>`, then rows `s,w,Λ_i0,...`.
    pub fn to_csv(&self) -> String {
        let n = self.len();
        let mut out = String::with_capacity(n * n * 24);
        let _ = writeln!(
            out,
            "DN {} {} {:.16e}",
            self.flavor.name(),
            n,
            self.grid.length()
        );
        for i in 0..n {
            let _ = write!(
                out,
                "{:.16e},{:.16e}",
                self.grid.s()[i],
                self.grid.weights()[i]
            );
            for j in 0..n {
                let _ = write!(out, ",{:.16e}", self.matrix[(i, j)]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or(Error::Parse {
            line: 1,
            message: "empty input".into(),
        })?;
        let mut tok = header.split_whitespace();
        let perr = |line: usize, m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        if tok.next() != Some("DN") {
            return Err(perr(1, "expected 'DN' header"));
        }
        let flavor: Flavor = tok
            .next()
            .ok_or_else(|| perr(1, "missing flavor"))?
            .parse()
            .map_err(|_| perr(1, "unknown flavor"))?;
        let n: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(1, "malformed node count"))?;
        let length: f64 = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(1, "malformed length"))?;
        let mut s = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let ln = i + 2;
            let line = lines
                .next()
                .transpose()?
                .ok_or_else(|| perr(ln, &format!("truncated: expected {n} rows, found {i}")))?;
            let mut fields = line.split(',');
            let mut next = |what: &str| -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| perr(ln, &format!("missing {what}")))?
                    .trim()
                    .parse()
                    .map_err(|_| perr(ln, &format!("malformed {what}")))
            };
            s.push(next("arc length")?);
            w.push(next("weight")?);
            for j in 0..n {
                m[(i, j)] = next("matrix entry")?;
            }
            if fields.next().is_some() {
                return Err(perr(ln, "too many fields"));
            }
        }
        let grid = BoundaryGrid::from_parts(s, w, length)?;
        Self::from_matrix(flavor, m, Arc::new(grid))
    }
}

/// Assembles the DN operator of the given flavor from a mesh.
pub fn assemble_dn(mesh: &SurfaceMesh, flavor: Flavor) -> Result<DNOperator> {
    let solver = ForwardSolver::new(mesh, flavor)?;
    assemble_dn_with(&solver)
}

/// Assembly reusing an existing forward solver.
pub fn assemble_dn_with(solver: &ForwardSolver) -> Result<DNOperator> {
    let mesh = solver.mesh();
    let grid = Arc::new(BoundaryGrid::from_mesh(mesh)?);
    let gamma0 = solver.gamma0();
    let n = gamma0.len();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let u = solver.extend(&e).expect("data length matches Γ0");
            solver.dirichlet().residual_at(&u, gamma0)
        })
        .collect();
    let s = DMatrix::from_fn(n, n, |i, j| 0.5 * (columns[j][i] + columns[i][j]));
    let w = grid.weights();
    let matrix = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / w[i]);
    Ok(DNOperator {
        flavor: solver.flavor(),
        matrix,
        grid,
        fingerprint: Some(mesh.fingerprint_hex()),
    })
}
