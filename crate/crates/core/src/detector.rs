//! Classification of boundary data into the no-hole, grounded-hole and
//! isolated-hole cases, and recovery of the boundary length.
//!
//! The no-hole case makes `(ΛJ)² = −1` on every zero-mean mode, while holes
//! leave `I + (ΛJ)²` injective. Its singular values on holes decay
//! geometrically with frequency (like `1/sinh²(kL)` on an annulus), so at
//! moderate cutoffs they drop below the discretization noise. The verdict
//! therefore combines the full near-kernel count with the kernel of the
//! lowest-mode block, where the two cases are separated by an `O(1)` gap.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dn::DNOperator;
use crate::error::{Error, Result};

/// Number of lowest mode pairs whose block must be all-kernel or kernel-free.
pub const LOW_MODE_PAIRS: usize = 2;

/// Default mode cutoff.
pub const DEFAULT_MODES: usize = 16;

/// Default `‖Λ1‖` threshold (root-mean-square over Γ0).
pub const DEFAULT_TOL_CONST: f64 = 1e-6;

/// Near-kernel threshold used when no two-grid estimate is available. Sits
/// between the discretization noise of the no-hole case at practical mesh
/// sizes (a few 1e-3) and the low-mode gap of holes.
pub const FALLBACK_TOL_KERNEL: f64 = 5e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    NoHoles,
    HolesGrounded,
    HolesIsolated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thresholds {
    pub n_modes: usize,
    pub tol_kernel: f64,
    pub tol_const: f64,
    pub low_mode_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Singular values of `I + (ΛJ)²` below threshold, out of `2·n_modes`.
    pub kernel_dim: usize,
    /// Same count on the lowest `2·low_mode_pairs` modes.
    pub low_mode_kernel: usize,
    /// Root-mean-square of `Λ1` over Γ0.
    pub lambda1_norm: f64,
    pub singular_values: Vec<f64>,
    pub thresholds: Thresholds,
}

/// `I + (ΛJ)²` compressed to the first `pairs` zero-mean Fourier mode pairs,
/// in a quadrature-orthonormal mode basis.
pub fn compressed_operator(op: &DNOperator, pairs: usize) -> Result<DMatrix<f64>> {
    let grid = op.grid();
    if pairs > grid.max_mode() {
        return Err(Error::UnresolvedModes {
            requested: pairs,
            available: grid.max_mode(),
        });
    }
    let basis = orthonormal_modes(op, pairs);
    let dim = basis.len();
    let images: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| {
            let t1 = op.apply(&grid.integrate_unchecked(b));
            let t2 = op.apply(&grid.integrate_unchecked(&t1));
            b.iter().zip(&t2).map(|(x, y)| x + y).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(dim, dim, |i, j| grid.inner(&basis[i], &images[j])))
}

/// Singular values (descending) of [`compressed_operator`].
pub fn kernel_singular_values(op: &DNOperator, pairs: usize) -> Result<Vec<f64>> {
    let c = compressed_operator(op, pairs)?;
    let mut sv: Vec<f64> = c.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

fn orthonormal_modes(op: &DNOperator, pairs: usize) -> Vec<Vec<f64>> {
    let grid = op.grid();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(2 * pairs);
    for mode in grid.zero_mean_modes(pairs) {
        let mut v = grid.remove_mean(&mode);
        for b in &basis {
            let c = grid.inner(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = grid.norm(&v);
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
    basis
}

fn count_below(sv: &[f64], tol: f64) -> usize {
    // the identity sets the scale of I + (ΛJ)²
    let scale = sv.first().copied().unwrap_or(0.0).max(1.0);
    sv.iter().filter(|&&s| s < tol * scale).count()
}

/// Number of singular values of `I + (ΛJ)²` on `2·n_modes` modes below
/// `tol·max(1, σ_max)`.
pub fn kernel_dimension(op: &DNOperator, n_modes: usize, tol: f64) -> Result<usize> {
    if n_modes < 4 {
        return Err(Error::Config(format!("n_modes must be at least 4, got {n_modes}")));
    }
    Ok(count_below(&kernel_singular_values(op, n_modes)?, tol))
}

/// Root-mean-square of `Λ1` over Γ0.
pub fn lambda1_norm(op: &DNOperator) -> f64 {
    let grid = op.grid();
    let image = op.apply(&vec![1.0; op.len()]);
    grid.norm(&image) / grid.length().sqrt()
}

/// Classifies boundary data. Only the matrix and the boundary quadrature are used.
///
/// `NoHoles` needs at least `n_modes` near-kernel directions and a fully
/// degenerate low-mode block; holes need a kernel-free low-mode block. Anything
/// in between, or a non-positive `tol_kernel`, is indeterminate.
pub fn classify(op: &DNOperator, n_modes: usize, tol_kernel: f64, tol_const: f64) -> Result<Classification> {
    if n_modes < 4 {
        return Err(Error::Config(format!("n_modes must be at least 4, got {n_modes}")));
    }
    let sv = kernel_singular_values(op, n_modes)?;
    let low_pairs = LOW_MODE_PAIRS.min(n_modes);
    let low_sv = kernel_singular_values(op, low_pairs)?;
    let kernel_dim = count_below(&sv, tol_kernel);
    let low_mode_kernel = count_below(&low_sv, tol_kernel);
    let l1 = lambda1_norm(op);
    let indeterminate = || Error::Indeterminate {
        kernel_dim,
        dimension: 2 * n_modes,
        low_mode_kernel,
        lambda1_norm: l1,
    };
    if !(tol_kernel > 0.0) {
        return Err(indeterminate());
    }
    let verdict = if kernel_dim >= n_modes && low_mode_kernel == 2 * low_pairs {
        Verdict::NoHoles
    } else if low_mode_kernel == 0 {
        if l1 > tol_const {
            Verdict::HolesGrounded
        } else {
            Verdict::HolesIsolated
        }
    } else {
        return Err(indeterminate());
    };
    Ok(Classification {
        verdict,
        kernel_dim,
        low_mode_kernel,
        lambda1_norm: l1,
        singular_values: sv,
        thresholds: Thresholds {
            n_modes,
            tol_kernel,
            tol_const,
            low_mode_pairs: low_pairs,
        },
    })
}

/// Rayleigh quotient of `Λ` on the cosine mode `k`.
pub fn mode_response(op: &DNOperator, k: usize) -> f64 {
    let grid = op.grid();
    let c = grid.fourier_mode(k, false);
    grid.inner(&c, &op.apply(&c)) / grid.inner(&c, &c)
}

/// Near-kernel threshold from two discretizations of the same domain: ten
/// times the spectral norm of the change in the compressed `I + (ΛJ)²`.
pub fn two_grid_tolerance(coarse: &DNOperator, fine: &DNOperator, n_modes: usize) -> Result<f64> {
    let a = compressed_operator(coarse, n_modes)?;
    let b = compressed_operator(fine, n_modes)?;
    Ok(10.0 * (a - b).singular_values().max())
}

/// Mean eigenvalue of each degenerate pair `(λ_{2j-1}, λ_{2j})`, `j = 1..`.
pub fn pair_means(eigs: &[f64]) -> Vec<f64> {
    eigs[1..].chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Total length of Γ0 from the eigenvalue growth `λ_{2j} ≈ 2πj/ℓ`.
///
/// Uses the first `k` eigenvalues. Pair means `λ̄_j` over the upper half of
/// `j` are fitted by `a·j + b`, which absorbs the bounded low-order deviation
/// of domains with holes; the estimate is `2π/a`.
pub fn recover_boundary_length(op: &DNOperator, k: usize) -> Result<f64> {
    if k < 8 {
        return Err(Error::Config(format!("need at least 8 eigenvalues, got {k}")));
    }
    let eigs = op.spectrum(k).values;
    length_from_eigenvalues(&eigs)
}

pub fn length_from_eigenvalues(eigs: &[f64]) -> Result<f64> {
    let means = pair_means(eigs);
    if let Some(index) = means.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneSpectrum { index: index + 1 });
    }
    let jmax = means.len();
    let jmin = (jmax / 2).max(1);
    let pts: Vec<(f64, f64)> = (jmin..=jmax).map(|j| (j as f64, means[j - 1])).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(2.0 * std::f64::consts::PI / slope)
}
