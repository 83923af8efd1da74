//! Membership criteria for boundary traces of holomorphic functions, the
//! search for admissible traces, and the involutive algebra those traces
//! generate on Γ0.
//!
//! A grounded generator `f` yields the hermitian trace `JΛf − i·f + c`; an
//! isolated generator `h` yields `h + i·(JΛh + c_h)`, or `h` alone when `h` is
//! constant. General elements are pairs `w1 + i·w2` of hermitian traces.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{check_same, BoundaryGrid, BoundaryTrace, ComplexTrace};
use crate::dn::DNOperator;
use crate::error::{Error, Result};
use crate::harmonic::{hole_fluxes, Flavor, ForwardSolver};
use crate::surface::SurfaceMesh;

/// Relative criterion residual accepted when no two-grid estimate is available.
pub const DEFAULT_TOL_CRITERION: f64 = 2e-3;

/// Products may exceed the criterion tolerance by this factor before closure fails.
pub const CLOSURE_FACTOR: f64 = 10.0;

const GN_MAX_ITER: usize = 50;
const GN_MIN_STEP: f64 = 1e-10;
const GN_MAX_HALVINGS: usize = 30;
const INDEPENDENCE_TOL: f64 = 1e-3;

/// Outcome of the grounded criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundedResidual {
    /// `∫ Λf ds`.
    pub mean_flux: f64,
    /// Cosine between `Λf` and the constants; the prefilter compares this with `tol_mean`.
    pub relative_mean: f64,
    /// Quadrature norm of `2Λ(f·JΛf) − ∂_γ[(JΛf)² − f²]`, infinite when prefiltered out.
    pub residual: f64,
    /// `residual` over the sum of the norms of the two sides.
    pub relative: f64,
}

impl GroundedResidual {
    pub fn rejected(&self) -> bool {
        self.residual.is_infinite()
    }
}

/// Outcome of the isolated criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatedResidual {
    pub c_h: f64,
    pub residual: f64,
    /// `residual` over the sum of the norms of the individual terms.
    pub relative: f64,
}

fn jl(op: &DNOperator, f: &[f64]) -> Vec<f64> {
    op.grid().integrate_unchecked(&op.apply(f))
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn grounded_sides(op: &DNOperator, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let grid = op.grid();
    let lhs: Vec<f64> = op.apply(&mul(f, g)).into_iter().map(|x| 2.0 * x).collect();
    let sq: Vec<f64> = g.iter().zip(f).map(|(a, b)| a * a - b * b).collect();
    (lhs, grid.differentiate(&sq))
}

/// Left-hand side of the isolated criterion and its direction `(∂_γ + ΛJΛ)h`,
/// with the norms of all contributing terms.
fn isolated_sides(op: &DNOperator, h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let grid = op.grid();
    let lh = op.apply(h);
    let dh = grid.differentiate(h);
    let half = op.apply(&h.iter().zip(g).map(|(a, b)| 0.5 * (a * a - b * b)).collect::<Vec<_>>());
    let hlh = mul(h, &lh);
    let gdh = mul(g, &dh);
    let lg = op.apply(g);
    let lhs: Vec<f64> = (0..h.len()).map(|i| half[i] - hlh[i] - gdh[i]).collect();
    let dir: Vec<f64> = dh.iter().zip(&lg).map(|(a, b)| a + b).collect();
    let scale = grid.norm(&half) + grid.norm(&hlh) + grid.norm(&gdh);
    (lhs, dir, scale)
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Grounded criterion with the mean-flux prefilter.
pub fn residual_grounded(op: &DNOperator, f: &BoundaryTrace, tol_mean: f64) -> Result<GroundedResidual> {
    check_same(op.grid(), f.grid())?;
    Ok(grounded_raw(op, f.values(), tol_mean))
}

fn grounded_raw(op: &DNOperator, f: &[f64], tol_mean: f64) -> GroundedResidual {
    let grid = op.grid();
    let lf = op.apply(f);
    let mean_flux = grid.integral(&lf);
    let relative_mean = grid.relative_mean(&lf);
    if relative_mean > tol_mean {
        return GroundedResidual {
            mean_flux,
            relative_mean,
            residual: f64::INFINITY,
            relative: f64::INFINITY,
        };
    }
    let g = grid.integrate_unchecked(&lf);
    let (lhs, rhs) = grounded_sides(op, f, &g);
    let residual = grid.norm(&sub(&lhs, &rhs));
    GroundedResidual {
        mean_flux,
        relative_mean,
        residual,
        relative: ratio(residual, grid.norm(&lhs) + grid.norm(&rhs)),
    }
}

fn is_constant(grid: &BoundaryGrid, h: &[f64]) -> bool {
    grid.norm(&grid.remove_mean(h)) <= 1e-12 * grid.norm(h)
}

/// Isolated criterion with `c_h` fitted by least squares.
pub fn residual_isolated(op: &DNOperator, h: &BoundaryTrace) -> Result<IsolatedResidual> {
    check_same(op.grid(), h.grid())?;
    isolated_raw(op, h.values())
}

fn isolated_raw(op: &DNOperator, h: &[f64]) -> Result<IsolatedResidual> {
    let grid = op.grid();
    if is_constant(grid, h) {
        return Ok(IsolatedResidual {
            c_h: 0.0,
            residual: 0.0,
            relative: 0.0,
        });
    }
    let g = jl(op, h);
    let (lhs, dir, scale) = isolated_sides(op, h, &g);
    let dir_scale = grid.norm(&grid.differentiate(h)) + grid.norm(&op.apply(&g));
    let bb = grid.inner(&dir, &dir);
    let c_h = if bb.sqrt() <= 1e-12 * dir_scale {
        if grid.norm(&lhs) > 1e-8 * scale {
            return Err(Error::NoSolution);
        }
        0.0
    } else {
        grid.inner(&lhs, &dir) / bb
    };
    let r: Vec<f64> = lhs.iter().zip(&dir).map(|(a, b)| a - c_h * b).collect();
    let residual = grid.norm(&r);
    Ok(IsolatedResidual {
        c_h,
        residual,
        relative: ratio(residual, scale + c_h.abs() * bb.sqrt()),
    })
}

/// Relative criterion residual of `data` for the operator's flavor; infinite
/// when the grounded prefilter rejects it or the isolated criterion has no solution.
pub fn criterion_residual(op: &DNOperator, data: &BoundaryTrace, tol_mean: f64) -> Result<f64> {
    match op.flavor() {
        Flavor::Grounded => Ok(residual_grounded(op, data, tol_mean)?.relative),
        Flavor::Isolated => match residual_isolated(op, data) {
            Ok(r) => Ok(r.relative),
            Err(Error::NoSolution) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        },
    }
}

/// Criterion tolerance from two discretizations of the same domain: ten times
/// the largest relative change of the Rayleigh quotient of `Λ` over the first
/// `pairs` Fourier mode pairs.
pub fn criterion_tolerance(coarse: &DNOperator, fine: &DNOperator, pairs: usize) -> Result<f64> {
    let available = coarse.grid().max_mode().min(fine.grid().max_mode());
    if pairs == 0 || pairs > available {
        return Err(Error::UnresolvedModes {
            requested: pairs,
            available,
        });
    }
    let quotient = |op: &DNOperator, k: usize, sine: bool| {
        let g = op.grid();
        let b = g.fourier_mode(k, sine);
        g.inner(&b, &op.apply(&b)) / g.inner(&b, &b)
    };
    let mut worst: f64 = 0.0;
    for k in 1..=pairs {
        for sine in [false, true] {
            let (a, b) = (quotient(coarse, k, sine), quotient(fine, k, sine));
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(10.0 * worst)
}

/// How admissible traces are searched for.
#[derive(Debug, Clone, Copy)]
pub enum SearchMode<'a> {
    /// Exact linear constraints from the mesh that produced the operator.
    Validation(&'a SurfaceMesh),
    /// Gauss–Newton on the criterion residual from the operator alone.
    Blind { seed: u64, restarts: usize },
}

#[derive(Debug, Clone)]
pub struct AdmissibleBasis {
    pub traces: Vec<BoundaryTrace>,
    /// Relative criterion residual of each trace.
    pub residuals: Vec<f64>,
    /// `c_h` of each trace for the isolated flavor, zero for grounded.
    pub constants: Vec<f64>,
    /// Number of independent constraints found on the searched mode space
    /// (validation mode only).
    pub codimension: Option<usize>,
    /// Fewer than the requested number of traces passed.
    pub partial: bool,
}

/// Search parameters shared by both modes.
#[derive(Debug, Clone, Copy)]
pub struct SearchTolerances {
    pub tol_mean: f64,
    pub tol_criterion: f64,
    /// Constraint singular values below this fraction of the reference are dropped.
    pub rank_tol: f64,
}

impl Default for SearchTolerances {
    fn default() -> Self {
        Self {
            tol_mean: crate::boundary::DEFAULT_TOL_MEAN,
            tol_criterion: DEFAULT_TOL_CRITERION,
            rank_tol: 1e-3,
        }
    }
}

/// Up to `n` independent admissible zero-mean traces in the span of the first
/// `2n` Fourier modes, in frequency order.
pub fn admissible_basis(op: &DNOperator, n: usize, mode: SearchMode<'_>, tol: SearchTolerances) -> Result<AdmissibleBasis> {
    if n == 0 {
        return Err(Error::Config("requested zero admissible traces".into()));
    }
    let grid = op.grid();
    let pairs = n;
    if pairs > grid.max_mode() {
        return Err(Error::UnresolvedModes {
            requested: pairs,
            available: grid.max_mode(),
        });
    }
    let modes: Vec<Vec<f64>> = grid
        .zero_mean_modes(pairs)
        .iter()
        .map(|m| grid.remove_mean(m))
        .collect();
    let (candidates, codimension) = match mode {
        SearchMode::Validation(mesh) => {
            let (c, r) = validation_candidates(op, mesh, &modes, tol.rank_tol)?;
            (c, Some(r))
        }
        SearchMode::Blind { seed, restarts } => (blind_candidates(op, &modes, seed, restarts, tol), None),
    };

    let mut traces = Vec::new();
    let mut residuals = Vec::new();
    let mut constants = Vec::new();
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for cand in candidates {
        if traces.len() == n {
            break;
        }
        let mut v = cand.clone();
        for b in &accepted {
            let c = grid.inner(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nv = grid.norm(&v);
        if nv <= INDEPENDENCE_TOL * grid.norm(&cand) || nv == 0.0 {
            continue;
        }
        let v: Vec<f64> = v.into_iter().map(|x| x / nv).collect();
        let (rel, c_h) = match op.flavor() {
            Flavor::Grounded => (grounded_raw(op, &v, tol.tol_mean).relative, 0.0),
            Flavor::Isolated => match isolated_raw(op, &v) {
                Ok(r) => (r.relative, r.c_h),
                Err(_) => (f64::INFINITY, 0.0),
            },
        };
        accepted.push(v.clone());
        if rel <= tol.tol_criterion {
            traces.push(BoundaryTrace::new(grid.clone(), v)?);
            residuals.push(rel);
            constants.push(c_h);
        }
    }
    Ok(AdmissibleBasis {
        partial: traces.len() < n,
        traces,
        residuals,
        constants,
        codimension,
    })
}

/// Linear functionals on Γ0 data whose kernel is the admissible set, as rows
/// over the given modes.
pub fn admissibility_constraints(op: &DNOperator, mesh: &SurfaceMesh, modes: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if let Some(fp) = op.fingerprint() {
        if fp != mesh.fingerprint_hex() {
            return Err(Error::MeshMismatch);
        }
    }
    if mesh.gamma0().len() != op.len() {
        return Err(Error::GridMismatch {
            expected: op.len(),
            got: mesh.gamma0().len(),
        });
    }
    let m = mesh.hole_count();
    let solver = ForwardSolver::new(mesh, Flavor::Grounded)?;
    let k = solver.dirichlet().stiffness();
    let fluxes = |data: &[f64]| -> Result<Vec<f64>> { Ok(hole_fluxes(mesh, k, &solver.extend(data)?)) };
    match op.flavor() {
        Flavor::Grounded => {
            let cols: Vec<Vec<f64>> = modes.par_iter().map(|b| fluxes(b)).collect::<Result<_>>()?;
            Ok(DMatrix::from_fn(m, modes.len(), |j, i| cols[i][j]))
        }
        Flavor::Isolated => {
            if m < 2 {
                return Ok(DMatrix::zeros(0, modes.len()));
            }
            let floating = floating_potentials(mesh, &solver, k)?;
            let cols: Vec<Vec<f64>> = modes
                .par_iter()
                .map(|b| {
                    let c = floating.solve(&fluxes(&jl(op, b))?);
                    Ok((1..m).map(|j| c[j] - c[0]).collect())
                })
                .collect::<Result<_>>()?;
            Ok(DMatrix::from_fn(m - 1, modes.len(), |j, i| cols[i][j]))
        }
    }
}

/// Maps hole fluxes of a grounded extension to the hole constants that cancel them.
struct FloatingPotentials {
    inverse: DMatrix<f64>,
}

impl FloatingPotentials {
    fn solve(&self, p: &[f64]) -> Vec<f64> {
        (-(&self.inverse * DVector::from_column_slice(p))).as_slice().to_vec()
    }
}

fn floating_potentials(mesh: &SurfaceMesh, solver: &ForwardSolver, k: &crate::linalg::CsrMatrix) -> Result<FloatingPotentials> {
    let m = mesh.hole_count();
    let n0 = mesh.gamma0().len();
    let loops: Vec<&[usize]> = mesh.hole_loops().collect();
    let mut f = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut values = vec![0.0; n0];
        for (l, lp) in loops.iter().enumerate() {
            values.extend(std::iter::repeat_n(if l == j { 1.0 } else { 0.0 }, lp.len()));
        }
        let u = solver.dirichlet().solve(&values);
        for (i, flux) in hole_fluxes(mesh, k, &u).into_iter().enumerate() {
            f[(i, j)] = flux;
        }
    }
    let inverse = f.try_inverse().ok_or(Error::Singular {
        pivot: 0,
        value: 0.0,
    })?;
    Ok(FloatingPotentials { inverse })
}

/// Constant `c_h` predicted for an isolated trace from the mesh: minus the
/// common value of the harmonic conjugate on the holes.
pub fn floating_constant(op: &DNOperator, mesh: &SurfaceMesh, h: &BoundaryTrace) -> Result<f64> {
    check_same(op.grid(), h.grid())?;
    if mesh.hole_count() == 0 {
        return Err(Error::Descriptor("surface has no holes".into()));
    }
    let solver = ForwardSolver::new(mesh, Flavor::Grounded)?;
    let k = solver.dirichlet().stiffness();
    let floating = floating_potentials(mesh, &solver, k)?;
    let u = solver.extend(&jl(op, h.values()))?;
    let c = floating.solve(&hole_fluxes(mesh, k, &u));
    Ok(-c[0])
}

fn validation_candidates(op: &DNOperator, mesh: &SurfaceMesh, modes: &[Vec<f64>], rank_tol: f64) -> Result<(Vec<Vec<f64>>, usize)> {
    let p = admissibility_constraints(op, mesh, modes)?;
    let d = modes.len();
    if p.nrows() == 0 {
        return Ok((modes.to_vec(), 0));
    }
    let reference = match op.flavor() {
        // flux of the constant trace sets the scale of the grounded periods
        Flavor::Grounded => {
            let solver = ForwardSolver::new(mesh, Flavor::Grounded)?;
            let u = solver.extend(&vec![1.0; op.len()])?;
            DVector::from_vec(hole_fluxes(mesh, solver.dirichlet().stiffness(), &u)).norm()
        }
        Flavor::Isolated => p.column_iter().map(|c| c.norm()).fold(0.0, f64::max),
    };
    let svd = p.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > rank_tol * reference)
        .count();
    // projector onto the orthogonal complement of the constraint row space
    let rows = v_t.rows(0, rank).into_owned();
    let proj = DMatrix::identity(d, d) - rows.transpose() * &rows;
    let candidates = (0..d)
        .map(|i| {
            let coeffs = proj.column(i);
            let mut v = vec![0.0; op.len()];
            for (c, b) in coeffs.iter().zip(modes) {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
            }
            v
        })
        .collect();
    Ok((candidates, rank))
}

/// Criterion residual vector (quadrature-weighted) and Jacobian over mode
/// coefficients, with the isolated constant as a trailing unknown.
struct ResidualModel<'a> {
    op: &'a DNOperator,
    modes: &'a [Vec<f64>],
    mode_jl: Vec<Vec<f64>>,
    mode_d: Vec<Vec<f64>>,
    sqrt_w: Vec<f64>,
}

impl<'a> ResidualModel<'a> {
    fn new(op: &'a DNOperator, modes: &'a [Vec<f64>]) -> Self {
        let grid = op.grid();
        Self {
            op,
            modes,
            mode_jl: modes.iter().map(|b| jl(op, b)).collect(),
            mode_d: modes.iter().map(|b| grid.differentiate(b)).collect(),
            sqrt_w: grid.weights().iter().map(|w| w.sqrt()).collect(),
        }
    }

    fn unknowns(&self) -> usize {
        self.modes.len() + usize::from(self.op.flavor() == Flavor::Isolated)
    }

    fn combine(&self, x: &[f64], sets: &[Vec<f64>]) -> Vec<f64> {
        let mut v = vec![0.0; self.op.len()];
        for (c, b) in x.iter().zip(sets) {
            v.iter_mut().zip(b).for_each(|(a, y)| *a += c * y);
        }
        v
    }

    fn trace(&self, x: &[f64]) -> Vec<f64> {
        self.combine(&x[..self.modes.len()], self.modes)
    }

    fn weigh(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.sqrt_w).map(|(a, w)| a * w).collect()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let f = self.trace(x);
        let g = self.combine(&x[..self.modes.len()], &self.mode_jl);
        let op = self.op;
        let grid = op.grid();
        match op.flavor() {
            Flavor::Grounded => {
                let (lhs, rhs) = grounded_sides(op, &f, &g);
                let mut r = self.weigh(&sub(&lhs, &rhs));
                r.push(grid.integral(&op.apply(&f)) / grid.length().sqrt());
                r
            }
            Flavor::Isolated => {
                let c = x[self.modes.len()];
                let (lhs, dir, _) = isolated_sides(op, &f, &g);
                self.weigh(&lhs.iter().zip(&dir).map(|(a, b)| a - c * b).collect::<Vec<_>>())
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let op = self.op;
        let grid = op.grid();
        let nm = self.modes.len();
        let f = self.trace(x);
        let g = self.combine(&x[..nm], &self.mode_jl);
        let cols: Vec<Vec<f64>> = match op.flavor() {
            Flavor::Grounded => (0..nm)
                .into_par_iter()
                .map(|i| {
                    let (b, gb) = (&self.modes[i], &self.mode_jl[i]);
                    let prod: Vec<f64> = (0..f.len()).map(|k| 2.0 * (b[k] * g[k] + f[k] * gb[k])).collect();
                    let sq: Vec<f64> = (0..f.len()).map(|k| 2.0 * (g[k] * gb[k] - f[k] * b[k])).collect();
                    let mut col = self.weigh(&sub(&op.apply(&prod), &grid.differentiate(&sq)));
                    col.push(grid.integral(&op.apply(b)) / grid.length().sqrt());
                    col
                })
                .collect(),
            Flavor::Isolated => {
                let c = x[nm];
                let lf = op.apply(&f);
                let df = grid.differentiate(&f);
                let mut cols: Vec<Vec<f64>> = (0..nm)
                    .into_par_iter()
                    .map(|i| {
                        let (b, gb, db) = (&self.modes[i], &self.mode_jl[i], &self.mode_d[i]);
                        let lb = op.apply(b);
                        let half: Vec<f64> = (0..f.len()).map(|k| f[k] * b[k] - g[k] * gb[k]).collect();
                        let lhalf = op.apply(&half);
                        let lgb = op.apply(gb);
                        let col: Vec<f64> = (0..f.len())
                            .map(|k| {
                                let dl = lhalf[k] - b[k] * lf[k] - f[k] * lb[k] - gb[k] * df[k] - g[k] * db[k];
                                let dd = db[k] + lgb[k];
                                dl - c * dd
                            })
                            .collect();
                        self.weigh(&col)
                    })
                    .collect();
                let (_, dir, _) = isolated_sides(op, &f, &g);
                cols.push(self.weigh(&dir.iter().map(|v| -v).collect::<Vec<_>>()));
                cols
            }
        };
        let rows = cols[0].len();
        DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r])
    }
}

/// Damped Gauss–Newton with coordinate `fixed` held at its initial value.
fn gauss_newton(model: &ResidualModel<'_>, mut x: Vec<f64>, fixed: usize) -> Vec<f64> {
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r = model.residual(&x);
    let mut rn = norm(&r);
    for _ in 0..GN_MAX_ITER {
        let jac = model.jacobian(&x).remove_column(fixed);
        let rhs = -DVector::from_vec(r.clone());
        let Ok(step) = jac.svd(true, true).solve(&rhs, 1e-12) else {
            break;
        };
        let mut full = step.as_slice().to_vec();
        full.insert(fixed, 0.0);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..GN_MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&full).map(|(a, d)| a + t * d).collect();
            let tr = model.residual(&trial);
            let tn = norm(&tr);
            if tn <= rn {
                x = trial;
                r = tr;
                rn = tn;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        let size = t * full.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !improved || size < GN_MIN_STEP {
            break;
        }
    }
    x
}

fn blind_candidates(op: &DNOperator, modes: &[Vec<f64>], seed: u64, restarts: usize, tol: SearchTolerances) -> Vec<Vec<f64>> {
    let model = ResidualModel::new(op, modes);
    let passes = |x: &[f64]| -> bool {
        let f = model.trace(x);
        let rel = match op.flavor() {
            Flavor::Grounded => grounded_raw(op, &f, tol.tol_mean).relative,
            Flavor::Isolated => isolated_raw(op, &f).map(|r| r.relative).unwrap_or(f64::INFINITY),
        };
        rel <= tol.tol_criterion
    };
    let initial = |s: usize| -> Vec<f64> {
        let mut x = vec![0.0; model.unknowns()];
        x[s] = 1.0;
        if op.flavor() == Flavor::Isolated {
            let f = model.trace(&x);
            x[modes.len()] = isolated_raw(op, &f).map(|r| r.c_h).unwrap_or(0.0);
        }
        x
    };
    (0..modes.len())
        .into_par_iter()
        .filter_map(|s| {
            let x = gauss_newton(&model, initial(s), s);
            if passes(&x) {
                return Some(model.trace(&x));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            for _ in 0..restarts {
                let mut x0 = initial(s);
                for (i, v) in x0.iter_mut().enumerate().take(modes.len()) {
                    if i != s {
                        *v = rng.random_range(-0.5..0.5);
                    }
                }
                let x = gauss_newton(&model, x0, s);
                if passes(&x) {
                    return Some(model.trace(&x));
                }
            }
            None
        })
        .collect()
}

/// What produced a hermitian part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartSource {
    Constant { value: f64 },
    Grounded { f: Vec<f64>, constant: f64 },
    Isolated { h: Vec<f64>, c_h: f64 },
    /// Re-verified combination of products.
    Product { residual: f64 },
}

impl PartSource {
    fn negated(&self) -> Self {
        match self {
            Self::Constant { value } => Self::Constant { value: -value },
            Self::Grounded { f, constant } => Self::Grounded {
                f: f.iter().map(|v| -v).collect(),
                constant: -constant,
            },
            Self::Isolated { h, c_h } => Self::Isolated {
                h: h.iter().map(|v| -v).collect(),
                c_h: -c_h,
            },
            Self::Product { residual } => Self::Product { residual: *residual },
        }
    }
}

/// Boundary trace of a holomorphic function real on the inner boundary.
#[derive(Debug, Clone)]
pub struct HermitianPart {
    trace: ComplexTrace,
    source: PartSource,
}

impl HermitianPart {
    pub fn trace(&self) -> &ComplexTrace {
        &self.trace
    }

    pub fn source(&self) -> &PartSource {
        &self.source
    }

    fn negated(&self) -> Self {
        Self {
            trace: self.trace.map(|z| -z),
            source: self.source.negated(),
        }
    }
}

/// `η = w1 + i·w2` with hermitian `w1`, `w2`.
#[derive(Debug, Clone)]
pub struct TraceAlgebraElement {
    w1: HermitianPart,
    w2: HermitianPart,
}

impl TraceAlgebraElement {
    /// Pairs two hermitian parts; the decomposition is kept as given.
    pub fn from_parts(w1: HermitianPart, w2: HermitianPart) -> Result<Self> {
        check_same(w1.trace.grid(), w2.trace.grid())?;
        Ok(Self { w1, w2 })
    }

    pub fn w1(&self) -> &HermitianPart {
        &self.w1
    }

    pub fn w2(&self) -> &HermitianPart {
        &self.w2
    }

    pub fn grid(&self) -> &Arc<BoundaryGrid> {
        self.w1.trace.grid()
    }

    /// Boundary values of `η`.
    pub fn values(&self) -> ComplexTrace {
        let i = Complex64::i();
        self.w1
            .trace
            .zip_with(&self.w2.trace, |a, b| a + i * b)
            .expect("parts share a grid")
    }

    /// `η* = w1 − i·w2`.
    pub fn star(&self) -> Self {
        Self {
            w1: self.w1.clone(),
            w2: self.w2.negated(),
        }
    }

    /// `max(sup|η|, sup|η*|)` over the Γ0 nodes.
    pub fn triple_norm(&self) -> f64 {
        self.values().sup_norm().max(self.star().values().sup_norm())
    }

    /// `w2` vanishes to within `tol` relative to `w1`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.w2.trace.sup_norm() <= tol * self.w1.trace.sup_norm().max(1.0)
    }
}

/// Builds and multiplies trace-algebra elements for one DN operator.
#[derive(Debug, Clone)]
pub struct TraceAlgebra {
    op: Arc<DNOperator>,
    tol_mean: f64,
    tol_criterion: f64,
}

impl TraceAlgebra {
    pub fn new(op: Arc<DNOperator>, tol_mean: f64, tol_criterion: f64) -> Result<Self> {
        if !(tol_mean > 0.0 && tol_criterion > 0.0) {
            return Err(Error::Config("algebra tolerances must be positive".into()));
        }
        Ok(Self {
            op,
            tol_mean,
            tol_criterion,
        })
    }

    pub fn op(&self) -> &Arc<DNOperator> {
        &self.op
    }

    pub fn flavor(&self) -> Flavor {
        self.op.flavor()
    }

    pub fn tol_criterion(&self) -> f64 {
        self.tol_criterion
    }

    pub fn grid(&self) -> &Arc<BoundaryGrid> {
        self.op.grid()
    }

    pub fn constant_part(&self, value: f64) -> HermitianPart {
        HermitianPart {
            trace: ComplexTrace::constant(self.grid().clone(), value.into()),
            source: PartSource::Constant { value },
        }
    }

    /// Hermitian trace generated by `data` (and `constant`) under the flavor's formula.
    pub fn hermitian(&self, data: &BoundaryTrace, constant: f64) -> Result<HermitianPart> {
        check_same(self.grid(), data.grid())?;
        let grid = self.grid();
        let d = data.values();
        match self.flavor() {
            Flavor::Grounded => {
                if grid.norm(d) == 0.0 {
                    return Ok(self.constant_part(constant));
                }
                let r = grounded_raw(&self.op, d, self.tol_mean);
                if r.rejected() {
                    return Err(Error::MeanViolation {
                        relative: r.relative_mean,
                        tolerance: self.tol_mean,
                    });
                }
                self.check(r.relative)?;
                let g = jl(&self.op, d);
                let values = g.iter().zip(d).map(|(a, f)| Complex64::new(a + constant, -f)).collect();
                Ok(HermitianPart {
                    trace: ComplexTrace::new(grid.clone(), values)?,
                    source: PartSource::Grounded {
                        f: d.to_vec(),
                        constant,
                    },
                })
            }
            Flavor::Isolated => {
                let h: Vec<f64> = d.iter().map(|v| v + constant).collect();
                if is_constant(grid, &h) || grid.norm(&h) == 0.0 {
                    let value = grid.integral(&h) / grid.length();
                    return Ok(self.constant_part(value));
                }
                let r = isolated_raw(&self.op, &h)?;
                self.check(r.relative)?;
                let g = jl(&self.op, &h);
                let values = h.iter().zip(&g).map(|(a, b)| Complex64::new(*a, b + r.c_h)).collect();
                Ok(HermitianPart {
                    trace: ComplexTrace::new(grid.clone(), values)?,
                    source: PartSource::Isolated { h, c_h: r.c_h },
                })
            }
        }
    }

    fn check(&self, relative: f64) -> Result<()> {
        if relative <= self.tol_criterion {
            Ok(())
        } else {
            Err(Error::Criterion {
                residual: relative,
                tolerance: self.tol_criterion,
            })
        }
    }

    /// Hermitian element from one generator.
    pub fn make_element(&self, data: &BoundaryTrace, constant: f64) -> Result<TraceAlgebraElement> {
        Ok(TraceAlgebraElement {
            w1: self.hermitian(data, constant)?,
            w2: self.constant_part(0.0),
        })
    }

    pub fn constant(&self, c: Complex64) -> TraceAlgebraElement {
        TraceAlgebraElement {
            w1: self.constant_part(c.re),
            w2: self.constant_part(c.im),
        }
    }

    /// Relative residual of a candidate hermitian trace: the criterion on its
    /// generator combined with the deviation from the flavor's trace formula.
    pub fn part_residual(&self, p: &ComplexTrace) -> Result<f64> {
        check_same(self.grid(), p.grid())?;
        let grid = self.grid();
        let scale = p.norm();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let re: Vec<f64> = p.values().iter().map(|z| z.re).collect();
        let im: Vec<f64> = p.values().iter().map(|z| z.im).collect();
        let off_constant = |v: &[f64]| grid.norm(&grid.remove_mean(v)) / scale;
        match self.flavor() {
            Flavor::Grounded => {
                let f: Vec<f64> = im.iter().map(|v| -v).collect();
                if grid.norm(&f) <= 1e-12 * scale {
                    return Ok(off_constant(&re) + grid.norm(&f) / scale);
                }
                let r = grounded_raw(&self.op, &f, self.tol_mean);
                let dev = off_constant(&sub(&re, &jl(&self.op, &f)));
                Ok(r.relative.max(dev))
            }
            Flavor::Isolated => {
                if is_constant(grid, &re) {
                    return Ok(grid.norm(&im) / scale);
                }
                let rel = isolated_raw(&self.op, &re).map(|r| r.relative).unwrap_or(f64::INFINITY);
                let dev = off_constant(&sub(&im, &jl(&self.op, &re)));
                Ok(rel.max(dev))
            }
        }
    }

    fn verified(&self, trace: ComplexTrace, part: &'static str) -> Result<HermitianPart> {
        let residual = self.part_residual(&trace)?;
        let limit = CLOSURE_FACTOR * self.tol_criterion;
        if !(residual <= limit) {
            return Err(Error::ClosureViolation { part, residual, limit });
        }
        Ok(HermitianPart {
            trace,
            source: PartSource::Product { residual },
        })
    }

    /// `(w1 + i w2)(w3 + i w4)`, with both new hermitian parts re-verified.
    pub fn product(&self, a: &TraceAlgebraElement, b: &TraceAlgebraElement) -> Result<TraceAlgebraElement> {
        check_same(a.grid(), b.grid())?;
        check_same(self.grid(), a.grid())?;
        let (w1, w2) = (a.w1.trace.values(), a.w2.trace.values());
        let (w3, w4) = (b.w1.trace.values(), b.w2.trace.values());
        let n = w1.len();
        let re: Vec<Complex64> = (0..n).map(|k| w1[k] * w3[k] - w2[k] * w4[k]).collect();
        let im: Vec<Complex64> = (0..n).map(|k| w1[k] * w4[k] + w2[k] * w3[k]).collect();
        let grid = self.grid().clone();
        Ok(TraceAlgebraElement {
            w1: self.verified(ComplexTrace::new(grid.clone(), re)?, "w1")?,
            w2: self.verified(ComplexTrace::new(grid, im)?, "w2")?,
        })
    }
}
