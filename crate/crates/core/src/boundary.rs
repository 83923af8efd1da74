//! Boundary calculus on Γ0: arc length, quadrature, tangential derivative and
//! the zero-mean antiderivative `J`.
//!
//! Samples at non-uniform boundary nodes are interpolated by a periodic cubic
//! spline and resampled to a uniform power-of-two grid; equispaced nodes are
//! transformed directly. Differentiation and integration happen in Fourier
//! space, keeping only the modes the node count resolves. Both operators are linear, so they are tabulated once
//! per grid as dense node-to-node matrices.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::surface::SurfaceMesh;

/// Minimum number of Γ0 nodes for the Fourier calculus.
pub const MIN_NODES: usize = 8;

/// Default relative mean tolerance for the domain of `J`.
pub const DEFAULT_TOL_MEAN: f64 = 1e-3;

#[derive(Debug)]
struct Calculus {
    derivative: DMatrix<f64>,
    antiderivative: DMatrix<f64>,
}

/// Arc-length parametrization and quadrature of Γ0.
#[derive(Debug)]
pub struct BoundaryGrid {
    s: Vec<f64>,
    weights: Vec<f64>,
    length: f64,
    calculus: OnceLock<Calculus>,
}

impl BoundaryGrid {
    /// Arc length measured with the metric along Γ0, starting at its base vertex.
    pub fn from_mesh(mesh: &SurfaceMesh) -> Result<Self> {
        let lengths = mesh.loop_edge_lengths(mesh.gamma0_index())?;
        let n = lengths.len();
        let mut s = Vec::with_capacity(n);
        let mut acc = 0.0;
        for l in &lengths {
            s.push(acc);
            acc += l;
        }
        let weights = (0..n)
            .map(|i| 0.5 * (lengths[i] + lengths[(i + n - 1) % n]))
            .collect();
        Self::from_parts(s, weights, acc)
    }

    /// Uniform grid of `n` nodes on a loop of the given length.
    pub fn uniform(n: usize, length: f64) -> Result<Self> {
        let h = length / n as f64;
        Self::from_parts((0..n).map(|i| i as f64 * h).collect(), vec![h; n], length)
    }

    pub fn from_parts(s: Vec<f64>, weights: Vec<f64>, length: f64) -> Result<Self> {
        let n = s.len();
        if n < MIN_NODES {
            return Err(Error::TooFewNodes {
                got: n,
                need: MIN_NODES,
            });
        }
        if weights.len() != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let bad = |m: String| Err(Error::InvalidMesh(vec![m]));
        if !(length > 0.0 && length.is_finite()) {
            return bad(format!("boundary length {length} is not positive"));
        }
        if s[0] < 0.0 || s.windows(2).any(|w| !(w[1] > w[0])) || s[n - 1] >= length {
            return bad("arc length is not strictly increasing within one period".into());
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return bad("quadrature weights must be positive".into());
        }
        let total: f64 = weights.iter().sum();
        if ((total - length) / length).abs() > 1e-9 {
            return bad(format!(
                "weights sum to {total}, boundary length is {length}"
            ));
        }
        Ok(Self {
            s,
            weights,
            length,
            calculus: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Highest Fourier mode resolved by the nodes.
    pub fn max_mode(&self) -> usize {
        (self.len() - 1) / 2
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `|∫ f ds| / (√ℓ ‖f‖)`, the cosine between `f` and the constants.
    pub fn relative_mean(&self, f: &[f64]) -> f64 {
        let n = self.norm(f);
        if n == 0.0 {
            return 0.0;
        }
        self.integral(f).abs() / (self.length.sqrt() * n)
    }

    pub fn remove_mean(&self, f: &[f64]) -> Vec<f64> {
        let m = self.integral(f) / self.length;
        f.iter().map(|v| v - m).collect()
    }

    /// `cos(2πks/ℓ)` or `sin(2πks/ℓ)` at the nodes.
    pub fn fourier_mode(&self, k: usize, sine: bool) -> Vec<f64> {
        let w = 2.0 * PI * k as f64 / self.length;
        self.s
            .iter()
            .map(|&s| if sine { (w * s).sin() } else { (w * s).cos() })
            .collect()
    }

    /// Zero-mean modes in frequency order: cos 1, sin 1, cos 2, sin 2, ...
    pub fn zero_mean_modes(&self, pairs: usize) -> Vec<Vec<f64>> {
        (1..=pairs)
            .flat_map(|k| [self.fourier_mode(k, false), self.fourier_mode(k, true)])
            .collect()
    }

    fn calculus(&self) -> &Calculus {
        self.calculus.get_or_init(|| build_calculus(self))
    }

    pub fn derivative_matrix(&self) -> &DMatrix<f64> {
        &self.calculus().derivative
    }

    pub fn antiderivative_matrix(&self) -> &DMatrix<f64> {
        &self.calculus().antiderivative
    }

    /// `∂_γ` applied to raw nodal values.
    pub fn differentiate(&self, f: &[f64]) -> Vec<f64> {
        let v = self.derivative_matrix() * DVector::from_column_slice(f);
        v.as_slice().to_vec()
    }

    /// `J` applied to raw nodal values, after checking the mean.
    pub fn integrate(&self, f: &[f64], tol_mean: f64) -> Result<Vec<f64>> {
        let relative = self.relative_mean(f);
        if relative > tol_mean {
            return Err(Error::MeanViolation {
                relative,
                tolerance: tol_mean,
            });
        }
        Ok(self.integrate_unchecked(f))
    }

    /// `J ∘ P` with `P` the projection onto zero-mean traces.
    pub fn integrate_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let v = self.antiderivative_matrix() * DVector::from_column_slice(f);
        self.remove_mean(v.as_slice())
    }
}

/// Second-derivative values of the periodic cubic spline, as a matrix acting on nodal data.
fn spline_moments(s: &[f64], length: f64) -> DMatrix<f64> {
    let n = s.len();
    let h: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 < n {
                s[i + 1] - s[i]
            } else {
                length - s[n - 1] + s[0]
            }
        })
        .collect();
    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        let (hp, hi) = (h[prev], h[i]);
        a[(i, prev)] += hp;
        a[(i, i)] += 2.0 * (hp + hi);
        a[(i, next)] += hi;
        c[(i, next)] += 6.0 / hi;
        c[(i, i)] -= 6.0 / hi + 6.0 / hp;
        c[(i, prev)] += 6.0 / hp;
    }
    a.lu()
        .solve(&c)
        .expect("periodic spline system is diagonally dominant")
}

fn build_calculus(grid: &BoundaryGrid) -> Calculus {
    let n = grid.len();
    let s = &grid.s;
    let length = grid.length;
    let kmax = grid.max_mode();
    // equispaced nodes are transformed directly; otherwise a spline resamples them
    let uniform = s
        .iter()
        .enumerate()
        .all(|(i, &si)| (si - s[0] - length * i as f64 / n as f64).abs() <= 1e-12 * length);
    let big = if uniform {
        n
    } else {
        (2 * n).next_power_of_two().max(64)
    };
    let moments = if uniform {
        DMatrix::zeros(0, 0)
    } else {
        spline_moments(s, length)
    };

    // locate each uniform sample in its spline interval
    let mut locate = Vec::with_capacity(big);
    let mut seg = 0usize;
    for k in 0..big {
        let t = s[0] + length * k as f64 / big as f64;
        while seg + 1 < n && s[seg + 1] <= t {
            seg += 1;
        }
        let (left, right) = (
            s[seg],
            if seg + 1 < n {
                s[seg + 1]
            } else {
                s[0] + length
            },
        );
        locate.push((seg, t - left, right - t, right - left));
    }

    let mut phase = vec![Complex64::new(0.0, 0.0); n * (kmax + 1)];
    for (i, &si) in s.iter().enumerate() {
        for m in 0..=kmax {
            let w = 2.0 * PI * m as f64 / length;
            phase[i * (kmax + 1) + m] = Complex64::from_polar(1.0, w * (si - s[0]));
        }
    }

    let fft = FftPlanner::new().plan_fft_forward(big);
    let mut derivative = DMatrix::zeros(n, n);
    let mut antiderivative = DMatrix::zeros(n, n);
    let mut buf = vec![Complex64::new(0.0, 0.0); big];
    for j in 0..n {
        if uniform {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            buf[j] = Complex64::new(1.0, 0.0);
        } else {
            for (k, &(seg, dl, dr, hseg)) in locate.iter().enumerate() {
                let next = (seg + 1) % n;
                let (y0, y1) = (
                    if seg == j { 1.0 } else { 0.0 },
                    if next == j { 1.0 } else { 0.0 },
                );
                let (m0, m1) = (moments[(seg, j)], moments[(next, j)]);
                let v = m0 * dr.powi(3) / (6.0 * hseg)
                    + m1 * dl.powi(3) / (6.0 * hseg)
                    + (y0 - m0 * hseg * hseg / 6.0) * dr / hseg
                    + (y1 - m1 * hseg * hseg / 6.0) * dl / hseg;
                buf[k] = Complex64::new(v, 0.0);
            }
        }
        fft.process(&mut buf);
        for i in 0..n {
            let (mut d, mut a) = (0.0, 0.0);
            for m in 1..=kmax {
                let w = 2.0 * PI * m as f64 / length;
                let c = buf[m] / big as f64 * phase[i * (kmax + 1) + m];
                // real part of 2·c·(iw) and 2·c/(iw)
                d += -2.0 * w * c.im;
                a += 2.0 * c.im / w;
            }
            derivative[(i, j)] = d;
            antiderivative[(i, j)] = a;
        }
    }
    Calculus {
        derivative,
        antiderivative,
    }
}

/// Real samples on Γ0.
#[derive(Debug, Clone)]
pub struct BoundaryTrace {
    grid: Arc<BoundaryGrid>,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(grid: Arc<BoundaryGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<BoundaryGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.s().iter().map(|&s| f(s)).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<BoundaryGrid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn grid(&self) -> &Arc<BoundaryGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), values)
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn integral(&self) -> f64 {
        self.grid.integral(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `∂_γ tr`.
pub fn tangential_derivative(tr: &BoundaryTrace) -> BoundaryTrace {
    BoundaryTrace {
        grid: tr.grid.clone(),
        values: tr.grid.differentiate(&tr.values),
    }
}

/// Zero-mean antiderivative; rejects traces whose relative mean exceeds `tol_mean`.
pub fn integrate_j(tr: &BoundaryTrace, tol_mean: f64) -> Result<BoundaryTrace> {
    Ok(BoundaryTrace {
        grid: tr.grid.clone(),
        values: tr.grid.integrate(&tr.values, tol_mean)?,
    })
}

/// Complex samples on Γ0.
#[derive(Debug, Clone)]
pub struct ComplexTrace {
    grid: Arc<BoundaryGrid>,
    values: Vec<Complex64>,
}

impl ComplexTrace {
    pub fn new(grid: Arc<BoundaryGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_parts(re: &BoundaryTrace, im: &BoundaryTrace) -> Result<Self> {
        check_same(&re.grid, &im.grid)?;
        Ok(Self {
            grid: re.grid.clone(),
            values: re
                .values
                .iter()
                .zip(&im.values)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        })
    }

    pub fn constant(grid: Arc<BoundaryGrid>, c: Complex64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn grid(&self) -> &Arc<BoundaryGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn re(&self) -> BoundaryTrace {
        BoundaryTrace {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z.re).collect(),
        }
    }

    pub fn im(&self) -> BoundaryTrace {
        BoundaryTrace {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z.im).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        check_same(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Quadrature L² norm.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(z, w)| z.norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn check_same(a: &Arc<BoundaryGrid>, b: &Arc<BoundaryGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || (a.len() == b.len() && a.s() == b.s() && a.length() == b.length()) {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            expected: a.len(),
            got: b.len(),
        })
    }
}
