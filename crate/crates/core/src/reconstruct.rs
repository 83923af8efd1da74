//! Character cloud of a trace algebra on the doubled surface, and the geometry
//! read off from it: seam, sheets, a conformal metric and the annulus modulus.
//!
//! Characters are realized by point evaluation at the vertices of the doubled
//! mesh. Each generator `η = w1 + i·w2` is extended harmonically to the double
//! with data `η` on Γ0⁺ and `conj(η*)` on Γ0⁻, so a point carries the values
//! `χ(η_j)` and `χ(η_j*)` of every generator.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::TraceAlgebraElement;
use crate::boundary::{BoundaryGrid, ComplexTrace};
use crate::dn::{assemble_dn, DNOperator};
use crate::doubled::DoubledSurface;
use crate::error::{Error, Result};
use crate::harmonic::{cr_residual_raw, gradient_norm, DirichletSolver, DoubledSolver, Flavor, assemble_stiffness};
use crate::surface::{extract_boundary_loops, Metric2, Orientation, SurfaceMesh};

/// Hermitian-flag tolerance relative to the largest generator value.
pub const DEFAULT_TOL_HERMITIAN: f64 = 1e-8;
/// Relative slack of the maximum-modulus comparison.
pub const DEFAULT_SHILOV_SLACK: f64 = 1e-6;
/// Largest relative RMS misfit accepted by the annulus modulus fit.
pub const MODULUS_FIT_LIMIT: f64 = 2e-2;
/// Singular values below this fraction of the largest count as zero in the metric fit.
pub const METRIC_RANK_TOL: f64 = 1e-6;

const MODULUS_RANGE: (f64, f64) = (1e-3, 20.0);

/// `η` on Γ0⁺ and `conj(η*)` on Γ0⁻, index-aligned through the involution.
pub fn boundary_data_on_cover(a: &TraceAlgebraElement) -> (ComplexTrace, ComplexTrace) {
    let plus = a.values();
    let minus = a.star().values().conj();
    (plus, minus)
}

#[derive(Debug, Clone)]
struct Extension {
    w1: Vec<Complex64>,
    w2: Vec<Complex64>,
    cr_residual: f64,
}

/// Point-evaluation characters: one point per vertex, `k` generator values each.
#[derive(Debug, Clone)]
pub struct CharacterCloud {
    generators: Vec<Extension>,
    boundary: Vec<bool>,
    hermitian: Vec<bool>,
    vertex: Option<Vec<usize>>,
    sheet: Option<Vec<i8>>,
    holes: usize,
}

impl CharacterCloud {
    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn generator_count(&self) -> usize {
        self.generators.len()
    }

    /// `χ_p(η_j)`.
    pub fn value(&self, p: usize, j: usize) -> Complex64 {
        let g = &self.generators[j];
        g.w1[p] + Complex64::i() * g.w2[p]
    }

    /// `χ_p(η_j*)`.
    pub fn star_value(&self, p: usize, j: usize) -> Complex64 {
        let g = &self.generators[j];
        g.w1[p] - Complex64::i() * g.w2[p]
    }

    pub fn point(&self, p: usize) -> Vec<Complex64> {
        (0..self.generator_count()).map(|j| self.value(p, j)).collect()
    }

    /// Values of generator `j` at every point.
    pub fn generator_values(&self, j: usize) -> Vec<Complex64> {
        (0..self.len()).map(|p| self.value(p, j)).collect()
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn hermitian_flags(&self) -> &[bool] {
        &self.hermitian
    }

    /// Doubled-mesh vertex of each point, when built from a mesh.
    pub fn vertex_links(&self) -> Option<&[usize]> {
        self.vertex.as_deref()
    }

    /// `+1`/`-1` per sheet and `0` on the seam, after [`split_components`].
    pub fn sheet_labels(&self) -> Option<&[i8]> {
        self.sheet.as_deref()
    }

    /// Relative Cauchy–Riemann residual of each generator's extension.
    pub fn cr_residuals(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.cr_residual).collect()
    }

    /// Number of holes of the surface the cloud was built for.
    pub fn hole_count(&self) -> usize {
        self.holes
    }

    /// Largest `|χ(η_j)|` over the cloud.
    pub fn scale(&self) -> f64 {
        (0..self.len())
            .flat_map(|p| (0..self.generator_count()).map(move |j| (p, j)))
            .map(|(p, j)| self.value(p, j).norm())
            .fold(0.0, f64::max)
    }

    /// `max_j |χ(η_j*) − conj χ(η_j)|` at point `p`.
    pub fn hermitian_defect(&self, p: usize) -> f64 {
        (0..self.generator_count())
            .map(|j| (self.star_value(p, j) - self.value(p, j).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// The point map `χ ↦ conj ∘ χ ∘ *`, realized by nearest match in value space.
    pub fn involution(&self) -> Vec<usize> {
        let n = self.len();
        let k = self.generator_count();
        if k == 0 {
            return (0..n).collect();
        }
        let points: Vec<Vec<Complex64>> = (0..n).map(|p| self.point(p)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a][0].re.total_cmp(&points[b][0].re).then(a.cmp(&b)));
        let keys: Vec<f64> = order.iter().map(|&p| points[p][0].re).collect();
        (0..n)
            .into_par_iter()
            .map(|p| {
                let target: Vec<Complex64> = (0..k).map(|j| self.star_value(p, j).conj()).collect();
                nearest_by_sweep(&points, &order, &keys, &target, p)
            })
            .collect()
    }

    /// CSV rows `id,re_0,im_0,...,boundary,hermitian,sheet`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 0..self.generator_count() {
            let _ = write!(out, ",re_{j},im_{j}");
        }
        out.push_str(",boundary,hermitian,sheet\n");
        for p in 0..self.len() {
            let _ = write!(out, "{p}");
            for j in 0..self.generator_count() {
                let z = self.value(p, j);
                let _ = write!(out, ",{:.17e},{:.17e}", z.re, z.im);
            }
            let sheet = self.sheet.as_ref().map_or(0, |s| s[p]);
            let _ = writeln!(
                out,
                ",{},{},{}",
                self.boundary[p] as u8, self.hermitian[p] as u8, sheet
            );
        }
        out
    }

    fn flag_hermitian(&mut self, tol: f64) {
        let limit = tol * self.scale();
        self.hermitian = (0..self.len()).map(|p| self.hermitian_defect(p) <= limit).collect();
    }
}

fn distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Exact nearest neighbour using a sweep over points sorted by one coordinate.
/// Ties prefer `prefer`, then the lower index.
fn nearest_by_sweep(points: &[Vec<Complex64>], order: &[usize], keys: &[f64], target: &[Complex64], prefer: usize) -> usize {
    let start = keys.partition_point(|&k| k < target[0].re);
    let mut best = (f64::INFINITY, usize::MAX);
    let consider = |q: usize, best: &mut (f64, usize)| {
        let d = distance(&points[q], target);
        let better = d < best.0 || (d == best.0 && (q == prefer || (best.1 != prefer && q < best.1)));
        if better {
            *best = (d, q);
        }
    };
    let mut up = start;
    while up < order.len() && keys[up] - target[0].re <= best.0 {
        consider(order[up], &mut best);
        up += 1;
    }
    let mut down = start;
    while down > 0 && target[0].re - keys[down - 1] <= best.0 {
        down -= 1;
        consider(order[down], &mut best);
    }
    best.1
}

/// Checks that the joint boundary values on both copies of Γ0 are injective:
/// two samples that are not grid neighbours must lie farther apart in value
/// space than the local spacing between consecutive samples.
fn check_separation(plus: &[Vec<Complex64>], minus: &[Vec<Complex64>]) -> Result<()> {
    let n = plus.len();
    let samples: Vec<&Vec<Complex64>> = plus.iter().chain(minus).collect();
    let spacing: Vec<f64> = (0..2 * n)
        .map(|a| {
            let (copy, i) = (a / n, a % n);
            let prev = copy * n + (i + n - 1) % n;
            let next = copy * n + (i + 1) % n;
            distance(samples[a], samples[prev]).min(distance(samples[a], samples[next]))
        })
        .collect();
    let found = (0..2 * n).into_par_iter().find_map_first(|a| {
        (a + 1..2 * n).find_map(|b| {
            if a / n == b / n {
                let d = (b - a).min(n - (b - a));
                if d <= 2 {
                    return None;
                }
            }
            let limit = spacing[a].max(spacing[b]);
            (distance(samples[a], samples[b]) <= limit).then_some((a, b))
        })
    });
    match found {
        Some((first, second)) => Err(Error::SeparationFailure { first, second }),
        None => Ok(()),
    }
}

fn split_parts(values: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (values.iter().map(|z| z.re).collect(), values.iter().map(|z| z.im).collect())
}

fn relative_cr(mesh: &SurfaceMesh, re: &[f64], im: &[f64]) -> f64 {
    let scale = gradient_norm(mesh, re) + gradient_norm(mesh, im);
    if scale == 0.0 {
        return 0.0;
    }
    cr_residual_raw(mesh, im, re) / scale
}

/// Dirichlet solve from plus-sheet and minus-sheet boundary values.
type SheetSolve<'a> = dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync + 'a;

fn extend_part(
    mesh: &SurfaceMesh,
    solve: &SheetSolve<'_>,
    plus: &[Complex64],
    minus: &[Complex64],
) -> Result<(Vec<Complex64>, f64)> {
    let (pr, pi) = split_parts(plus);
    let (mr, mi) = split_parts(minus);
    let u = solve(&pr, &mr)?;
    let v = solve(&pi, &mi)?;
    let cr = relative_cr(mesh, &u, &v);
    Ok((u.iter().zip(&v).map(|(a, b)| Complex64::new(*a, *b)).collect(), cr))
}

/// Embeds the doubled surface into `C^k` through the generators' extensions.
pub fn gelfand_embed(doubled: &DoubledSurface, gens: &[TraceAlgebraElement], tol_hermitian: f64) -> Result<CharacterCloud> {
    let mesh = doubled.mesh();
    let n = doubled.gamma0_plus().len();
    if gens.is_empty() {
        return Err(Error::Config("embedding needs at least one generator".into()));
    }
    for g in gens {
        if g.grid().len() != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: g.grid().len(),
            });
        }
    }
    let covers: Vec<(ComplexTrace, ComplexTrace)> = gens.iter().map(boundary_data_on_cover).collect();
    let joint = |pick: fn(&(ComplexTrace, ComplexTrace)) -> &ComplexTrace| -> Vec<Vec<Complex64>> {
        (0..n).map(|i| covers.iter().map(|c| pick(c).values()[i]).collect()).collect()
    };
    check_separation(&joint(|c| &c.0), &joint(|c| &c.1))?;

    let solver = DoubledSolver::new(doubled)?;
    let solve = |p: &[f64], m: &[f64]| solver.solve(p, m);
    let generators = gens
        .par_iter()
        .map(|g| {
            let mut parts = Vec::with_capacity(2);
            let mut cr: f64 = 0.0;
            for part in [g.w1(), g.w2()] {
                let p = part.trace().values();
                let m: Vec<Complex64> = p.iter().map(|z| z.conj()).collect();
                let (w, r) = extend_part(mesh, &solve, p, &m)?;
                parts.push(w);
                cr = cr.max(r);
            }
            let w2 = parts.pop().expect("two parts");
            let w1 = parts.pop().expect("two parts");
            Ok(Extension { w1, w2, cr_residual: cr })
        })
        .collect::<Result<Vec<_>>>()?;

    let nv = mesh.vertex_count();
    let mut boundary = vec![false; nv];
    for &v in doubled.gamma0_plus().iter().chain(solver.minus_nodes()) {
        boundary[v] = true;
    }
    let mut cloud = CharacterCloud {
        generators,
        boundary,
        hermitian: vec![false; nv],
        vertex: Some((0..nv).collect()),
        sheet: None,
        holes: mesh.hole_count().max(1),
    };
    cloud.flag_hermitian(tol_hermitian);
    Ok(cloud)
}

/// Point-evaluation cloud on a single sheet, with data on Γ0 only and natural
/// conditions on any holes. Used for hole-free surfaces and negative checks.
pub fn embed_single_sheet(mesh: &SurfaceMesh, gens: &[TraceAlgebraElement], tol_hermitian: f64) -> Result<CharacterCloud> {
    let gamma0 = mesh.gamma0();
    for g in gens {
        if g.grid().len() != gamma0.len() {
            return Err(Error::GridMismatch {
                expected: gamma0.len(),
                got: g.grid().len(),
            });
        }
    }
    let solver = DirichletSolver::new(Arc::new(assemble_stiffness(mesh)), gamma0)?;
    let solve = |p: &[f64], _: &[f64]| Ok(solver.solve(p));
    let generators = gens
        .par_iter()
        .map(|g| {
            let (w1, c1) = extend_part(mesh, &solve, g.w1().trace().values(), &[])?;
            let (w2, c2) = extend_part(mesh, &solve, g.w2().trace().values(), &[])?;
            Ok(Extension {
                w1,
                w2,
                cr_residual: c1.max(c2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nv = mesh.vertex_count();
    let mut boundary = vec![false; nv];
    for &v in gamma0 {
        boundary[v] = true;
    }
    let mut cloud = CharacterCloud {
        generators,
        boundary,
        hermitian: vec![false; nv],
        vertex: Some((0..nv).collect()),
        sheet: None,
        holes: mesh.hole_count(),
    };
    cloud.flag_hermitian(tol_hermitian);
    Ok(cloud)
}

/// One function whose interior maximum modulus exceeds its boundary maximum.
#[derive(Debug, Clone, Serialize)]
pub struct ShilovViolation {
    /// Generator indices; a single index for a generator, two for a product.
    pub factors: Vec<usize>,
    pub interior_max: f64,
    pub boundary_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShilovReport {
    pub checked: usize,
    /// Smallest `boundary_max / overall_max` over the checked functions.
    pub worst_ratio: f64,
    pub violations: Vec<ShilovViolation>,
}

impl ShilovReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares the maximum modulus over the cloud with the maximum over the
/// boundary-flagged points, for every generator and every pairwise product.
pub fn shilov_check(cloud: &CharacterCloud, slack: f64) -> ShilovReport {
    let k = cloud.generator_count();
    let mut factors: Vec<Vec<usize>> = (0..k).map(|j| vec![j]).collect();
    for a in 0..k {
        for b in a..k {
            factors.push(vec![a, b]);
        }
    }
    let results: Vec<(Vec<usize>, f64, f64)> = factors
        .into_par_iter()
        .map(|f| {
            let mut interior: f64 = 0.0;
            let mut boundary: f64 = 0.0;
            for p in 0..cloud.len() {
                let v: Complex64 = f.iter().map(|&j| cloud.value(p, j)).product();
                if cloud.boundary[p] {
                    boundary = boundary.max(v.norm());
                } else {
                    interior = interior.max(v.norm());
                }
            }
            (f, interior, boundary)
        })
        .collect();
    let mut worst_ratio: f64 = 1.0;
    let mut violations = Vec::new();
    for (f, interior, boundary) in &results {
        let top = interior.max(*boundary);
        if top > 0.0 {
            worst_ratio = worst_ratio.min(boundary / top);
        }
        if *interior > boundary * (1.0 + slack) {
            violations.push(ShilovViolation {
                factors: f.clone(),
                interior_max: *interior,
                boundary_max: *boundary,
            });
        }
    }
    ShilovReport {
        checked: results.len(),
        worst_ratio,
        violations,
    }
}

/// Points whose characters commute with the involution to within `tol`
/// relative to the cloud scale. Empty is an error when holes are present.
pub fn find_seam(cloud: &CharacterCloud, tol: f64) -> Result<Vec<usize>> {
    let limit = tol * cloud.scale();
    let seam: Vec<usize> = (0..cloud.len()).filter(|&p| cloud.hermitian_defect(p) <= limit).collect();
    if seam.is_empty() && cloud.holes > 0 {
        return Err(Error::EmptySeam);
    }
    Ok(seam)
}

/// Recall and precision of `found` against `truth`.
pub fn seam_agreement(found: &[usize], truth: &[usize]) -> (f64, f64) {
    let truth_set: std::collections::HashSet<usize> = truth.iter().copied().collect();
    let hits = found.iter().filter(|p| truth_set.contains(p)).count() as f64;
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    let precision = if found.is_empty() { 1.0 } else { hits / found.len() as f64 };
    (recall, precision)
}

/// Graph used to split the cloud.
#[derive(Debug, Clone, Copy)]
pub enum Connectivity<'a> {
    /// Edges of the mesh the cloud was built on (point `p` is vertex `p`).
    Mesh(&'a SurfaceMesh),
    /// Symmetrized `k`-nearest-neighbour graph in generator space.
    NearestNeighbors(usize),
}

fn adjacency(cloud: &CharacterCloud, graph: Connectivity<'_>) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    let mut adj = vec![Vec::new(); n];
    match graph {
        Connectivity::Mesh(mesh) => {
            if mesh.vertex_count() != n {
                return Err(Error::MeshMismatch);
            }
            for t in mesh.triangles() {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        Connectivity::NearestNeighbors(k) => {
            if k == 0 {
                return Err(Error::Config("neighbour count must be positive".into()));
            }
            let points: Vec<Vec<Complex64>> = (0..n).map(|p| cloud.point(p)).collect();
            let near: Vec<Vec<usize>> = (0..n)
                .into_par_iter()
                .map(|p| {
                    let mut d: Vec<(f64, usize)> = (0..n)
                        .filter(|&q| q != p)
                        .map(|q| (distance(&points[p], &points[q]), q))
                        .collect();
                    let k = k.min(d.len());
                    if k > 0 && k < d.len() {
                        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    }
                    d.truncate(k);
                    d.into_iter().map(|(_, q)| q).collect()
                })
                .collect();
            for (p, qs) in near.into_iter().enumerate() {
                for q in qs {
                    adj[p].push(q);
                    adj[q].push(p);
                }
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    Ok(adj)
}

/// Removes the seam from the connectivity graph and labels the two remaining
/// components `+1` (the one holding the lowest point index) and `-1`.
pub fn split_components(cloud: &CharacterCloud, seam: &[usize], graph: Connectivity<'_>) -> Result<CharacterCloud> {
    let n = cloud.len();
    let adj = adjacency(cloud, graph)?;
    let mut label = vec![0i8; n];
    let mut removed = vec![false; n];
    for &s in seam {
        if s < n {
            removed[s] = true;
        }
    }
    let mut components = 0usize;
    for start in 0..n {
        if removed[start] || label[start] != 0 {
            continue;
        }
        components += 1;
        let tag = if components == 1 { 1 } else { -1 };
        let mut queue = VecDeque::from([start]);
        label[start] = tag;
        while let Some(p) = queue.pop_front() {
            for &q in &adj[p] {
                if !removed[q] && label[q] == 0 {
                    label[q] = tag;
                    queue.push_back(q);
                }
            }
        }
    }
    if components != 2 {
        return Err(Error::Topology(components));
    }
    let mut out = cloud.clone();
    out.sheet = Some(label);
    Ok(out)
}

/// Boundary-flagged point matching each Γ0 sample, by nearest joint value
/// against `data[i] = (η_1(s_i), ..., η_k(s_i))`, with the largest mismatch.
pub fn attach_boundary(cloud: &CharacterCloud, data: &[Vec<Complex64>]) -> (Vec<usize>, f64) {
    let candidates: Vec<usize> = (0..cloud.len()).filter(|&p| cloud.boundary[p]).collect();
    let points: Vec<Vec<Complex64>> = candidates.iter().map(|&p| cloud.point(p)).collect();
    let mut worst: f64 = 0.0;
    let matched = data
        .iter()
        .map(|target| {
            let (d, q) = points
                .iter()
                .enumerate()
                .map(|(i, pt)| (distance(pt, target), i))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap_or((f64::INFINITY, 0));
            worst = worst.max(d);
            candidates.get(q).copied().unwrap_or(usize::MAX)
        })
        .collect();
    (matched, worst)
}

/// Joint boundary samples of the generators on Γ0.
pub fn joint_boundary_values(gens: &[TraceAlgebraElement]) -> Vec<Vec<Complex64>> {
    let values: Vec<ComplexTrace> = gens.iter().map(|g| g.values()).collect();
    let n = values.first().map_or(0, |v| v.values().len());
    (0..n).map(|i| values.iter().map(|v| v.values()[i]).collect()).collect()
}

/// Sheet holding the matched Γ0 points, closed with the seam, as a surface
/// whose metric is read from the cloud: each edge `(a, b)` gets squared length
/// `Σ_j |χ_a(η_j) − χ_b(η_j)|²`. Vertex positions only fix the triangle frames.
#[derive(Debug, Clone)]
pub struct ReconstructedSheet {
    pub mesh: SurfaceMesh,
    /// Sheet vertex of each Γ0 sample of the input grid.
    pub gamma0: Vec<usize>,
}

pub fn reconstruct_sheet(cloud: &CharacterCloud, carrier: &SurfaceMesh, attached: &[usize]) -> Result<ReconstructedSheet> {
    let labels = cloud
        .sheet
        .as_ref()
        .ok_or_else(|| Error::Config("cloud has no sheet labels".into()))?;
    if carrier.vertex_count() != cloud.len() {
        return Err(Error::MeshMismatch);
    }
    let tag = attached
        .iter()
        .filter_map(|&p| labels.get(p).copied())
        .find(|&l| l != 0)
        .ok_or_else(|| Error::Config("boundary samples are not attached to a sheet".into()))?;
    let keep = |v: usize| labels[v] == tag || labels[v] == 0;
    let tris: Vec<[usize; 3]> = carrier
        .triangles()
        .iter()
        .filter(|t| t.iter().all(|&v| keep(v)) && t.iter().any(|&v| labels[v] == tag))
        .copied()
        .collect();
    let mut index = HashMap::new();
    let mut vertices = Vec::new();
    let mut origin = Vec::new();
    for t in &tris {
        for &v in t {
            index.entry(v).or_insert_with(|| {
                vertices.push(carrier.vertices()[v]);
                origin.push(v);
                origin.len() - 1
            });
        }
    }
    let triangles: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|v| index[&v])).collect();
    let edge2 = |a: usize, b: usize| -> f64 {
        (0..cloud.generator_count())
            .map(|j| (cloud.value(origin[a], j) - cloud.value(origin[b], j)).norm_sqr())
            .sum()
    };
    let frames = SurfaceMesh::new(vertices.clone(), triangles.clone(), None, vec![vec![0]], 0, Orientation::Positive)?;
    let metric: Vec<Metric2> = triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let lt = frames.local_triangle(t);
            Metric2::from_edge_lengths(
                lt.edge(0, 1),
                lt.edge(0, 2),
                edge2(tri[0], tri[1]),
                edge2(tri[0], tri[2]),
                edge2(tri[1], tri[2]),
            )
        })
        .collect();
    let loops = extract_boundary_loops(vertices.len(), &triangles)?;
    let gamma0: Vec<usize> = attached
        .iter()
        .map(|p| index.get(p).copied().ok_or_else(|| Error::Config("attached point is off the sheet".into())))
        .collect::<Result<_>>()?;
    let g0 = loops
        .iter()
        .position(|l| l.contains(&gamma0[0]))
        .ok_or_else(|| Error::Config("attached points are not on a boundary loop".into()))?;
    if loops[g0].len() != gamma0.len() {
        return Err(Error::GridMismatch {
            expected: gamma0.len(),
            got: loops[g0].len(),
        });
    }
    let mesh = SurfaceMesh::new(vertices, triangles, Some(metric), loops, g0, Orientation::Positive)?;
    Ok(ReconstructedSheet { mesh, gamma0 })
}

/// DN operator of the reconstructed sheet on the input grid: the energy form of
/// the sheet, reordered to the input samples, divided by the input weights.
pub fn sheet_dn(sheet: &ReconstructedSheet, flavor: Flavor, grid: &Arc<BoundaryGrid>) -> Result<DNOperator> {
    let rec = assemble_dn(&sheet.mesh, flavor)?;
    let order = sheet.mesh.gamma0();
    let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let map: Vec<usize> = sheet.gamma0.iter().map(|v| pos[v]).collect();
    let s = rec.weighted();
    let w = grid.weights();
    let n = map.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| s[(map[i], map[j])] / w[i]);
    DNOperator::from_matrix(flavor, matrix, grid.clone())
}

/// `‖P(Λa − Λb)P‖ / ‖PΛaP‖` on the span of the first `modes` Fourier modes
/// (constant first), in the boundary quadrature.
pub fn dn_discrepancy(a: &DNOperator, b: &DNOperator, modes: usize) -> Result<f64> {
    let grid = a.grid();
    if b.len() != a.len() {
        return Err(Error::GridMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let pairs = modes.div_ceil(2);
    if pairs > grid.max_mode() {
        return Err(Error::UnresolvedModes {
            requested: pairs,
            available: grid.max_mode(),
        });
    }
    let mut basis = vec![vec![1.0; grid.len()]];
    basis.extend(grid.zero_mean_modes(pairs));
    basis.truncate(modes);
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for mut v in basis {
        for q in &ortho {
            let c = grid.inner(&v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let nv = grid.norm(&v);
        ortho.push(v.iter().map(|x| x / nv).collect());
    }
    let compress = |op: &DNOperator| {
        let images: Vec<Vec<f64>> = ortho.iter().map(|v| op.apply(v)).collect();
        DMatrix::from_fn(ortho.len(), ortho.len(), |i, j| grid.inner(&ortho[i], &images[j]))
    };
    let ca = compress(a);
    let cb = compress(b);
    let top = ca.norm().max(ca.clone().svd(false, false).singular_values.max());
    Ok((ca - cb).svd(false, false).singular_values.max() / top.max(f64::MIN_POSITIVE))
}

/// Unit-determinant representative of a conformal class fitted at a point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricFit {
    pub metric: Metric2,
    /// Smallest singular value of the harmonicity system over the largest.
    pub residual: f64,
    pub rank: usize,
}

fn monomials(x: f64, y: f64) -> [f64; 10] {
    [1.0, x, y, x * x, x * y, y * y, x * x * x, x * x * y, x * y * y, y * y * y]
}

/// Fits the conformal class of the metric at `center` from harmonic functions
/// sampled at nearby points with planar coordinates.
///
/// Each function is fitted by a local cubic; its first and second derivatives
/// give one row of `h^{ab} ∂_a∂_b φ + b^a ∂_a φ = 0`, with `h = √g g^{-1}`
/// and the drift `b` unknown. The null vector gives `h`, whose inverse is the
/// unit-determinant metric.
pub fn fit_conformal_metric(coords: &[[f64; 2]], center: [f64; 2], fields: &[Vec<f64>]) -> Result<MetricFit> {
    if coords.len() < 10 {
        return Err(Error::Config(format!("metric patch has {} points, need at least 10", coords.len())));
    }
    for f in fields {
        if f.len() != coords.len() {
            return Err(Error::GridMismatch {
                expected: coords.len(),
                got: f.len(),
            });
        }
    }
    let radius = coords
        .iter()
        .map(|p| (p[0] - center[0]).hypot(p[1] - center[1]))
        .fold(0.0, f64::max);
    if radius == 0.0 {
        return Err(Error::Config("metric patch is degenerate".into()));
    }
    let design = DMatrix::from_fn(coords.len(), 10, |i, j| {
        monomials((coords[i][0] - center[0]) / radius, (coords[i][1] - center[1]) / radius)[j]
    });
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Config("metric patch does not determine a cubic".into()));
    }
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for f in fields {
        let c = svd.solve(&DVector::from_column_slice(f), 1e-12).map_err(|e| Error::Config(e.to_string()))?;
        // derivatives at the center in scaled coordinates
        let row = [2.0 * c[3], 2.0 * c[4], 2.0 * c[5], c[1], c[2]];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if norm > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            rows.push(row.map(|v| v / norm));
        }
    }
    let m = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
    let gram = m.transpose() * &m;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sing: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let rank = sing.iter().filter(|&&s| s > METRIC_RANK_TOL * sing[0]).count();
    if rows.len() < 4 || sing[0] == 0.0 || sing[3] <= METRIC_RANK_TOL * sing[0] {
        return Err(Error::NeedsMoreGenerators { rank: rank.min(rows.len()) });
    }
    let v = eig.eigenvectors.column(order[4]);
    let mut h = Matrix2::new(v[0], v[1], v[1], v[2]);
    if h.trace() < 0.0 {
        h = -h;
    }
    if h.determinant() <= 0.0 {
        return Err(Error::Config("fitted conformal class is not positive definite".into()));
    }
    let g = h.try_inverse().ok_or(Error::NeedsMoreGenerators { rank })?;
    let g = g / g.determinant().sqrt();
    Ok(MetricFit {
        metric: Metric2::from_matrix(&g),
        residual: sing[4] / sing[0],
        rank,
    })
}

/// Planar coordinates, center and sampled fields of a local patch.
pub type Patch = (Vec<[f64; 2]>, [f64; 2], Vec<Vec<f64>>);

/// Patch of cloud points around a vertex, within `radius` in the carrier
/// mesh's planar coordinates, with the real and imaginary parts of every
/// generator as harmonic samples.
pub fn cloud_patch(cloud: &CharacterCloud, carrier: &SurfaceMesh, center: usize, radius: f64) -> Result<Patch> {
    if carrier.vertex_count() != cloud.len() {
        return Err(Error::MeshMismatch);
    }
    let c = carrier.vertices()[center];
    let c = [c[0], c[1]];
    let labels = cloud.sheet.as_deref();
    let members: Vec<usize> = (0..cloud.len())
        .filter(|&p| {
            let v = carrier.vertices()[p];
            let same_sheet = labels.is_none_or(|l| l[p] == l[center] || l[p] == 0);
            same_sheet && (v[0] - c[0]).hypot(v[1] - c[1]) <= radius
        })
        .collect();
    let coords = members
        .iter()
        .map(|&p| {
            let v = carrier.vertices()[p];
            [v[0], v[1]]
        })
        .collect();
    let mut fields = Vec::new();
    for j in 0..cloud.generator_count() {
        fields.push(members.iter().map(|&p| cloud.value(p, j).re).collect());
        fields.push(members.iter().map(|&p| cloud.value(p, j).im).collect());
    }
    Ok((coords, c, fields))
}

/// Modulus `L = ln(1/r)` of an annulus with unit outer radius, fitted to its DN spectrum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulusFit {
    pub modulus: f64,
    /// Relative RMS misfit of the model eigenvalues.
    pub residual: f64,
}

fn annulus_eigenvalue(i: usize, l: f64, flavor: Flavor) -> (f64, f64) {
    let n = i.div_ceil(2) as f64;
    match (flavor, i) {
        (Flavor::Grounded, 0) => (1.0 / l, -1.0 / (l * l)),
        (Flavor::Isolated, 0) => (0.0, 0.0),
        (Flavor::Grounded, _) => {
            let s = (n * l).sinh();
            (n / (n * l).tanh(), -n * n / (s * s))
        }
        (Flavor::Isolated, _) => {
            let c = (n * l).cosh();
            (n * (n * l).tanh(), n * n / (c * c))
        }
    }
}

fn modulus_cost(eigs: &[f64], l: f64, flavor: Flavor) -> f64 {
    eigs.iter()
        .enumerate()
        .map(|(i, &e)| (e - annulus_eigenvalue(i, l, flavor).0).powi(2))
        .sum()
}

/// Fits `λ_0 = 1/L` (grounded) or `0` (isolated) and `λ_{2n-1} = λ_{2n} =
/// n·coth(nL)` or `n·tanh(nL)` to ascending eigenvalues of an annulus whose
/// outer circle has length `2π`.
pub fn recover_annulus_modulus(eigs: &[f64], flavor: Flavor) -> Result<ModulusFit> {
    if eigs.len() < 9 {
        return Err(Error::Config(format!(
            "modulus fit needs at least 9 eigenvalues (4 pairs), got {}",
            eigs.len()
        )));
    }
    let (lo, hi) = MODULUS_RANGE;
    let steps = 400;
    let mut l = (0..=steps)
        .map(|s| lo * (hi / lo).powf(s as f64 / steps as f64))
        .min_by(|a, b| modulus_cost(eigs, *a, flavor).total_cmp(&modulus_cost(eigs, *b, flavor)))
        .expect("non-empty scan");
    for _ in 0..100 {
        let (mut jr, mut jj) = (0.0, 0.0);
        for (i, &e) in eigs.iter().enumerate() {
            let (m, d) = annulus_eigenvalue(i, l, flavor);
            jr += d * (e - m);
            jj += d * d;
        }
        if jj == 0.0 {
            break;
        }
        let cost = modulus_cost(eigs, l, flavor);
        let mut step = jr / jj;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = l + step;
            if trial > 0.0 && modulus_cost(eigs, trial, flavor) <= cost {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        l += step;
        if step.abs() <= 1e-15 * l {
            break;
        }
    }
    let norm = eigs.iter().map(|e| e * e).sum::<f64>().sqrt();
    let residual = modulus_cost(eigs, l, flavor).sqrt() / norm.max(f64::MIN_POSITIVE);
    if !(residual <= MODULUS_FIT_LIMIT) || l >= 0.99 * hi {
        return Err(Error::NotAnnulus { residual });
    }
    Ok(ModulusFit { modulus: l, residual })
}
