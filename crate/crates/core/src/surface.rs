//! Triangulated surfaces with a per-triangle metric and labeled boundary loops.
//!
//! Each triangle carries its own orthonormal frame `(e1, e2)` in the plane of
//! its embedding: `e1` is the projection of the first usable coordinate axis,
//! `e2 = n × e1` with `n` the normal induced by the vertex order. The metric is
//! a constant SPD tensor expressed in that frame. For planar triangles listed
//! counter-clockwise the frame is the global `(x, y)` frame.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default spectral bound for metric tensors, eigenvalues must lie in `[eps, 1/eps]`.
pub const DEFAULT_METRIC_BOUND: f64 = 1e-6;

/// Symmetric 2x2 tensor `[[g11, g12], [g12, g22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric2 {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
}

impl Metric2 {
    pub const IDENTITY: Metric2 = Metric2 {
        g11: 1.0,
        g12: 0.0,
        g22: 1.0,
    };

    pub fn new(g11: f64, g12: f64, g22: f64) -> Self {
        Self { g11, g12, g22 }
    }

    pub fn det(&self) -> f64 {
        self.g11 * self.g22 - self.g12 * self.g12
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.g11, self.g12, self.g12, self.g22)
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self {
            g11: m[(0, 0)],
            g12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            g22: m[(1, 1)],
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.g11 + self.g22);
        let half = 0.5 * (self.g11 - self.g22);
        let r = (half * half + self.g12 * self.g12).sqrt();
        (mean - r, mean + r)
    }

    pub fn is_spd(&self) -> bool {
        self.g11 > 0.0 && self.det() > 0.0
    }

    /// Inverse tensor.
    pub fn inverse(&self) -> Metric2 {
        let d = self.det();
        Metric2::new(self.g22 / d, -self.g12 / d, self.g11 / d)
    }

    /// Squared length of a frame vector.
    pub fn norm2(&self, v: [f64; 2]) -> f64 {
        self.g11 * v[0] * v[0] + 2.0 * self.g12 * v[0] * v[1] + self.g22 * v[1] * v[1]
    }

    /// Same tensor seen in the frame `(e1, -e2)`.
    pub fn mirrored(&self) -> Metric2 {
        Metric2::new(self.g11, -self.g12, self.g22)
    }

    /// Tensor with prescribed squared edge lengths on a triangle whose frame
    /// edge vectors are `e01 = p1 - p0` and `e02 = p2 - p0`.
    pub fn from_edge_lengths(e01: [f64; 2], e02: [f64; 2], l01: f64, l02: f64, l12: f64) -> Self {
        // quadratic form values on e01, e02 and e01 - e02 give the Gram matrix Q in edge coordinates
        let q11 = l01;
        let q22 = l02;
        let q12 = 0.5 * (l01 + l02 - l12);
        let e = Matrix2::new(e01[0], e02[0], e01[1], e02[1]);
        let einv = e.try_inverse().unwrap_or_else(Matrix2::identity);
        let q = Matrix2::new(q11, q12, q12, q22);
        Metric2::from_matrix(&(einv.transpose() * q * einv))
    }
}

/// Sign fixing the rotation field relative to the triangle orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }
}

/// Vertex coordinates of a triangle in its own frame, first vertex at the origin.
#[derive(Debug, Clone, Copy)]
pub struct LocalTriangle {
    pub p: [[f64; 2]; 3],
    /// Euclidean frame area (positive for non-degenerate triangles).
    pub area: f64,
}

impl LocalTriangle {
    /// Gradients of the barycentric coordinates in frame components.
    pub fn grad_barycentric(&self) -> [[f64; 2]; 3] {
        let p = &self.p;
        let inv = 1.0 / (2.0 * self.area);
        let mut g = [[0.0; 2]; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            *gi = [(p[j][1] - p[k][1]) * inv, (p[k][0] - p[j][0]) * inv];
        }
        g
    }

    pub fn edge(&self, a: usize, b: usize) -> [f64; 2] {
        [self.p[b][0] - self.p[a][0], self.p[b][1] - self.p[a][1]]
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot3(a, a).sqrt();
    (n > 0.0).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Frame coordinates of a triangle given its three embedded vertices.
pub fn local_triangle(x: [[f64; 3]; 3]) -> LocalTriangle {
    let d1 = sub3(x[1], x[0]);
    let d2 = sub3(x[2], x[0]);
    let Some(n) = normalize3(cross3(d1, d2)) else {
        return LocalTriangle {
            p: [[0.0; 2]; 3],
            area: 0.0,
        };
    };
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut e1 = [1.0, 0.0, 0.0];
    for axis in axes {
        let d = dot3(axis, n);
        let proj = [axis[0] - d * n[0], axis[1] - d * n[1], axis[2] - d * n[2]];
        if dot3(proj, proj) > 1e-4 {
            e1 = normalize3(proj).unwrap();
            break;
        }
    }
    let e2 = cross3(n, e1);
    let p1 = [dot3(d1, e1), dot3(d1, e2)];
    let p2 = [dot3(d2, e1), dot3(d2, e2)];
    let area = 0.5 * (p1[0] * p2[1] - p1[1] * p2[0]);
    LocalTriangle {
        p: [[0.0, 0.0], p1, p2],
        area,
    }
}

/// Triangulated surface with boundary.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    metric: Vec<Metric2>,
    boundary_loops: Vec<Vec<usize>>,
    gamma0_index: usize,
    orientation: Orientation,
    fingerprint: [u8; 32],
}

impl SurfaceMesh {
    /// Builds a mesh without checking invariants; use [`validate_mesh`] to inspect it.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        metric: Option<Vec<Metric2>>,
        boundary_loops: Vec<Vec<usize>>,
        gamma0_index: usize,
        orientation: Orientation,
    ) -> Result<Self> {
        let metric = metric.unwrap_or_else(|| vec![Metric2::IDENTITY; triangles.len()]);
        if metric.len() != triangles.len() {
            return Err(Error::InvalidMesh(vec![format!(
                "{} metric tensors for {} triangles",
                metric.len(),
                triangles.len()
            )]));
        }
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidMesh(vec![format!(
                "triangle {t:?} references a missing vertex"
            )]));
        }
        if let Some(l) = boundary_loops.iter().find(|l| l.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidMesh(vec![format!(
                "boundary loop starting at {:?} references a missing vertex",
                l.first()
            )]));
        }
        if gamma0_index >= boundary_loops.len() {
            return Err(Error::InvalidMesh(vec![format!(
                "gamma0 index {gamma0_index} out of range for {} loops",
                boundary_loops.len()
            )]));
        }
        let mut mesh = Self {
            vertices,
            triangles,
            metric,
            boundary_loops,
            gamma0_index,
            orientation,
            fingerprint: [0; 32],
        };
        mesh.fingerprint = mesh.compute_fingerprint();
        Ok(mesh)
    }

    fn compute_fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.vertices {
            for c in v {
                h.update(c.to_le_bytes());
            }
        }
        for t in &self.triangles {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        for m in &self.metric {
            for c in [m.g11, m.g12, m.g22] {
                h.update(c.to_le_bytes());
            }
        }
        for l in &self.boundary_loops {
            h.update((l.len() as u64).to_le_bytes());
            for &i in l {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.update((self.gamma0_index as u64).to_le_bytes());
        h.update([matches!(self.orientation, Orientation::Positive) as u8]);
        h.finalize().into()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn metric(&self) -> &[Metric2] {
        &self.metric
    }

    pub fn boundary_loops(&self) -> &[Vec<usize>] {
        &self.boundary_loops
    }

    pub fn gamma0_index(&self) -> usize {
        self.gamma0_index
    }

    pub fn gamma0(&self) -> &[usize] {
        &self.boundary_loops[self.gamma0_index]
    }

    /// Inner loops, in stored order with Γ0 skipped.
    pub fn hole_loops(&self) -> impl Iterator<Item = &[usize]> {
        self.boundary_loops
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.gamma0_index)
            .map(|(_, l)| l.as_slice())
    }

    pub fn hole_count(&self) -> usize {
        self.boundary_loops.len() - 1
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn local_triangle(&self, t: usize) -> LocalTriangle {
        let [a, b, c] = self.triangles[t];
        local_triangle([self.vertices[a], self.vertices[b], self.vertices[c]])
    }

    /// Metric area of triangle `t`.
    pub fn metric_area(&self, t: usize) -> f64 {
        self.local_triangle(t).area * self.metric[t].det().sqrt()
    }

    /// Rotation field on triangle `t` as a matrix acting on frame components.
    pub fn rotation(&self, t: usize) -> Matrix2<f64> {
        let g = &self.metric[t];
        let ginv = g.inverse().matrix();
        let e = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        ginv * e * (self.orientation.sign() * g.det().sqrt())
    }

    /// Undirected edges with their incident triangle count.
    pub fn edges(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn euler_characteristic(&self) -> i64 {
        let used = {
            let mut u = vec![false; self.vertices.len()];
            for t in &self.triangles {
                for &i in t {
                    u[i] = true;
                }
            }
            u.iter().filter(|&&x| x).count()
        };
        used as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Metric length of the edge `a -> b`, measured in triangle `t` containing it.
    pub fn edge_length_in(&self, t: usize, a: usize, b: usize) -> f64 {
        let tri = self.triangles[t];
        let ia = tri
            .iter()
            .position(|&v| v == a)
            .expect("vertex not in triangle");
        let ib = tri
            .iter()
            .position(|&v| v == b)
            .expect("vertex not in triangle");
        let lt = self.local_triangle(t);
        self.metric[t].norm2(lt.edge(ia, ib)).sqrt()
    }

    /// Map from directed boundary edge `(a, b)` to the triangle containing it.
    pub fn directed_edge_owner(&self) -> HashMap<(usize, usize), usize> {
        let mut owner = HashMap::with_capacity(3 * self.triangles.len());
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                owner.insert((t[k], t[(k + 1) % 3]), ti);
            }
        }
        owner
    }

    /// Metric lengths of the edges `(l[i], l[i+1])` of a boundary loop.
    pub fn loop_edge_lengths(&self, loop_index: usize) -> Result<Vec<f64>> {
        let owner = self.directed_edge_owner();
        let l = &self.boundary_loops[loop_index];
        let n = l.len();
        (0..n)
            .map(|i| {
                let (a, b) = (l[i], l[(i + 1) % n]);
                let t = owner
                    .get(&(a, b))
                    .or_else(|| owner.get(&(b, a)))
                    .ok_or_else(|| {
                        Error::InvalidMesh(vec![format!("loop edge ({a}, {b}) has no triangle")])
                    })?;
                Ok(self.edge_length_in(*t, a, b))
            })
            .collect()
    }

    /// Copy with a new metric field, given as a tensor in the global `(x, y)`
    /// frame evaluated at triangle centroids. Valid for planar meshes only.
    pub fn with_planar_metric<F>(&self, field: F) -> Result<SurfaceMesh>
    where
        F: Fn([f64; 2]) -> Metric2,
    {
        let metric = self
            .triangles
            .iter()
            .map(|t| {
                let c = centroid(&self.vertices, t);
                let g = field([c[0], c[1]]);
                let lt = local_triangle([
                    self.vertices[t[0]],
                    self.vertices[t[1]],
                    self.vertices[t[2]],
                ]);
                // express the tensor in the triangle frame via its edges
                let e01 = lt.edge(0, 1);
                let e02 = lt.edge(0, 2);
                let d01 = sub3(self.vertices[t[1]], self.vertices[t[0]]);
                let d02 = sub3(self.vertices[t[2]], self.vertices[t[0]]);
                let d12 = sub3(self.vertices[t[2]], self.vertices[t[1]]);
                let l = |d: [f64; 3]| g.norm2([d[0], d[1]]);
                Metric2::from_edge_lengths(e01, e02, l(d01), l(d02), l(d12))
            })
            .collect();
        SurfaceMesh::new(
            self.vertices.clone(),
            self.triangles.clone(),
            Some(metric),
            self.boundary_loops.clone(),
            self.gamma0_index,
            self.orientation,
        )
    }

    /// Copy with the metric tensors replaced outright.
    pub fn with_metric(&self, metric: Vec<Metric2>) -> Result<SurfaceMesh> {
        SurfaceMesh::new(
            self.vertices.clone(),
            self.triangles.clone(),
            Some(metric),
            self.boundary_loops.clone(),
            self.gamma0_index,
            self.orientation,
        )
    }

    /// Copy with one triangle's vertex order reversed (used to inject defects in tests).
    pub fn with_flipped_triangle(&self, t: usize) -> Result<SurfaceMesh> {
        let mut tris = self.triangles.clone();
        tris[t].swap(1, 2);
        SurfaceMesh::new(
            self.vertices.clone(),
            tris,
            Some(self.metric.clone()),
            self.boundary_loops.clone(),
            self.gamma0_index,
            self.orientation,
        )
    }
}

pub(crate) fn centroid(v: &[[f64; 3]], t: &[usize; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for &i in t {
        for k in 0..3 {
            c[k] += v[i][k] / 3.0;
        }
    }
    c
}

/// Outcome of [`validate_mesh`].
#[derive(Debug, Clone, Serialize)]
pub struct MeshReport {
    pub loop_count: usize,
    pub orientation_consistent: bool,
    pub metric_eigen_min: f64,
    pub metric_eigen_max: f64,
    pub min_quality: f64,
    pub euler_characteristic: i64,
    pub violations: Vec<String>,
}

impl MeshReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<MeshReport> {
        if self.violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidMesh(self.violations))
        }
    }
}

/// Checks the mesh invariants and reports every violation found.
pub fn validate_mesh(mesh: &SurfaceMesh) -> MeshReport {
    validate_mesh_with_bound(mesh, DEFAULT_METRIC_BOUND)
}

pub fn validate_mesh_with_bound(mesh: &SurfaceMesh, metric_bound: f64) -> MeshReport {
    let mut violations = Vec::new();

    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for t in mesh.triangles() {
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            violations.push(format!("triangle {t:?} repeats a vertex"));
        }
        for k in 0..3 {
            *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut orientation_consistent = true;
    let mut boundary_edges: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut nonmanifold = 0usize;
    for (&(a, b), &count) in &directed {
        let back = directed.get(&(b, a)).copied().unwrap_or(0);
        if count > 1 {
            orientation_consistent = false;
        }
        if count + back > 2 {
            nonmanifold += 1;
        }
        if back == 0 && count == 1 {
            boundary_edges.entry(a).or_default().push(b);
        }
    }
    if !orientation_consistent {
        violations.push("triangle orientations are inconsistent".to_string());
    }
    if nonmanifold > 0 {
        violations.push(format!(
            "{nonmanifold} edges are shared by more than two triangles"
        ));
    }

    // loops must be simple, disjoint, and cover exactly the boundary edges in triangle order
    let mut seen = vec![false; mesh.vertex_count()];
    let mut loop_edges = 0usize;
    for (li, l) in mesh.boundary_loops().iter().enumerate() {
        if l.len() < 3 {
            violations.push(format!("loop {li} has fewer than 3 vertices"));
            continue;
        }
        for (i, &v) in l.iter().enumerate() {
            if seen[v] {
                violations.push(format!("vertex {v} appears twice among boundary loops"));
            }
            seen[v] = true;
            let w = l[(i + 1) % l.len()];
            let ok = boundary_edges.get(&v).is_some_and(|succ| succ.contains(&w));
            if !ok {
                violations.push(format!(
                    "loop {li} edge ({v}, {w}) is not a boundary edge in triangle order"
                ));
            }
            loop_edges += 1;
        }
    }
    let total_boundary: usize = boundary_edges.values().map(Vec::len).sum();
    if loop_edges != total_boundary {
        violations.push(format!(
            "loops cover {loop_edges} edges but the mesh has {total_boundary} boundary edges"
        ));
    }

    let mut eig_min = f64::INFINITY;
    let mut eig_max = 0.0f64;
    let mut min_quality = f64::INFINITY;
    let mut bad_metric = Vec::new();
    for ti in 0..mesh.triangle_count() {
        let g = mesh.metric()[ti];
        let (lo, hi) = g.eigenvalues();
        eig_min = eig_min.min(lo);
        eig_max = eig_max.max(hi);
        if !(g.is_spd() && lo >= metric_bound && hi <= 1.0 / metric_bound) {
            bad_metric.push(ti);
        }
        let lt = mesh.local_triangle(ti);
        if lt.area <= 0.0 {
            violations.push(format!("triangle {ti} is degenerate"));
            continue;
        }
        // 4√3·area / Σ l², equal to 1 for equilateral triangles in the metric
        let area = lt.area * g.det().max(0.0).sqrt();
        let l2: f64 = [(0, 1), (1, 2), (2, 0)]
            .iter()
            .map(|&(a, b)| g.norm2(lt.edge(a, b)))
            .sum();
        min_quality = min_quality.min(4.0 * 3f64.sqrt() * area / l2);
    }
    if !bad_metric.is_empty() {
        violations.push(format!(
            "{} metric tensors are not SPD within [{metric_bound:e}, {:e}] (first: triangle {})",
            bad_metric.len(),
            1.0 / metric_bound,
            bad_metric[0]
        ));
    }

    MeshReport {
        loop_count: mesh.boundary_loops().len(),
        orientation_consistent,
        metric_eigen_min: eig_min,
        metric_eigen_max: eig_max,
        min_quality,
        euler_characteristic: mesh.euler_characteristic(),
        violations,
    }
}

/// Extracts boundary cycles from the directed edges without a twin.
pub fn extract_boundary_loops(nv: usize, triangles: &[[usize; 3]]) -> Result<Vec<Vec<usize>>> {
    let mut directed = std::collections::HashSet::new();
    for t in triangles {
        for k in 0..3 {
            directed.insert((t[k], t[(k + 1) % 3]));
        }
    }
    let mut next = vec![usize::MAX; nv];
    let mut starts = Vec::new();
    for &(a, b) in &directed {
        if !directed.contains(&(b, a)) {
            if next[a] != usize::MAX {
                return Err(Error::InvalidMesh(vec![format!(
                    "vertex {a} is pinched on the boundary"
                )]));
            }
            next[a] = b;
            starts.push(a);
        }
    }
    starts.sort_unstable();
    let mut used = vec![false; nv];
    let mut loops = Vec::new();
    for s in starts {
        if used[s] {
            continue;
        }
        let mut l = Vec::new();
        let mut v = s;
        while !used[v] {
            used[v] = true;
            l.push(v);
            v = next[v];
            if v == usize::MAX {
                return Err(Error::InvalidMesh(vec!["open boundary chain".into()]));
            }
        }
        if v != s {
            return Err(Error::InvalidMesh(vec![
                "boundary chain does not close".into()
            ]));
        }
        loops.push(l);
    }
    Ok(loops)
}

/// Writes the SURF2 text format.
pub fn write_surf2(mesh: &SurfaceMesh) -> Result<String> {
    if mesh.orientation() == Orientation::Negative {
        return Err(Error::Config(
            "SURF2 has no orientation record; only positive orientation can be written".into(),
        ));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "SURF2 {} {} {}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        mesh.boundary_loops().len()
    );
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:e} {:e} {:e}", v[0], v[1], v[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
    }
    for (i, m) in mesh.metric().iter().enumerate() {
        if *m != Metric2::IDENTITY {
            let _ = writeln!(s, "m {i} {:e} {:e} {:e}", m.g11, m.g12, m.g22);
        }
    }
    for (i, l) in mesh.boundary_loops().iter().enumerate() {
        let _ = write!(s, "loop {i}");
        for v in l {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "gamma0 {}", mesh.gamma0_index());
    Ok(s)
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?
    .parse()
    .map_err(|_| Error::Parse {
        line,
        message: format!("malformed {what}"),
    })
}

/// Reads the SURF2 text format; unknown records are rejected.
pub fn read_surf2<R: BufRead>(reader: R) -> Result<SurfaceMesh> {
    let mut lines = reader.lines().enumerate();
    let (nv, nt, nl) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing SURF2 header".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("SURF2") {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected SURF2 header".into(),
            });
        }
        let nv: usize = parse_field(tok.next(), i + 1, "vertex count")?;
        let nt: usize = parse_field(tok.next(), i + 1, "triangle count")?;
        let nl: usize = parse_field(tok.next(), i + 1, "loop count")?;
        break (nv, nt, nl);
    };

    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    let mut metric = vec![Metric2::IDENTITY; nt];
    let mut loops: Vec<Option<Vec<usize>>> = vec![None; nl];
    let mut gamma0 = None;
    let mut last_line = 1;
    for (i, line) in lines {
        let ln = i + 1;
        last_line = ln;
        let line = line?;
        let mut tok = line.split_whitespace();
        let Some(kind) = tok.next() else { continue };
        match kind {
            "v" => {
                let x = parse_field(tok.next(), ln, "x")?;
                let y = parse_field(tok.next(), ln, "y")?;
                let z = parse_field(tok.next(), ln, "z")?;
                vertices.push([x, y, z]);
            }
            "t" => {
                let a = parse_field(tok.next(), ln, "vertex index")?;
                let b = parse_field(tok.next(), ln, "vertex index")?;
                let c = parse_field(tok.next(), ln, "vertex index")?;
                triangles.push([a, b, c]);
            }
            "m" => {
                let t: usize = parse_field(tok.next(), ln, "triangle index")?;
                let g11 = parse_field(tok.next(), ln, "g11")?;
                let g12 = parse_field(tok.next(), ln, "g12")?;
                let g22 = parse_field(tok.next(), ln, "g22")?;
                *metric.get_mut(t).ok_or_else(|| Error::Parse {
                    line: ln,
                    message: format!("metric for missing triangle {t}"),
                })? = Metric2::new(g11, g12, g22);
            }
            "loop" => {
                let id: usize = parse_field(tok.next(), ln, "loop id")?;
                let verts = tok
                    .map(|t| {
                        t.parse().map_err(|_| Error::Parse {
                            line: ln,
                            message: "malformed loop vertex".into(),
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?;
                *loops.get_mut(id).ok_or_else(|| Error::Parse {
                    line: ln,
                    message: format!("loop id {id} out of range"),
                })? = Some(verts);
            }
            "gamma0" => gamma0 = Some(parse_field::<usize>(tok.next(), ln, "gamma0 id")?),
            other => {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("unknown record '{other}'"),
                })
            }
        }
    }
    let truncated = |message: String| Error::Parse {
        line: last_line,
        message,
    };
    if vertices.len() != nv {
        return Err(truncated(format!(
            "expected {nv} vertices, found {}",
            vertices.len()
        )));
    }
    if triangles.len() != nt {
        return Err(truncated(format!(
            "expected {nt} triangles, found {}",
            triangles.len()
        )));
    }
    let loops = loops
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| truncated(format!("loop {i} missing"))))
        .collect::<Result<Vec<_>>>()?;
    let gamma0 = gamma0.ok_or_else(|| truncated("gamma0 record missing".into()))?;
    SurfaceMesh::new(
        vertices,
        triangles,
        Some(metric),
        loops,
        gamma0,
        Orientation::Positive,
    )
}

/// Rotates a planar frame vector by the rotation field of a metric.
pub fn rotate(g: &Metric2, orientation: Orientation, v: Vector2<f64>) -> Vector2<f64> {
    let e = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    g.inverse().matrix() * e * v * (orientation.sign() * g.det().sqrt())
}
