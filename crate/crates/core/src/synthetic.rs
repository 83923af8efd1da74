//! Planar test domains: the unit disk, annuli, and disks with circular holes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::{centroid, extract_boundary_loops, Metric2, Orientation, SurfaceMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Disk,
    Annulus { inner_radius: f64 },
    Holes { holes: Vec<Hole> },
}

/// Optional metric replacing the Euclidean one, given in global `(x, y)` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricField {
    #[default]
    Euclidean,
    Constant {
        g11: f64,
        g12: f64,
        g22: f64,
    },
    /// `(1 + amplitude·exp(-|x - center|² / width²))·δ`.
    GaussianConformal {
        amplitude: f64,
        center: [f64; 2],
        width: f64,
    },
}

impl MetricField {
    pub fn at(&self, p: [f64; 2]) -> Metric2 {
        match *self {
            MetricField::Euclidean => Metric2::IDENTITY,
            MetricField::Constant { g11, g12, g22 } => Metric2::new(g11, g12, g22),
            MetricField::GaussianConformal {
                amplitude,
                center,
                width,
            } => {
                let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                let rho = 1.0 + amplitude * (-d2 / (width * width)).exp();
                Metric2::new(rho, 0.0, rho)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    #[serde(flatten)]
    pub kind: DomainKind,
    /// Target edge length.
    pub h: f64,
    #[serde(default)]
    pub metric: MetricField,
}

impl DomainDescriptor {
    pub fn disk(h: f64) -> Self {
        Self {
            kind: DomainKind::Disk,
            h,
            metric: MetricField::Euclidean,
        }
    }

    pub fn annulus(inner_radius: f64, h: f64) -> Self {
        Self {
            kind: DomainKind::Annulus { inner_radius },
            h,
            metric: MetricField::Euclidean,
        }
    }

    pub fn holes(holes: Vec<Hole>, h: f64) -> Self {
        Self {
            kind: DomainKind::Holes { holes },
            h,
            metric: MetricField::Euclidean,
        }
    }

    pub fn with_metric(mut self, metric: MetricField) -> Self {
        self.metric = metric;
        self
    }

    /// Holes as circles (an annulus is a single centered hole).
    pub fn hole_list(&self) -> Vec<Hole> {
        match &self.kind {
            DomainKind::Disk => Vec::new(),
            DomainKind::Annulus { inner_radius } => vec![Hole {
                center: [0.0, 0.0],
                radius: *inner_radius,
            }],
            DomainKind::Holes { holes } => holes.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Descriptor(m));
        if !(self.h.is_finite() && self.h > 0.0 && self.h <= 0.5) {
            return bad(format!("target edge length {} outside (0, 0.5]", self.h));
        }
        let holes = self.hole_list();
        for (i, hole) in holes.iter().enumerate() {
            if !(hole.radius > 0.0) {
                return bad(format!("hole {i} has non-positive radius {}", hole.radius));
            }
            let c = hole.center[0].hypot(hole.center[1]);
            if c + hole.radius >= 1.0 {
                return bad(format!("hole {i} is not interior to the unit disk"));
            }
            if c + hole.radius > 1.0 - 1.5 * self.h {
                return bad(format!(
                    "hole {i} is closer than 1.5 h to the outer boundary"
                ));
            }
            for (j, other) in holes.iter().enumerate().skip(i + 1) {
                let d = (hole.center[0] - other.center[0]).hypot(hole.center[1] - other.center[1]);
                if d <= hole.radius + other.radius {
                    return bad(format!("holes {i} and {j} overlap"));
                }
                if d < hole.radius + other.radius + 1.5 * self.h {
                    return bad(format!("holes {i} and {j} are closer than 1.5 h"));
                }
            }
        }
        Ok(())
    }
}

fn ring(center: [f64; 2], radius: f64, n: usize, phase: f64, out: &mut Vec<[f64; 2]>) {
    for k in 0..n {
        let t = 2.0 * PI * (k as f64 + phase) / n as f64;
        out.push([center[0] + radius * t.cos(), center[1] + radius * t.sin()]);
    }
}

fn ring_count(radius: f64, h: f64) -> usize {
    ((2.0 * PI * radius / h).round() as usize).max(8)
}

/// Concentric rings between `r0` and `r1` (both included unless `r0 == 0`).
fn radial_rings(r0: f64, r1: f64, h: f64, out: &mut Vec<[f64; 2]>) {
    let layers = (((r1 - r0) / (h * 3f64.sqrt() / 2.0)).round() as usize).max(1);
    if r0 == 0.0 {
        out.push([0.0, 0.0]);
    }
    for k in 0..=layers {
        let r = r0 + (r1 - r0) * k as f64 / layers as f64;
        if r == 0.0 {
            continue;
        }
        let on_boundary = k == 0 || k == layers;
        let phase = if on_boundary {
            0.0
        } else {
            0.5 * ((layers - k) % 2) as f64
        };
        ring([0.0, 0.0], r, ring_count(r, h), phase, out);
    }
}

/// Rings of boundary-fitted points kept around every circle before the lattice starts.
const BOUNDARY_LAYERS: usize = 3;

/// Signed distance from `p` to circle `i` (0 is the outer boundary) into the domain.
fn boundary_distance(p: [f64; 2], i: usize, holes: &[Hole]) -> f64 {
    if i == 0 {
        1.0 - p[0].hypot(p[1])
    } else {
        let c = &holes[i - 1];
        (p[0] - c.center[0]).hypot(p[1] - c.center[1]) - c.radius
    }
}

/// Boundary circles with a few conforming rings each, and a hexagonal lattice
/// in the remaining interior.
fn holes_cloud(holes: &[Hole], h: f64, pts: &mut Vec<[f64; 2]>) {
    let dy = h * 3f64.sqrt() / 2.0;
    let circles: Vec<([f64; 2], f64, f64)> = std::iter::once(([0.0, 0.0], 1.0, -1.0))
        .chain(holes.iter().map(|c| (c.center, c.radius, 1.0)))
        .collect();
    let nearest_other = |p: [f64; 2], own: usize| {
        (0..circles.len())
            .filter(|&j| j != own)
            .map(|j| boundary_distance(p, j, holes))
            .fold(f64::INFINITY, f64::min)
    };
    for (i, &(center, radius, dir)) in circles.iter().enumerate() {
        ring(center, radius, ring_count(radius, h), 0.0, pts);
        for k in 1..=BOUNDARY_LAYERS {
            let r = radius + dir * k as f64 * dy;
            if r <= 0.0 {
                break;
            }
            let mut layer = Vec::new();
            ring(center, r, ring_count(r, h), 0.5 * (k % 2) as f64, &mut layer);
            let offset = k as f64 * dy;
            pts.extend(layer.into_iter().filter(|&p| offset + 0.5 * dy <= nearest_other(p, i)));
        }
    }
    let clearance = BOUNDARY_LAYERS as f64 * dy + 0.6 * h;
    let rows = (1.0 / dy).ceil() as i64;
    let cols = (1.0 / h).ceil() as i64 + 1;
    for j in -rows..=rows {
        let y = j as f64 * dy;
        let shift = if j.rem_euclid(2) == 1 { 0.5 * h } else { 0.0 };
        for i in -cols..=cols {
            let p = [i as f64 * h + shift, y];
            if (0..circles.len()).all(|c| boundary_distance(p, c, holes) >= clearance) {
                pts.push(p);
            }
        }
    }
}

fn point_cloud(desc: &DomainDescriptor) -> Vec<[f64; 2]> {
    let h = desc.h;
    let mut pts = Vec::new();
    match &desc.kind {
        DomainKind::Disk => radial_rings(0.0, 1.0, h, &mut pts),
        DomainKind::Annulus { inner_radius } => radial_rings(*inner_radius, 1.0, h, &mut pts),
        DomainKind::Holes { holes } => holes_cloud(holes, h, &mut pts),
    }
    pts
}

/// Generates a planar mesh of the described domain.
///
/// Γ0 is the outer unit circle, stored counter-clockwise from the point `(1, 0)`;
/// holes follow in descriptor order, clockwise, each starting at its
/// rightmost point.
pub fn build_synthetic(desc: &DomainDescriptor) -> Result<SurfaceMesh> {
    desc.check()?;
    let holes = desc.hole_list();
    let pts = point_cloud(desc);
    let dpts: Vec<delaunator::Point> = pts
        .iter()
        .map(|p| delaunator::Point { x: p[0], y: p[1] })
        .collect();
    let tri = delaunator::triangulate(&dpts);
    if tri.triangles.is_empty() {
        return Err(Error::Descriptor("triangulation failed".into()));
    }

    let verts3: Vec<[f64; 3]> = pts.iter().map(|p| [p[0], p[1], 0.0]).collect();
    let tol = 1e-9;
    let mut triangles = Vec::new();
    for t in tri.triangles.chunks(3) {
        let mut t = [t[0], t[1], t[2]];
        let c = centroid(&verts3, &t);
        if c[0].hypot(c[1]) > 1.0 {
            continue;
        }
        if holes
            .iter()
            .any(|hole| (c[0] - hole.center[0]).hypot(c[1] - hole.center[1]) < hole.radius)
        {
            continue;
        }
        let (a, b, cc) = (pts[t[0]], pts[t[1]], pts[t[2]]);
        let area2 = (b[0] - a[0]) * (cc[1] - a[1]) - (b[1] - a[1]) * (cc[0] - a[0]);
        if area2.abs() < tol * desc.h * desc.h {
            continue;
        }
        if area2 < 0.0 {
            t.swap(1, 2);
        }
        triangles.push(t);
    }

    // drop unreferenced points and reindex
    let mut map = vec![usize::MAX; pts.len()];
    let mut vertices = Vec::new();
    for t in &mut triangles {
        for i in t.iter_mut() {
            if map[*i] == usize::MAX {
                map[*i] = vertices.len();
                vertices.push([pts[*i][0], pts[*i][1], 0.0]);
            }
            *i = map[*i];
        }
    }

    let loops = extract_boundary_loops(vertices.len(), &triangles)?;
    if loops.len() != holes.len() + 1 {
        return Err(Error::Descriptor(format!(
            "meshing produced {} boundary loops, expected {}; reduce h",
            loops.len(),
            holes.len() + 1
        )));
    }
    let mut ordered: Vec<Option<Vec<usize>>> = vec![None; holes.len() + 1];
    for l in loops {
        let c = l.iter().fold([0.0, 0.0], |acc, &v| {
            [
                acc[0] + vertices[v][0] / l.len() as f64,
                acc[1] + vertices[v][1] / l.len() as f64,
            ]
        });
        let mean_r = l
            .iter()
            .map(|&v| vertices[v][0].hypot(vertices[v][1]))
            .sum::<f64>()
            / l.len() as f64;
        let slot = if (mean_r - 1.0).abs() < desc.h {
            0
        } else {
            1 + holes
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1.center[0] - c[0]).hypot(a.1.center[1] - c[1]);
                    let db = (b.1.center[0] - c[0]).hypot(b.1.center[1] - c[1]);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        let center = if slot == 0 {
            [0.0, 0.0]
        } else {
            holes[slot - 1].center
        };
        // start at the rightmost point
        let base = (0..l.len())
            .max_by(|&a, &b| {
                let ka = (
                    vertices[l[a]][0] - center[0],
                    -(vertices[l[a]][1] - center[1]).abs(),
                );
                let kb = (
                    vertices[l[b]][0] - center[0],
                    -(vertices[l[b]][1] - center[1]).abs(),
                );
                ka.partial_cmp(&kb).unwrap()
            })
            .unwrap();
        let mut rotated = l[base..].to_vec();
        rotated.extend_from_slice(&l[..base]);
        if ordered[slot].replace(rotated).is_some() {
            return Err(Error::Descriptor(
                "two boundary loops matched the same circle".into(),
            ));
        }
    }
    let loops = ordered
        .into_iter()
        .map(|l| l.ok_or_else(|| Error::Descriptor("a circle produced no boundary loop".into())))
        .collect::<Result<Vec<_>>>()?;

    let mesh = SurfaceMesh::new(vertices, triangles, None, loops, 0, Orientation::Positive)?;
    match desc.metric {
        MetricField::Euclidean => Ok(mesh),
        ref field => mesh.with_planar_metric(|p| field.at(p)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::validate_mesh;

    #[test]
    fn disk_has_one_loop() {
        let m = build_synthetic(&DomainDescriptor::disk(0.1)).unwrap();
        let r = validate_mesh(&m);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.loop_count, 1);
        assert_eq!(r.euler_characteristic, 1);
        assert_eq!(m.vertices()[m.gamma0()[0]], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn annulus_outer_loop_is_ccw_and_hole_cw() {
        let m = build_synthetic(&DomainDescriptor::annulus(0.5, 0.1)).unwrap();
        let r = validate_mesh(&m);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.loop_count, 2);
        assert_eq!(r.euler_characteristic, 0);
        let signed_area = |l: &[usize]| {
            let v = m.vertices();
            (0..l.len())
                .map(|i| {
                    let (a, b) = (v[l[i]], v[l[(i + 1) % l.len()]]);
                    0.5 * (a[0] * b[1] - a[1] * b[0])
                })
                .sum::<f64>()
        };
        assert!(signed_area(m.gamma0()) > 0.0);
        assert!(signed_area(&m.boundary_loops()[1]) < 0.0);
    }

    #[test]
    fn overlapping_holes_are_rejected() {
        let d = DomainDescriptor::holes(
            vec![
                Hole {
                    center: [0.1, 0.0],
                    radius: 0.2,
                },
                Hole {
                    center: [-0.1, 0.0],
                    radius: 0.2,
                },
            ],
            0.05,
        );
        assert!(matches!(build_synthetic(&d), Err(Error::Descriptor(_))));
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(build_synthetic(&DomainDescriptor::annulus(-0.2, 0.1)).is_err());
        assert!(build_synthetic(&DomainDescriptor::disk(0.0)).is_err());
        assert!(build_synthetic(&DomainDescriptor::disk(f64::NAN)).is_err());
    }

    #[test]
    fn conformal_metric_is_applied() {
        let d = DomainDescriptor::disk(0.2).with_metric(MetricField::GaussianConformal {
            amplitude: 1.0,
            center: [0.0, 0.0],
            width: 0.5,
        });
        let m = build_synthetic(&d).unwrap();
        assert!(m.metric().iter().any(|g| g.g11 > 1.5));
        assert!(m
            .metric()
            .iter()
            .all(|g| (g.g11 - g.g22).abs() < 1e-9 && g.g12.abs() < 1e-9));
    }
}
