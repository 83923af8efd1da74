//! Double of a surface along its inner boundary.
//!
//! The `+` sheet keeps the source indices; the `-` sheet holds copies of the
//! vertices off the seam, with triangle orientation reversed. Both sheets share
//! vertex positions, and the per-triangle frames of the `-` sheet are mirrored,
//! so its metric is the source tensor with `g12` negated. The rotation field
//! computed from each triangle's own orientation is then `+Φ` on one sheet and
//! `-Φ` (pushed forward) on the other.

use crate::error::{Error, Result};
use crate::surface::{Orientation, SurfaceMesh};

#[derive(Debug, Clone)]
pub struct DoubledSurface {
    mesh: SurfaceMesh,
    projection: Vec<usize>,
    involution: Vec<usize>,
    seam: Vec<usize>,
    sheet_sign: Vec<i8>,
    source_vertices: usize,
}

impl DoubledSurface {
    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    /// Vertex map to the source mesh.
    pub fn projection(&self) -> &[usize] {
        &self.projection
    }

    /// Sheet-swapping vertex permutation.
    pub fn involution(&self) -> &[usize] {
        &self.involution
    }

    /// Doubled-mesh indices of the glued inner-boundary vertices, ascending.
    pub fn seam(&self) -> &[usize] {
        &self.seam
    }

    /// `+1` on the source sheet, `-1` on the mirror sheet.
    pub fn sheet_sign(&self) -> &[i8] {
        &self.sheet_sign
    }

    pub fn source_vertex_count(&self) -> usize {
        self.source_vertices
    }

    /// Γ0 on the source sheet, in source order.
    pub fn gamma0_plus(&self) -> &[usize] {
        &self.mesh.boundary_loops()[0]
    }

    /// Images under τ of [`Self::gamma0_plus`], index-aligned with it.
    pub fn gamma0_minus_aligned(&self) -> Vec<usize> {
        self.gamma0_plus()
            .iter()
            .map(|&v| self.involution[v])
            .collect()
    }

    pub fn is_seam(&self, v: usize) -> bool {
        self.seam.binary_search(&v).is_ok()
    }

    /// Triangles of the source sheet, which reproduce the source triangles exactly.
    pub fn plus_triangles(&self) -> impl Iterator<Item = &[usize; 3]> {
        self.mesh
            .triangles()
            .iter()
            .zip(&self.sheet_sign)
            .filter(|(_, &s)| s > 0)
            .map(|(t, _)| t)
    }
}

/// Glues two copies of `mesh` along all of its inner boundary loops.
pub fn double_cover(mesh: &SurfaceMesh) -> Result<DoubledSurface> {
    if mesh.hole_count() == 0 {
        return Err(Error::Descriptor(
            "surface has no inner boundary to glue along".into(),
        ));
    }
    if mesh.orientation() != Orientation::Positive {
        return Err(Error::Config(
            "doubling expects positive orientation".into(),
        ));
    }
    let nv = mesh.vertex_count();
    let mut on_seam = vec![false; nv];
    for l in mesh.hole_loops() {
        for &v in l {
            on_seam[v] = true;
        }
    }

    let mut minus = vec![usize::MAX; nv];
    let mut vertices = mesh.vertices().to_vec();
    let mut projection: Vec<usize> = (0..nv).collect();
    for v in 0..nv {
        if on_seam[v] {
            minus[v] = v;
        } else {
            minus[v] = vertices.len();
            vertices.push(mesh.vertices()[v]);
            projection.push(v);
        }
    }
    let mut involution: Vec<usize> = vec![0; vertices.len()];
    for v in 0..nv {
        involution[v] = minus[v];
        involution[minus[v]] = v;
    }

    let nt = mesh.triangle_count();
    let mut triangles = mesh.triangles().to_vec();
    let mut metric = mesh.metric().to_vec();
    let mut sheet_sign = vec![1i8; nt];
    for (t, g) in mesh.triangles().iter().zip(mesh.metric()) {
        triangles.push([minus[t[0]], minus[t[2]], minus[t[1]]]);
        metric.push(g.mirrored());
        sheet_sign.push(-1);
    }

    let g0 = mesh.gamma0();
    let plus_loop = g0.to_vec();
    let mut minus_loop = vec![minus[g0[0]]];
    minus_loop.extend(g0[1..].iter().rev().map(|&v| minus[v]));

    let seam: Vec<usize> = (0..nv).filter(|&v| on_seam[v]).collect();
    let doubled = SurfaceMesh::new(
        vertices,
        triangles,
        Some(metric),
        vec![plus_loop, minus_loop],
        0,
        Orientation::Positive,
    )?;
    Ok(DoubledSurface {
        mesh: doubled,
        projection,
        involution,
        seam,
        sheet_sign,
        source_vertices: nv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::validate_mesh;
    use crate::synthetic::{build_synthetic, DomainDescriptor};

    #[test]
    fn doubled_annulus_is_an_annulus() {
        let m = build_synthetic(&DomainDescriptor::annulus(0.5, 0.1)).unwrap();
        let d = double_cover(&m).unwrap();
        let r = validate_mesh(d.mesh());
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.loop_count, 2);
        assert_eq!(r.euler_characteristic, 2 * m.euler_characteristic());
    }

    #[test]
    fn involution_fixes_exactly_the_seam() {
        let m = build_synthetic(&DomainDescriptor::annulus(0.5, 0.15)).unwrap();
        let d = double_cover(&m).unwrap();
        for v in 0..d.mesh().vertex_count() {
            let t = d.involution()[v];
            assert_eq!(d.involution()[t], v);
            assert_eq!(t == v, d.is_seam(v));
            assert_eq!(d.projection()[t], d.projection()[v]);
        }
    }

    #[test]
    fn disk_cannot_be_doubled() {
        let m = build_synthetic(&DomainDescriptor::disk(0.2)).unwrap();
        assert!(double_cover(&m).is_err());
    }

    #[test]
    fn plus_sheet_reproduces_source() {
        let m = build_synthetic(&DomainDescriptor::annulus(0.4, 0.15)).unwrap();
        let d = double_cover(&m).unwrap();
        let plus: Vec<[usize; 3]> = d.plus_triangles().copied().collect();
        assert_eq!(plus, m.triangles());
    }
}
