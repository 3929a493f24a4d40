//! Triangle meshes and the vertex-gridded bounding cuboids used as crude
//! category-level geometry.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates index range, face degeneracy and coordinate finiteness.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "vertex {i} has non-finite coordinates"
            )));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} indexes past {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Axis-aligned bounding box, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }

    /// Applies a vertex permutation: new vertex `k` is old vertex `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(
                "permutation length differs from vertex count".into(),
            ));
        }
        let mut inverse = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            if old >= order.len() || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let vertices = order.iter().map(|&o| self.vertices[o]).collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
            .collect();
        Ok(Self { vertices, faces })
    }
}

/// Surface vertex count of an `nx x ny x nz` cell lattice.
fn surface_points(n: [usize; 3]) -> usize {
    let full = (n[0] + 1) * (n[1] + 1) * (n[2] + 1);
    let inner = n.iter().map(|&k| k.saturating_sub(1)).product::<usize>();
    full - inner
}

/// Builds the tight axis-aligned box around every source vertex and spreads
/// grid vertices evenly over its six sides, choosing a single spacing so the
/// vertex count lands as close to `target_vertex_count` as the lattice allows.
/// Sides are split into right triangles wound counter-clockwise seen from
/// outside.
pub fn generate_cuboid_mesh(
    sources: &[TriangleMesh],
    target_vertex_count: usize,
) -> Result<TriangleMesh> {
    if target_vertex_count < 8 {
        return Err(Error::InvalidArgument(format!(
            "target vertex count {target_vertex_count} is below 8"
        )));
    }
    let (lo, hi) = sources
        .iter()
        .filter_map(TriangleMesh::bounds)
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
        .ok_or_else(|| Error::InvalidArgument("cuboid sources contain no vertices".into()))?;

    let mut extent = (hi - lo).to_array();
    let largest = extent.iter().copied().fold(0.0, f64::max);
    if !(largest > 0.0) {
        return Err(Error::InvalidArgument(
            "cuboid sources collapse to a single point".into(),
        ));
    }
    let (mut lo_a, mut hi_a) = (lo.to_array(), hi.to_array());
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            let pad = 0.005 * largest;
            lo_a[axis] -= pad;
            hi_a[axis] += pad;
            extent[axis] = 0.01 * largest;
        }
    }

    // Scan spacings largest/k; the count grows monotonically in k.
    let mut best = ([1usize; 3], usize::MAX);
    for k in 1..=4096usize {
        let h = largest / k as f64;
        let n = extent.map(|e| (libm::round(e / h) as usize).max(1));
        let count = surface_points(n);
        let miss = count.abs_diff(target_vertex_count);
        if miss < best.1 {
            best = (n, miss);
        }
        if count > target_vertex_count {
            break;
        }
    }
    let n = best.0;

    let stride_y = n[0] + 1;
    let stride_z = stride_y * (n[1] + 1);
    let mut index = vec![usize::MAX; stride_z * (n[2] + 1)];
    let mut vertices = Vec::with_capacity(surface_points(n));
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let on_surface = i == 0 || j == 0 || k == 0 || i == n[0] || j == n[1] || k == n[2];
                if on_surface {
                    index[i + j * stride_y + k * stride_z] = vertices.len();
                    let t = |c: usize, axis: usize| {
                        if c == n[axis] {
                            hi_a[axis]
                        } else {
                            lo_a[axis] + (hi_a[axis] - lo_a[axis]) * c as f64 / n[axis] as f64
                        }
                    };
                    vertices.push(Vec3::new(t(i, 0), t(j, 1), t(k, 2)));
                }
            }
        }
    }

    let at = |c: [usize; 3]| index[c[0] + c[1] * stride_y + c[2] * stride_z];
    let mut faces = Vec::new();
    // For each side: the fixed axis, its value, and the two in-plane axes
    // ordered so that (a x b) points outward.
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for (fixed, outward) in [(0, false), (n[axis], true)] {
            let (u_axis, v_axis) = if outward { (a, b) } else { (b, a) };
            for u in 0..n[u_axis] {
                for v in 0..n[v_axis] {
                    let corner = |du: usize, dv: usize| {
                        let mut c = [0usize; 3];
                        c[axis] = fixed;
                        c[u_axis] = u + du;
                        c[v_axis] = v + dv;
                        at(c)
                    };
                    let (p00, p10, p11, p01) =
                        (corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1));
                    faces.push([p00, p10, p11]);
                    faces.push([p00, p11, p01]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Box-shaped mesh with eight corners and twelve faces; mostly a test fixture
/// and a cuboid source.
pub fn box_corners(lo: Vec3, hi: Vec3) -> TriangleMesh {
    let mut v = Vec::with_capacity(8);
    for k in 0..2 {
        for j in 0..2 {
            for i in 0..2 {
                v.push(Vec3::new(
                    if i == 0 { lo.x } else { hi.x },
                    if j == 0 { lo.y } else { hi.y },
                    if k == 0 { lo.z } else { hi.z },
                ));
            }
        }
    }
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    TriangleMesh { vertices: v, faces }
}
