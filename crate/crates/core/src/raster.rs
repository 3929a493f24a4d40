//! Z-buffered triangle rasterization with perspective-correct barycentrics,
//! and the vertex visibility test built on top of it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{project_vertices, CameraIntrinsics, CameraPose, Projection};
use crate::mesh::TriangleMesh;

/// Nearest surface sample at one pixel centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub face: usize,
    /// Perspective-correct weights of the face's three vertices.
    pub bary: [f64; 3],
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    width: usize,
    height: usize,
    fragments: Vec<Option<Fragment>>,
}

impl FragmentBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            fragments: vec![None; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major fragment slots, one per pixel.
    pub fn fragments(&self) -> &[Option<Fragment>] {
        &self.fragments
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.width + x].as_ref()
    }

    pub fn is_covered(&self, pixel: usize) -> bool {
        self.fragments[pixel].is_some()
    }

    pub fn covered_count(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }
}

/// A vertex that survives the depth test, with the pixel it projects into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisibleVertex {
    pub vertex: usize,
    /// Row-major pixel index.
    pub pixel: usize,
}

fn check_lattice(intr: &CameraIntrinsics, out_h: usize, out_w: usize) -> Result<()> {
    if intr.height != out_h || intr.width != out_w {
        return Err(Error::DimensionMismatch(alloc::format!(
            "requested {out_w}x{out_h} output but intrinsics describe {}x{}",
            intr.width,
            intr.height
        )));
    }
    Ok(())
}

#[inline]
fn edge(a: &Projection, b: &Projection, cu: f64, cv: f64) -> f64 {
    (b.u - a.u) * (cv - a.v) - (b.v - a.v) * (cu - a.u)
}

/// Rasterizes already-projected vertices. Pixel centres on an edge count as
/// inside; on equal depth the lower face index wins. Each face is evaluated
/// with its vertices in ascending index order, so faces over the same vertex
/// set produce bitwise-equal depths whatever their winding.
pub fn rasterize_projected(
    mesh: &TriangleMesh,
    proj: &[Projection],
    width: usize,
    height: usize,
) -> FragmentBuffer {
    let mut buf = FragmentBuffer::new(width, height);
    let mut zbuf = vec![f64::INFINITY; width * height];
    for (face, f) in mesh.faces().iter().enumerate() {
        let mut order = [0usize, 1, 2];
        order.sort_by_key(|&k| f[k]);
        let [p0, p1, p2] = order.map(|k| &proj[f[k]]);
        let area = edge(p0, p1, p2.u, p2.v);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_u = p0.u.min(p1.u).min(p2.u);
        let max_u = p0.u.max(p1.u).max(p2.u);
        let min_v = p0.v.min(p1.v).min(p2.v);
        let max_v = p0.v.max(p1.v).max(p2.v);
        let x0 = libm::ceil(min_u - 0.5).max(0.0);
        let x1 = libm::floor(max_u - 0.5).min(width as f64 - 1.0);
        let y0 = libm::ceil(min_v - 0.5).max(0.0);
        let y1 = libm::floor(max_v - 0.5).min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_z = [1.0 / p0.depth, 1.0 / p1.depth, 1.0 / p2.depth];
        for y in y0 as usize..=y1 as usize {
            let cv = y as f64 + 0.5;
            for x in x0 as usize..=x1 as usize {
                let cu = x as f64 + 0.5;
                let l0 = edge(p1, p2, cu, cv) / area;
                let l1 = edge(p2, p0, cu, cv) / area;
                let l2 = edge(p0, p1, cu, cv) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let q = [l0 * inv_z[0], l1 * inv_z[1], l2 * inv_z[2]];
                let s = q[0] + q[1] + q[2];
                let depth = 1.0 / s;
                let slot = y * width + x;
                if depth < zbuf[slot] {
                    zbuf[slot] = depth;
                    let mut bary = [0.0; 3];
                    for (j, &k) in order.iter().enumerate() {
                        bary[k] = q[j] / s;
                    }
                    buf.fragments[slot] = Some(Fragment { face, bary, depth });
                }
            }
        }
    }
    buf
}

/// Projects and rasterizes `mesh` onto an `out_w x out_h` lattice.
pub fn rasterize(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    out_h: usize,
    out_w: usize,
) -> Result<FragmentBuffer> {
    check_lattice(intr, out_h, out_w)?;
    let proj = project_vertices(mesh.vertices(), pose, intr)?;
    Ok(rasterize_projected(mesh, &proj, out_w, out_h))
}

/// Relative visibility tolerance; multiplied by the mesh diameter.
pub const VISIBILITY_TOLERANCE: f64 = 1e-3;

/// Depth test of every vertex against the surface stored in `buf`.
///
/// The stored face's plane is evaluated at the vertex's own screen position
/// rather than at the pixel centre, so vertices on a tilted front face are
/// not rejected because the surface depth changes across the pixel. A vertex
/// is visible when its pixel is covered and it is not behind that plane by
/// more than `tolerance`.
pub fn visible_from_buffer(
    mesh: &TriangleMesh,
    proj: &[Projection],
    buf: &FragmentBuffer,
    tolerance: f64,
) -> Vec<VisibleVertex> {
    let (w, h) = (buf.width as f64, buf.height as f64);
    let mut out = Vec::new();
    for (vertex, p) in proj.iter().enumerate() {
        if !(p.u >= 0.0 && p.v >= 0.0 && p.u < w && p.v < h) {
            continue;
        }
        let pixel = libm::floor(p.v) as usize * buf.width + libm::floor(p.u) as usize;
        let Some(frag) = buf.fragments[pixel] else {
            continue;
        };
        let f = mesh.faces()[frag.face];
        let surface = if f.contains(&vertex) {
            p.depth
        } else {
            let [a, b, c] = [&proj[f[0]], &proj[f[1]], &proj[f[2]]];
            let area = edge(a, b, c.u, c.v);
            let l = [
                edge(b, c, p.u, p.v) / area,
                edge(c, a, p.u, p.v) / area,
                edge(a, b, p.u, p.v) / area,
            ];
            let s = l[0] / a.depth + l[1] / b.depth + l[2] / c.depth;
            if s > 0.0 {
                1.0 / s
            } else {
                f64::INFINITY
            }
        };
        if p.depth <= surface + tolerance {
            out.push(VisibleVertex { vertex, pixel });
        }
    }
    out
}

/// Vertices of `mesh` visible under `pose`, each with its projected pixel.
pub fn visible_vertices(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<VisibleVertex>> {
    check_lattice(intr, out_h, out_w)?;
    let proj = project_vertices(mesh.vertices(), pose, intr)?;
    let buf = rasterize_projected(mesh, &proj, out_w, out_h);
    Ok(visible_from_buffer(
        mesh,
        &proj,
        &buf,
        VISIBILITY_TOLERANCE * mesh.diameter(),
    ))
}
