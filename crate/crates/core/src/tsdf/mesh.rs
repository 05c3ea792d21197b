//! Marching-cubes extraction of the TSDF zero set.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::tables::{CORNERS, EDGES, TRIANGLE_TABLE};
use super::{VoxelGrid, VoxelIndex};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Checks index ranges, normal count and the no-degenerate invariant.
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len();
        self.normals.len() == n
            && self
                .triangles
                .iter()
                .all(|t| t.iter().all(|&i| i < n) && self.triangle_area(t) > 1e-12)
    }
}

/// A grid edge: its lower voxel and the axis it runs along.
type EdgeKey = (VoxelIndex, u8);

struct Corner {
    index: VoxelIndex,
    distance: f64,
}

/// Central (or one-sided at the observed boundary) distance gradient.
fn gradient(grid: &VoxelGrid, v: &VoxelIndex, d: f64) -> Vector3<f64> {
    let s = grid.voxel_size();
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut hi = *v;
        hi[k] += 1;
        let mut lo = *v;
        lo[k] -= 1;
        g[k] = match (grid.get(&hi), grid.get(&lo)) {
            (Some(a), Some(b)) => (a.distance - b.distance) / (2.0 * s),
            (Some(a), None) => (a.distance - d) / s,
            (None, Some(b)) => (d - b.distance) / s,
            (None, None) => 0.0,
        };
    }
    g
}

/// Vertex on the crossing edge `a`-`b`, always interpolated from the lower
/// voxel so that neighbouring cubes produce bit-identical positions.
fn edge_vertex(grid: &VoxelGrid, a: &Corner, b: &Corner) -> (EdgeKey, Vector3<f64>, Vector3<f64>) {
    let (lo, hi) = if a.index < b.index { (a, b) } else { (b, a) };
    let axis = (0..3).find(|&k| lo.index[k] != hi.index[k]).unwrap_or(0) as u8;
    let t = lo.distance / (lo.distance - hi.distance);
    let (pl, ph) = (grid.center(&lo.index), grid.center(&hi.index));
    let pos = pl + (ph - pl) * t;
    let gl = gradient(grid, &lo.index, lo.distance);
    let gh = gradient(grid, &hi.index, hi.distance);
    let normal = gl + (gh - gl) * t;
    ((lo.index, axis), pos, normal)
}

type CubeTriangle = [(EdgeKey, Vector3<f64>, Vector3<f64>); 3];

fn block_triangles(grid: &VoxelGrid, block: &VoxelIndex) -> Vec<CubeTriangle> {
    let mut out = Vec::new();
    'cube: for (base, _) in grid.block_voxels(block) {
        let mut corners: [Corner; 8] = std::array::from_fn(|_| Corner {
            index: base,
            distance: 0.0,
        });
        let mut case = 0usize;
        for (i, off) in CORNERS.iter().enumerate() {
            let index = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
            let Some(vox) = grid.get(&index) else {
                continue 'cube;
            };
            if vox.distance < 0.0 {
                case |= 1 << i;
            }
            corners[i] = Corner {
                index,
                distance: vox.distance,
            };
        }
        let row = &TRIANGLE_TABLE[case];
        for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
            let mut verts: CubeTriangle = std::array::from_fn(|k| {
                let [a, b] = EDGES[tri[k] as usize];
                edge_vertex(grid, &corners[a], &corners[b])
            });
            let face = (verts[1].1 - verts[0].1).cross(&(verts[2].1 - verts[0].1));
            if 0.5 * face.norm() <= 1e-12 {
                continue;
            }
            // outward = direction of increasing distance
            let outward = verts[0].2 + verts[1].2 + verts[2].2;
            if face.dot(&outward) < 0.0 {
                verts.swap(1, 2);
            }
            out.push(verts);
        }
    }
    out
}

/// Marching cubes over every cube whose eight corner voxels are observed.
/// Vertices are shared between cubes through their grid edge; normals are
/// the normalized distance gradient and triangles wind counter-clockwise
/// seen from the positive (free-space) side.
pub fn extract_mesh(grid: &VoxelGrid) -> TriangleMesh {
    let blocks = grid.block_indices();
    let per_block = grid.config().exec.map(&blocks, |b| block_triangles(grid, b));
    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<EdgeKey, usize> = HashMap::new();
    for tris in per_block {
        for tri in tris {
            let idx = tri.map(|(key, pos, normal)| {
                *ids.entry(key).or_insert_with(|| {
                    mesh.vertices.push(pos);
                    mesh.normals.push(normal);
                    mesh.vertices.len() - 1
                })
            });
            mesh.triangles.push(idx);
        }
    }
    for (k, n) in mesh.normals.iter_mut().enumerate() {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        } else {
            // no gradient information: fall back to an adjacent face normal
            if let Some(t) = mesh.triangles.iter().find(|t| t.contains(&k)) {
                let [a, b, c] = t.map(|i| mesh.vertices[i]);
                *n = (b - a).cross(&(c - a)).normalize();
            }
        }
    }
    mesh
}
