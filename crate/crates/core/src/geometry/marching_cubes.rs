use std::collections::HashMap;

use super::mc_tables::{CORNERS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use super::{ScalarGrid, TriangleMesh};
use crate::numerics::vec3::{self, Vec3};

const MIN_AREA: f64 = 1e-12;

/// Extracts the `iso` level set of `grid`.
///
/// Vertices sit on lattice edges (linear interpolation) and are shared
/// between neighbouring cells. Triangles are wound counter-clockwise when
/// seen from the low-value side, so normals point towards decreasing
/// values. A grid that never crosses `iso` yields an empty mesh.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> TriangleMesh {
    let g = grid.res();
    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let lattice = |x: usize, y: usize, z: usize| (z * g + y) * g + x;

    for iz in 0..g - 1 {
        for iy in 0..g - 1 {
            for ix in 0..g - 1 {
                let corner = CORNERS.map(|[dx, dy, dz]| (ix + dx, iy + dy, iz + dz));
                let values = corner.map(|(x, y, z)| grid.get(x, y, z));
                let case = values
                    .iter()
                    .enumerate()
                    .fold(0usize, |c, (i, &v)| if v < iso { c | (1 << i) } else { c });
                let flags = EDGE_TABLE[case];
                if flags == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, [a, b]) in EDGE_CORNERS.iter().enumerate() {
                    if flags & (1 << e) == 0 {
                        continue;
                    }
                    let (ka, kb) = (
                        lattice(corner[*a].0, corner[*a].1, corner[*a].2),
                        lattice(corner[*b].0, corner[*b].1, corner[*b].2),
                    );
                    let key = (ka.min(kb), ka.max(kb));
                    ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (pa, pb) = (
                            grid.point(corner[*a].0, corner[*a].1, corner[*a].2),
                            grid.point(corner[*b].0, corner[*b].1, corner[*b].2),
                        );
                        // interpolate from the lower lattice index so both
                        // cells sharing the edge produce the same point
                        let (pa, pb, va, vb) = if ka < kb {
                            (pa, pb, values[*a], values[*b])
                        } else {
                            (pb, pa, values[*b], values[*a])
                        };
                        mesh.vertices.push(interpolate(pa, pb, va, vb, iso));
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                        continue;
                    }
                    let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
                    let area = 0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)));
                    if area > MIN_AREA {
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    compact(mesh)
}

fn interpolate(pa: Vec3, pb: Vec3, va: f64, vb: f64, iso: f64) -> Vec3 {
    let t = if vb == va { 0.5 } else { ((iso - va) / (vb - va)).clamp(0.0, 1.0) };
    [0, 1, 2].map(|k| pa[k] + t * (pb[k] - pa[k]))
}

/// Drops vertices no surviving triangle references.
fn compact(mesh: TriangleMesh) -> TriangleMesh {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::with_capacity(mesh.vertices.len());
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| {
            t.map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(mesh.vertices[v as usize]);
                }
                *slot
            })
        })
        .collect();
    TriangleMesh {
        vertices,
        triangles,
    }
}
