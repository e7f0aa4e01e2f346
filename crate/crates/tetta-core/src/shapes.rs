//! Analytic test shapes: meshes for fixtures and signed distance functions
//! for oracles.

use std::collections::HashMap;

use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use crate::shading::MaterialSample;

/// Icosphere of the given radius, subdivided `subdiv` times.
pub fn icosphere(radius: f64, subdiv: usize) -> TriangleMesh {
    // Icosahedron.
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for p in &mut positions {
        *p = p.normalize();
    }
    for _ in 0..subdiv {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((positions[a] + positions[b]) * 0.5).normalize();
                    positions.push(m);
                    positions.len() - 1
                });
            }
            next.push([tri[0], mids[0], mids[2]]);
            next.push([tri[1], mids[1], mids[0]]);
            next.push([tri[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        triangles = next;
    }
    for p in &mut positions {
        *p *= radius;
    }
    TriangleMesh::new(positions, triangles)
}

/// Axis-aligned box mesh centered at the origin with half extents `h`,
/// each face split into `n x n` quads.
pub fn box_mesh(h: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    // axis = face normal direction, sign = which side.
    for axis in 0..3 {
        for &sign in &[1.0f64, -1.0] {
            let u_axis = (axis + 1) % 3;
            let v_axis = (axis + 2) % 3;
            let base = positions.len();
            for j in 0..=n {
                for i in 0..=n {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * h[axis];
                    p[u_axis] = (-1.0 + 2.0 * i as f64 / n as f64) * h[u_axis];
                    p[v_axis] = (-1.0 + 2.0 * j as f64 / n as f64) * h[v_axis];
                    positions.push(p);
                }
            }
            for j in 0..n {
                for i in 0..n {
                    let a = base + j * (n + 1) + i;
                    let b = a + 1;
                    let c = a + (n + 1);
                    let d = c + 1;
                    if sign > 0.0 {
                        triangles.push([a, b, d]);
                        triangles.push([a, d, c]);
                    } else {
                        triangles.push([a, d, b]);
                        triangles.push([a, c, d]);
                    }
                }
            }
        }
    }
    weld_vertices(TriangleMesh::new(positions, triangles), 1e-12)
}

/// Torus around the z axis: major radius `major`, tube radius `minor`.
pub fn torus(major: f64, minor: f64, seg_major: usize, seg_minor: usize) -> TriangleMesh {
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for i in 0..seg_major {
        let a = 2.0 * std::f64::consts::PI * i as f64 / seg_major as f64;
        let (sa, ca) = a.sin_cos();
        for j in 0..seg_minor {
            let b = 2.0 * std::f64::consts::PI * j as f64 / seg_minor as f64;
            let (sb, cb) = b.sin_cos();
            let r = major + minor * cb;
            positions.push(Vec3::new(r * ca, r * sa, minor * sb));
        }
    }
    let idx = |i: usize, j: usize| (i % seg_major) * seg_minor + (j % seg_minor);
    for i in 0..seg_major {
        for j in 0..seg_minor {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(positions, triangles)
}

/// Ellipsoid with semi-axes `r` (scaled icosphere).
pub fn ellipsoid(r: Vec3, subdiv: usize) -> TriangleMesh {
    let mut m = icosphere(1.0, subdiv);
    for p in &mut m.positions {
        p.x *= r.x;
        p.y *= r.y;
        p.z *= r.z;
    }
    m
}

/// Single quad in the plane x = `0`, facing +x, side length `side`.
/// Open mesh; used by shading and gradient tests.
pub fn quad(side: f64) -> TriangleMesh {
    let h = side / 2.0;
    let positions = vec![
        Vec3::new(0.0, -h, -h),
        Vec3::new(0.0, h, -h),
        Vec3::new(0.0, h, h),
        Vec3::new(0.0, -h, h),
    ];
    // Wound so the geometric normal points toward +x.
    let triangles = vec![[0, 1, 2], [0, 2, 3]];
    TriangleMesh::new(positions, triangles)
}

/// Merges vertices closer than `tol`; keeps first occurrence.
pub fn weld_vertices(mesh: TriangleMesh, tol: f64) -> TriangleMesh {
    let mut map = vec![0usize; mesh.positions.len()];
    let mut kept: Vec<Vec3> = Vec::new();
    let scale = 1.0 / tol.max(1e-300);
    let mut lookup: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (vi, p) in mesh.positions.iter().enumerate() {
        let key = (
            (p.x * scale).round() as i64,
            (p.y * scale).round() as i64,
            (p.z * scale).round() as i64,
        );
        let mut found = None;
        for &k in lookup.entry(key).or_default().iter() {
            if (kept[k] - p).norm() <= tol {
                found = Some(k);
                break;
            }
        }
        match found {
            Some(k) => map[vi] = k,
            None => {
                kept.push(*p);
                let k = kept.len() - 1;
                lookup.entry(key).or_default().push(k);
                map[vi] = k;
            }
        }
    }
    let triangles = mesh
        .triangles
        .iter()
        .map(|t| [map[t[0]], map[t[1]], map[t[2]]])
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    TriangleMesh::new(kept, triangles)
}

/// Uniform diffuse material, useful for fixtures.
pub fn uniform_material(k_d: [f64; 3], roughness: f64, metal: f64) -> MaterialSample {
    MaterialSample {
        k_d: Vec3::new(k_d[0], k_d[1], k_d[2]),
        roughness,
        metal,
        k_n: Vec3::new(0.0, 0.0, 1.0),
    }
}

/// Assigns a smoothly varying Lambertian diffuse color to every vertex.
/// Distinct in all three axes, which breaks rotational symmetry in tests.
pub fn paint_lambertian(mesh: &mut TriangleMesh) {
    let b = mesh.bounds();
    let ext = b.extent();
    let mats = mesh
        .positions
        .iter()
        .map(|p| {
            let u = (p - b.min).component_div(&ext.map(|e| e.max(1e-12)));
            MaterialSample {
                k_d: Vec3::new(
                    0.15 + 0.7 * u.x,
                    0.2 + 0.6 * u.y,
                    0.25 + 0.5 * u.z,
                ),
                roughness: 0.8,
                metal: 0.0,
                k_n: Vec3::new(0.0, 0.0, 1.0),
            }
        })
        .collect();
    mesh.materials = Some(mats);
}

/// Analytic signed distance oracles.
pub mod sdf {
    use crate::math::Vec3;

    pub fn sphere(p: &Vec3, radius: f64) -> f64 {
        p.norm() - radius
    }

    pub fn boxed(p: &Vec3, h: &Vec3) -> f64 {
        let q = Vec3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    pub fn torus(p: &Vec3, major: f64, minor: f64) -> f64 {
        let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
        (ring * ring + p.z * p.z).sqrt() - minor
    }
}
