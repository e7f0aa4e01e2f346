//! Mesh signed distance queries, surface point sampling, and fitting the
//! grid field to an ingested coarse mesh.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::grid::{FieldParams, TetGrid};
use crate::math::{Aabb, Vec3};
use crate::mesh::TriangleMesh;
use crate::{Error, Result};

/// A bag of points, optionally with unit normals.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }
}

/// Closest point on triangle (a, b, c) to `p` (Ericson, Real-Time
/// Collision Detection).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

struct BvhNode {
    bounds: Aabb,
    /// Leaf: (start, count) into `indices`. Inner: left child is `node + 1`,
    /// right child stored here.
    right_or_start: usize,
    count: usize,
    // Dipole data for the fast winding number approximation.
    area_centroid: Vec3,
    area_normal: Vec3,
    radius: f64,
}

impl BvhNode {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Acceleration structure over a triangle mesh supporting closest-point,
/// winding-number, and signed distance queries. Immutable after build.
pub struct MeshSdf {
    positions: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    nodes: Vec<BvhNode>,
    indices: Vec<usize>,
    closed: bool,
}

/// Signed distance plus a reliability flag: the sign is only trustworthy
/// for closed, edge-manifold input.
#[derive(Debug, Clone, Copy)]
pub struct SignedDistance {
    pub value: f64,
    pub sign_reliable: bool,
}

const BVH_LEAF_SIZE: usize = 8;
/// Far-field criterion for the winding dipole approximation.
const DIPOLE_BETA: f64 = 6.0;

impl MeshSdf {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Contract("cannot build SDF over an empty mesh".into()));
        }
        let positions = mesh.positions.clone();
        let triangles = mesh.triangles.clone();
        let mut indices: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::with_capacity(triangles.len() * 2);
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (positions[t[0]] + positions[t[1]] + positions[t[2]]) / 3.0)
            .collect();
        build_node(
            &positions,
            &triangles,
            &centroids,
            &mut indices,
            0,
            triangles.len(),
            &mut nodes,
        );
        let closed = mesh.is_closed_manifold();
        Ok(Self {
            positions,
            triangles,
            nodes,
            indices,
            closed,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Unsigned distance to the surface.
    pub fn distance(&self, q: &Vec3) -> f64 {
        self.closest_point(q).1.sqrt()
    }

    /// (closest point, squared distance).
    pub fn closest_point(&self, q: &Vec3) -> (Vec3, f64) {
        let mut best_d2 = f64::INFINITY;
        let mut best_p = Vec3::zeros();
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance_sq(q) >= best_d2 {
                continue;
            }
            if node.is_leaf() {
                for k in 0..node.count {
                    let t = self.indices[node.right_or_start + k];
                    let [a, b, c] = self.triangles[t];
                    let cp = closest_point_on_triangle(
                        q,
                        &self.positions[a],
                        &self.positions[b],
                        &self.positions[c],
                    );
                    let d2 = (cp - q).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best_p = cp;
                    }
                }
            } else {
                let l = ni + 1;
                let r = node.right_or_start;
                let dl = self.nodes[l].bounds.distance_sq(q);
                let dr = self.nodes[r].bounds.distance_sq(q);
                // Near child on top of the stack.
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        (best_p, best_d2)
    }

    /// Generalized winding number at `q` (1 inside a closed mesh, 0 outside),
    /// evaluated hierarchically with a dipole far-field approximation.
    pub fn winding_number(&self, q: &Vec3) -> f64 {
        let mut acc = 0.0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let to_center = node.area_centroid - q;
            let dist = to_center.norm();
            if dist > DIPOLE_BETA * node.radius {
                acc += to_center.dot(&node.area_normal)
                    / (4.0 * std::f64::consts::PI * dist * dist * dist);
            } else if node.is_leaf() {
                for k in 0..node.count {
                    let t = self.indices[node.right_or_start + k];
                    let [a, b, c] = self.triangles[t];
                    acc += solid_angle(
                        &self.positions[a],
                        &self.positions[b],
                        &self.positions[c],
                        q,
                    );
                }
            } else {
                stack.push(ni + 1);
                stack.push(node.right_or_start);
            }
        }
        acc
    }

    /// Signed distance: negative inside (winding number > 0.5).
    pub fn signed_distance(&self, q: &Vec3) -> SignedDistance {
        let d = self.distance(q);
        let w = self.winding_number(q);
        let value = if w > 0.5 { -d } else { d };
        SignedDistance {
            value,
            sign_reliable: self.closed,
        }
    }
}

fn build_node(
    positions: &[Vec3],
    triangles: &[[usize; 3]],
    centroids: &[Vec3],
    indices: &mut [usize],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let slice = &indices[start..start + count];
    let mut bounds = Aabb::from_points(std::iter::empty());
    let mut area = 0.0;
    let mut area_centroid = Vec3::zeros();
    let mut area_normal = Vec3::zeros();
    for &t in slice {
        let [a, b, c] = triangles[t];
        for &v in &[a, b, c] {
            bounds = bounds.union(&Aabb::new(positions[v], positions[v]));
        }
        let n2 = (positions[b] - positions[a]).cross(&(positions[c] - positions[a]));
        let tri_area = 0.5 * n2.norm();
        area += tri_area;
        area_centroid += centroids[t] * tri_area;
        area_normal += n2 * 0.5;
    }
    if area > 0.0 {
        area_centroid /= area;
    } else {
        area_centroid = bounds.center();
    }
    let radius = slice
        .iter()
        .flat_map(|&t| triangles[t].iter())
        .map(|&v| (positions[v] - area_centroid).norm())
        .fold(0.0f64, f64::max);

    let node_index = nodes.len();
    nodes.push(BvhNode {
        bounds,
        right_or_start: start,
        count,
        area_centroid,
        area_normal,
        radius,
    });

    if count > BVH_LEAF_SIZE {
        let ext = bounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        indices[start..start + count]
            .sort_unstable_by(|&a, &b| centroids[a][axis].partial_cmp(&centroids[b][axis]).unwrap());
        let half = count / 2;
        nodes[node_index].count = 0;
        build_node(positions, triangles, centroids, indices, start, half, nodes);
        let right = build_node(
            positions,
            triangles,
            centroids,
            indices,
            start + half,
            count - half,
            nodes,
        );
        nodes[node_index].right_or_start = right;
    }
    node_index
}

/// Signed solid angle of triangle (a, b, c) seen from `q`, as a fraction of
/// the full sphere (van Oosterom & Strackee).
pub fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3, q: &Vec3) -> f64 {
    let va = a - q;
    let vb = b - q;
    let vc = c - q;
    let la = va.norm();
    let lb = vb.norm();
    let lc = vc.norm();
    let num = va.dot(&vb.cross(&vc));
    let den = la * lb * lc + va.dot(&vb) * lc + vb.dot(&vc) * la + vc.dot(&va) * lb;
    2.0 * num.atan2(den) / (4.0 * std::f64::consts::PI)
}

/// Convenience one-off signed distance query.
pub fn signed_distance(mesh: &TriangleMesh, query: &Vec3) -> Result<SignedDistance> {
    Ok(MeshSdf::new(mesh)?.signed_distance(query))
}

/// Draws `n` area-uniform samples from the mesh surface. Deterministic for
/// a fixed seed.
pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::Contract("cannot sample an empty mesh".into()));
    }
    if n == 0 {
        return Err(Error::Contract("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Contract("mesh has zero total area".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c < r).min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangle_positions(t);
        let mut u = rng.gen::<f64>();
        let mut v = rng.gen::<f64>();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        let nr = mesh.face_normal_raw(t);
        let ln = nr.norm();
        normals.push(if ln > 1e-300 { nr / ln } else { Vec3::new(0.0, 0.0, 1.0) });
    }
    Ok(PointCloud {
        points,
        normals: Some(normals),
    })
}

/// Locates the tet of the undeformed grid containing `p` and returns its
/// barycentric coordinates. Points outside the bounds return `None`.
pub fn locate_tet(grid: &TetGrid, p: &Vec3) -> Option<(usize, [f64; 4])> {
    if !grid.bounds.contains(p) {
        return None;
    }
    let cell = grid.cell_size();
    let [nx, ny, nz] = grid.resolution;
    let rel = p - grid.bounds.min;
    let cx = ((rel.x / cell.x) as usize).min(nx - 1);
    let cy = ((rel.y / cell.y) as usize).min(ny - 1);
    let cz = ((rel.z / cell.z) as usize).min(nz - 1);
    let cube = (cz * ny + cy) * nx + cx;
    let mut best: Option<(usize, [f64; 4])> = None;
    let mut best_violation = f64::INFINITY;
    for k in 0..6 {
        let tet_idx = cube * 6 + k;
        let tet = grid.tets[tet_idx];
        let bary = tet_barycentric(grid, &tet, p);
        let violation = -bary.iter().cloned().fold(f64::INFINITY, f64::min);
        if violation <= 1e-10 {
            return Some((tet_idx, bary));
        }
        if violation < best_violation {
            best_violation = violation;
            best = Some((tet_idx, bary));
        }
    }
    // Numerical fallback: the nearest tet in the cube (clamped barycentric).
    best
}

fn tet_barycentric(grid: &TetGrid, tet: &[usize; 4], p: &Vec3) -> [f64; 4] {
    let v0 = grid.vertices[tet[0]];
    let m = nalgebra::Matrix3::from_columns(&[
        grid.vertices[tet[1]] - v0,
        grid.vertices[tet[2]] - v0,
        grid.vertices[tet[3]] - v0,
    ]);
    let rhs = p - v0;
    let sol = m.lu().solve(&rhs).unwrap_or_else(Vec3::zeros);
    [1.0 - sol.x - sol.y - sol.z, sol.x, sol.y, sol.z]
}

/// Interpolates the SDF field at `p` inside the undeformed grid.
pub fn interpolate_sdf(grid: &TetGrid, field: &FieldParams, p: &Vec3) -> Option<f64> {
    locate_tet(grid, p).map(|(tet, bary)| {
        let t = grid.tets[tet];
        (0..4).map(|k| bary[k] * field.sdf[t[k]]).sum()
    })
}

/// Report from [`fit_field_to_mesh`].
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Mean squared error of the fitted field against mesh signed distance
    /// over the sampled evaluation points.
    pub final_loss: f64,
    /// Loss before any refinement iterations.
    pub initial_loss: f64,
    pub refine_iters: usize,
}

/// Initializes the field so its SDF matches the signed distance of `mesh`:
/// direct evaluation at grid vertices, then optional gradient refinement of
/// the sampled-point squared loss.
pub fn fit_field_to_mesh(
    grid: &TetGrid,
    mesh: &TriangleMesh,
    n_points: usize,
    iters: usize,
    lr: f64,
) -> Result<(FieldParams, FitReport)> {
    let mesh_bounds = mesh.bounds();
    if !(grid.bounds.contains(&mesh_bounds.min) && grid.bounds.contains(&mesh_bounds.max)) {
        return Err(Error::Config(
            "mesh does not fit inside the grid bounds".into(),
        ));
    }
    if !mesh.is_closed_manifold() {
        return Err(Error::Contract(
            "fit_field_to_mesh requires a closed, edge-manifold mesh".into(),
        ));
    }
    let sdf = MeshSdf::new(mesh)?;

    let mut field = FieldParams::new(grid.vertex_count());
    let values: Vec<f64> = grid
        .vertices
        .par_iter()
        .map(|v| sdf.signed_distance(v).value)
        .collect();
    field.sdf = values;

    // Evaluation points: surface samples plus uniform volume samples (1:1).
    // Surface-only points leave the far field unconstrained.
    let n_surface = (n_points / 2).max(1);
    let n_volume = n_points.saturating_sub(n_surface).max(1);
    let surface = sample_surface_points(mesh, n_surface, 0x5df_f17)?;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5df_f18);
    let ext = grid.bounds.extent();
    let mut eval_points = surface.points;
    for _ in 0..n_volume {
        eval_points.push(Vec3::new(
            grid.bounds.min.x + rng.gen::<f64>() * ext.x,
            grid.bounds.min.y + rng.gen::<f64>() * ext.y,
            grid.bounds.min.z + rng.gen::<f64>() * ext.z,
        ));
    }
    let targets: Vec<f64> = eval_points
        .par_iter()
        .map(|p| sdf.signed_distance(p).value)
        .collect();
    let located: Vec<Option<(usize, [f64; 4])>> = eval_points
        .par_iter()
        .map(|p| locate_tet(grid, p))
        .collect();

    let loss_of = |field: &FieldParams| -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (loc, target) in located.iter().zip(&targets) {
            if let Some((tet, bary)) = loc {
                let t = grid.tets[*tet];
                let s: f64 = (0..4).map(|k| bary[k] * field.sdf[t[k]]).sum();
                acc += (s - target) * (s - target);
                n += 1;
            }
        }
        acc / n.max(1) as f64
    };

    let initial_loss = loss_of(&field);
    let mut final_loss = initial_loss;
    for _ in 0..iters {
        let mut grad = vec![0.0; grid.vertex_count()];
        let mut n = 0usize;
        for (loc, target) in located.iter().zip(&targets) {
            if let Some((tet, bary)) = loc {
                let t = grid.tets[*tet];
                let s: f64 = (0..4).map(|k| bary[k] * field.sdf[t[k]]).sum();
                let r = 2.0 * (s - target);
                for k in 0..4 {
                    grad[t[k]] += r * bary[k];
                }
                n += 1;
            }
        }
        let scale = lr / n.max(1) as f64;
        for (s, g) in field.sdf.iter_mut().zip(&grad) {
            *s -= scale * g;
        }
        final_loss = loss_of(&field);
    }

    Ok((
        field,
        FitReport {
            final_loss,
            initial_loss,
            refine_iters: iters,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::shapes;
    use approx::assert_relative_eq;

    #[test]
    fn cube_center_and_face_points() {
        let mesh = shapes::box_mesh(Vec3::new(0.5, 0.5, 0.5), 2);
        let sdf = MeshSdf::new(&mesh).unwrap();
        let center = sdf.signed_distance(&Vec3::zeros());
        assert!(center.sign_reliable);
        assert_relative_eq!(center.value, -0.5, epsilon = 1e-12);
        let outside = sdf.signed_distance(&Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(outside.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sphere_mesh_sdf_close_to_analytic() {
        let mesh = shapes::icosphere(0.6, 3);
        let sdf = MeshSdf::new(&mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        // Discretization error of a subdiv-3 icosphere.
        let tol = 4e-3;
        for _ in 0..200 {
            let q = Vec3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let d = sdf.signed_distance(&q);
            assert!(
                (d.value - (q.norm() - 0.6)).abs() < tol,
                "q {q:?} d {} analytic {}",
                d.value,
                q.norm() - 0.6
            );
        }
    }

    #[test]
    fn open_mesh_sign_flagged_unreliable() {
        let mesh = shapes::quad(1.0);
        let sdf = MeshSdf::new(&mesh).unwrap();
        assert!(!sdf.signed_distance(&Vec3::new(0.3, 0.0, 0.0)).sign_reliable);
    }

    #[test]
    fn winding_number_matches_brute_force() {
        let mesh = shapes::torus(0.5, 0.2, 16, 8);
        let sdf = MeshSdf::new(&mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = Vec3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let brute: f64 = mesh
                .triangles
                .iter()
                .map(|t| {
                    solid_angle(
                        &mesh.positions[t[0]],
                        &mesh.positions[t[1]],
                        &mesh.positions[t[2]],
                        &q,
                    )
                })
                .sum();
            let fast = sdf.winding_number(&q);
            assert!(
                (brute - fast).abs() < 1e-3,
                "winding mismatch at {q:?}: {brute} vs {fast}"
            );
        }
    }

    #[test]
    fn surface_sampling_statistics() {
        // Unit square (two triangles): mean of many samples near centroid.
        let mesh = shapes::quad(1.0);
        let pc = sample_surface_points(&mesh, 100_000, 42).unwrap();
        let mean = pc.centroid();
        assert!(mean.norm() < 0.01, "mean {mean:?}");
    }

    #[test]
    fn single_sample_lies_on_mesh() {
        let mesh = shapes::icosphere(0.5, 2);
        let pc = sample_surface_points(&mesh, 1, 3).unwrap();
        let sdf = MeshSdf::new(&mesh).unwrap();
        assert!(sdf.distance(&pc.points[0]) < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = shapes::icosphere(0.5, 1);
        let a = sample_surface_points(&mesh, 100, 9).unwrap();
        let b = sample_surface_points(&mesh, 100, 9).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn empty_mesh_sampling_is_contract_error() {
        let mesh = TriangleMesh::default();
        assert!(sample_surface_points(&mesh, 10, 0).is_err());
    }

    #[test]
    fn fit_sphere_field_rms_small() {
        let grid = build_grid(
            [32, 32, 32],
            Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
        )
        .unwrap();
        let mesh = shapes::icosphere(0.6, 3);
        let (field, report) = fit_field_to_mesh(&grid, &mesh, 4000, 0, 0.0).unwrap();
        let mut sq = 0.0;
        for (i, v) in grid.vertices.iter().enumerate() {
            let analytic = shapes::sdf::sphere(v, 0.6);
            sq += (field.sdf[i] - analytic) * (field.sdf[i] - analytic);
        }
        let rms = (sq / grid.vertex_count() as f64).sqrt();
        assert!(rms < 0.01, "rms {rms}");
        assert!(report.final_loss <= report.initial_loss);
    }

    #[test]
    fn fit_refinement_does_not_regress() {
        let grid = build_grid(
            [16, 16, 16],
            Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
        )
        .unwrap();
        let mesh = shapes::icosphere(0.55, 2);
        let (_, direct) = fit_field_to_mesh(&grid, &mesh, 2000, 0, 0.0).unwrap();
        let (_, refined) = fit_field_to_mesh(&grid, &mesh, 2000, 25, 0.5).unwrap();
        assert!(refined.final_loss <= direct.final_loss * 1.0001);
    }

    #[test]
    fn mesh_outside_bounds_is_config_error() {
        let grid = build_grid(
            [4, 4, 4],
            Aabb::new(Vec3::new(-0.2, -0.2, -0.2), Vec3::new(0.2, 0.2, 0.2)),
        )
        .unwrap();
        let mesh = shapes::icosphere(0.6, 1);
        assert!(matches!(
            fit_field_to_mesh(&grid, &mesh, 100, 0, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sign_consistency_against_winding_oracle() {
        let grid = build_grid(
            [16, 16, 16],
            Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
        )
        .unwrap();
        let mesh = shapes::box_mesh(Vec3::new(0.5, 0.4, 0.3), 2);
        let (field, _) = fit_field_to_mesh(&grid, &mesh, 1000, 0, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut checked = 0;
        for _ in 0..1000 {
            let i = rng.gen_range(0..grid.vertex_count());
            let v = grid.vertices[i];
            let analytic = shapes::sdf::boxed(&v, &Vec3::new(0.5, 0.4, 0.3));
            if analytic.abs() < 1e-3 {
                continue; // too close to the surface to have a stable sign
            }
            assert_eq!(
                field.sdf[i] > 0.0,
                analytic > 0.0,
                "sign mismatch at vertex {i}"
            );
            checked += 1;
        }
        assert!(checked > 500);
    }
}
