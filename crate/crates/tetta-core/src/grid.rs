//! Deformable tetrahedral grid: the container for the signed distance field,
//! vertex deformations, and per-vertex material parameters.

use crate::math::{Aabb, Vec3};
use crate::shading::MaterialSample;
use crate::{Error, Result};

/// Fixed tetrahedral decomposition of an axis-aligned box.
///
/// Each grid cube is split into six tetrahedra around the main diagonal, so
/// vertex and tet counts are deterministic functions of the resolution.
#[derive(Debug, Clone)]
pub struct TetGrid {
    pub vertices: Vec<Vec3>,
    /// Four vertex indices per tet, ordered for positive signed volume.
    pub tets: Vec<[usize; 4]>,
    /// Deduplicated undirected edges, `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub bounds: Aabb,
    pub resolution: [usize; 3],
    /// Per-vertex deformation bound: 0.45 x shortest incident axis edge.
    pub deform_limit: Vec<f64>,
    /// Neighbor lists derived from `edges` (for the umbrella Laplacian).
    pub neighbors: Vec<Vec<usize>>,
    edge_index: std::collections::HashMap<(usize, usize), usize>,
}

/// Six tets per cube sharing the main diagonal c0-c7. Corners are indexed
/// by bits (x | y<<1 | z<<2). Each entry is ordered for positive volume.
const CUBE_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 3, 2, 7],
    [0, 2, 6, 7],
    [0, 6, 4, 7],
    [0, 4, 5, 7],
    [0, 5, 1, 7],
];

impl TetGrid {
    /// Vertex index in the lattice.
    #[inline]
    pub fn vertex_index(&self, x: usize, y: usize, z: usize) -> usize {
        let nx = self.resolution[0] + 1;
        let ny = self.resolution[1] + 1;
        (z * ny + y) * nx + x
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Index of the undirected edge `(i, j)`, if it exists in the grid.
    pub fn edge_id(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edge_index.get(&key).copied()
    }

    pub fn cell_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    /// Length of the diagonal of one grid cell.
    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().norm()
    }

    pub fn signed_volume(&self, tet: usize) -> f64 {
        let [a, b, c, d] = self.tets[tet];
        let (va, vb, vc, vd) = (
            self.vertices[a],
            self.vertices[b],
            self.vertices[c],
            self.vertices[d],
        );
        (vb - va).cross(&(vc - va)).dot(&(vd - va)) / 6.0
    }
}

/// Builds the grid. `resolution` counts cells (cubes) per axis.
pub fn build_grid(resolution: [usize; 3], bounds: Aabb) -> Result<TetGrid> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::Config(format!(
            "grid resolution must be >= 2 per axis, got {resolution:?}"
        )));
    }
    if bounds.is_degenerate() {
        return Err(Error::Config("grid bounds are degenerate".into()));
    }
    let [nx, ny, nz] = resolution;
    let ext = bounds.extent();
    let step = Vec3::new(ext.x / nx as f64, ext.y / ny as f64, ext.z / nz as f64);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for z in 0..=nz {
        for y in 0..=ny {
            for x in 0..=nx {
                vertices.push(Vec3::new(
                    bounds.min.x + step.x * x as f64,
                    bounds.min.y + step.y * y as f64,
                    bounds.min.z + step.z * z as f64,
                ));
            }
        }
    }

    let vid = |x: usize, y: usize, z: usize| (z * (ny + 1) + y) * (nx + 1) + x;
    let mut tets = Vec::with_capacity(nx * ny * nz * 6);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let corner = |bits: usize| {
                    vid(
                        x + (bits & 1),
                        y + ((bits >> 1) & 1),
                        z + ((bits >> 2) & 1),
                    )
                };
                for t in &CUBE_TETS {
                    let mut tet = [corner(t[0]), corner(t[1]), corner(t[2]), corner(t[3])];
                    let (va, vb, vc, vd) = (
                        vertices[tet[0]],
                        vertices[tet[1]],
                        vertices[tet[2]],
                        vertices[tet[3]],
                    );
                    let vol = (vb - va).cross(&(vc - va)).dot(&(vd - va));
                    if vol < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    let mut edge_set = std::collections::BTreeSet::new();
    for tet in &tets {
        for a in 0..4 {
            for b in (a + 1)..4 {
                let (i, j) = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                edge_set.insert((i, j));
            }
        }
    }
    let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
    let edge_index = edges
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, k))
        .collect::<std::collections::HashMap<_, _>>();

    let mut neighbors = vec![Vec::new(); vertices.len()];
    for &(i, j) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }

    let min_axis_step = step.x.min(step.y).min(step.z);
    let deform_limit = vec![0.45 * min_axis_step; vertices.len()];

    Ok(TetGrid {
        vertices,
        tets,
        edges,
        bounds,
        resolution,
        deform_limit,
        neighbors,
        edge_index,
    })
}

/// Learnable per-vertex state: SDF value, deformation offset, material.
#[derive(Debug, Clone)]
pub struct FieldParams {
    pub sdf: Vec<f64>,
    pub deform: Vec<Vec3>,
    pub pbr: Vec<MaterialSample>,
}

impl FieldParams {
    pub fn new(vertex_count: usize) -> Self {
        Self {
            sdf: vec![1.0; vertex_count],
            deform: vec![Vec3::zeros(); vertex_count],
            pbr: vec![MaterialSample::default(); vertex_count],
        }
    }

    pub fn check_matches(&self, grid: &TetGrid) -> Result<()> {
        let n = grid.vertex_count();
        if self.sdf.len() != n || self.deform.len() != n || self.pbr.len() != n {
            return Err(Error::Contract(format!(
                "field size mismatch: grid has {n} vertices, field has {}/{}/{}",
                self.sdf.len(),
                self.deform.len(),
                self.pbr.len()
            )));
        }
        Ok(())
    }

    /// Deformed position of grid vertex `i`.
    #[inline]
    pub fn deformed(&self, grid: &TetGrid, i: usize) -> Vec3 {
        grid.vertices[i] + self.deform[i]
    }

    /// Projects deformations and material parameters back into their valid
    /// ranges. Called after every optimizer step.
    pub fn clamp_domains(&mut self, grid: &TetGrid) {
        for (i, d) in self.deform.iter_mut().enumerate() {
            let lim = grid.deform_limit[i];
            d.x = d.x.clamp(-lim, lim);
            d.y = d.y.clamp(-lim, lim);
            d.z = d.z.clamp(-lim, lim);
        }
        for m in &mut self.pbr {
            m.clamp_ranges();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bounds() -> Aabb {
        Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn res2_unit_cube_counts() {
        let g = build_grid([2, 2, 2], unit_bounds()).unwrap();
        assert_eq!(g.vertices.len(), 27);
        assert_eq!(g.tets.len(), 48);
    }

    #[test]
    fn all_tets_positive_volume() {
        let g = build_grid([2, 2, 2], unit_bounds()).unwrap();
        for t in 0..g.tets.len() {
            assert!(g.signed_volume(t) > 0.0, "tet {t} has non-positive volume");
        }
    }

    #[test]
    fn invalid_resolution_rejected() {
        assert!(matches!(
            build_grid([1, 4, 4], unit_bounds()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let b = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0));
        assert!(matches!(build_grid([2, 2, 2], b), Err(Error::Config(_))));
    }

    #[test]
    fn edges_unique_and_cover_tets() {
        let g = build_grid([3, 2, 2], unit_bounds()).unwrap();
        let set: std::collections::HashSet<_> = g.edges.iter().copied().collect();
        assert_eq!(set.len(), g.edges.len());
        for tet in &g.tets {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let key = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                    assert!(set.contains(&key));
                }
            }
        }
    }

    #[test]
    fn vertices_inside_bounds() {
        let b = Aabb::new(Vec3::new(-1.0, -2.0, 0.5), Vec3::new(1.0, 0.0, 2.5));
        let g = build_grid([4, 3, 2], b).unwrap();
        for v in &g.vertices {
            assert!(b.contains(v));
        }
    }
}
