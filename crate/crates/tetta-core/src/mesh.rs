//! Triangle meshes with optional per-vertex attributes and extraction
//! provenance.

use std::collections::HashMap;

use crate::math::{Aabb, Vec3};
use crate::shading::MaterialSample;

/// Where a surface vertex came from: the grid edge it sits on and the
/// interpolation weight along that edge (measured from the lower-index
/// endpoint). This is what makes extracted vertices differentiable with
/// respect to the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexProvenance {
    /// Index into `TetGrid::edges`.
    pub edge: usize,
    /// Interpolation weight `t` so that `p = (1-t)*a + t*b` for edge `(i, j)`,
    /// `i < j`, with `a`, `b` the deformed endpoint positions.
    pub t: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vec3>>,
    pub materials: Option<Vec<MaterialSample>>,
    pub provenance: Option<Vec<VertexProvenance>>,
}

impl TriangleMesh {
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            positions,
            triangles,
            normals: None,
            materials: None,
            provenance: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.positions.iter())
    }

    pub fn triangle_positions(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.positions[a], self.positions[b], self.positions[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_positions(t);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unnormalized face normal (length = 2*area), oriented by winding.
    pub fn face_normal_raw(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle_positions(t);
        (b - a).cross(&(c - a))
    }

    /// Counts how many triangles share each undirected edge.
    pub fn edge_use_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        !self.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// Area-weighted per-vertex normals from face normals.
    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.positions.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.face_normal_raw(t);
            for &v in tri {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 1e-300 {
                *n /= len;
            } else {
                *n = Vec3::new(0.0, 0.0, 1.0);
            }
        }
        normals
    }

    /// Applies `p -> rot * p + trans` to every vertex.
    pub fn transformed(&self, rot: &nalgebra::Matrix3<f64>, trans: &Vec3) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            *p = rot * *p + trans;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::shapes;

    #[test]
    fn icosphere_is_closed_manifold() {
        let m = shapes::icosphere(0.6, 2);
        assert!(m.is_closed_manifold());
    }

    #[test]
    fn open_quad_is_not_closed() {
        let m = shapes::quad(1.0);
        assert!(!m.is_closed_manifold());
    }
}
