//! Differentiable marching tetrahedra: surface extraction with per-vertex
//! provenance so extracted vertex positions (and transported attributes)
//! have well-defined gradients with respect to the field.

use std::collections::HashMap;

use crate::grid::{FieldParams, TetGrid};
use crate::mesh::{TriangleMesh, VertexProvenance};
use crate::shading::MaterialSample;
use crate::{Error, Result};

/// SDF values equal to zero are nudged by this amount before extraction so
/// crossings never land exactly on grid vertices.
const ZERO_NUDGE: f64 = 1e-12;

/// Degenerate output triangles (exactly coincident crossing points) are
/// dropped; they carry no area and no gradient.
const MIN_TRIANGLE_AREA: f64 = 1e-30;

#[inline]
fn effective_sdf(s: f64) -> f64 {
    if s == 0.0 {
        ZERO_NUDGE
    } else {
        s
    }
}

/// Interpolation weight along edge `(i, j)` (from `i`): `t = s_i / (s_i - s_j)`.
#[inline]
pub fn crossing_weight(s_i: f64, s_j: f64) -> f64 {
    s_i / (s_i - s_j)
}

/// Partials of [`crossing_weight`] in the two endpoint SDF values.
#[inline]
pub fn crossing_weight_grad(s_i: f64, s_j: f64) -> (f64, f64) {
    let d = s_i - s_j;
    (-s_j / (d * d), s_i / (d * d))
}

/// Extracts the zero level set as an oriented triangle mesh. Triangle
/// normals point toward positive SDF. Surface vertices are deduplicated
/// across tets by the grid edge they sit on, and each records provenance.
pub fn marching_tetrahedra(grid: &TetGrid, field: &FieldParams) -> Result<TriangleMesh> {
    field.check_matches(grid)?;

    let mut positions: Vec<crate::math::Vec3> = Vec::new();
    let mut provenance: Vec<VertexProvenance> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut edge_vertex: HashMap<usize, usize> = HashMap::new();

    let mut vertex_on_edge = |grid: &TetGrid, field: &FieldParams, a: usize, b: usize| -> usize {
        let (i, j) = (a.min(b), a.max(b));
        let edge = grid
            .edge_id(i, j)
            .expect("tet edge must exist in the grid edge set");
        *edge_vertex.entry(edge).or_insert_with(|| {
            let s_i = effective_sdf(field.sdf[i]);
            let s_j = effective_sdf(field.sdf[j]);
            let t = crossing_weight(s_i, s_j);
            let p = field.deformed(grid, i) * (1.0 - t) + field.deformed(grid, j) * t;
            positions.push(p);
            provenance.push(VertexProvenance { edge, t });
            positions.len() - 1
        })
    };

    for tet in &grid.tets {
        let s: Vec<f64> = tet.iter().map(|&v| effective_sdf(field.sdf[v])).collect();
        let inside: Vec<bool> = s.iter().map(|&v| v < 0.0).collect();
        let neg: Vec<usize> = (0..4).filter(|&k| inside[k]).collect();

        match neg.len() {
            0 | 4 => continue,
            1 | 3 => {
                // One vertex on the minority side; triangle on the three
                // edges leaving it. `apex_negative` tells which way the
                // surface normal must face.
                let apex_negative = neg.len() == 1;
                let apex = if apex_negative {
                    neg[0]
                } else {
                    (0..4).find(|k| !inside[*k]).unwrap()
                };
                let others: Vec<usize> = (0..4).filter(|&k| k != apex).collect();
                let v0 = vertex_on_edge(grid, field, tet[apex], tet[others[0]]);
                let v1 = vertex_on_edge(grid, field, tet[apex], tet[others[1]]);
                let v2 = vertex_on_edge(grid, field, tet[apex], tet[others[2]]);
                // For a positively oriented tet, (apex, o0, o1, o2) with even
                // parity makes (v0, v1, v2) face away from the apex.
                let even = permutation_is_even(&[apex, others[0], others[1], others[2]]);
                // Normal must point toward positive SDF: away from a
                // negative apex, toward a positive apex.
                let flip = even != apex_negative;
                triangles.push(orient([v0, v1, v2], flip));
            }
            2 => {
                let a = neg[0];
                let b = neg[1];
                let pos: Vec<usize> = (0..4).filter(|&k| !inside[k]).collect();
                let (c, d) = (pos[0], pos[1]);
                let v_ac = vertex_on_edge(grid, field, tet[a], tet[c]);
                let v_ad = vertex_on_edge(grid, field, tet[a], tet[d]);
                let v_bd = vertex_on_edge(grid, field, tet[b], tet[d]);
                let v_bc = vertex_on_edge(grid, field, tet[b], tet[c]);
                // Quad ring (ac, ad, bd, bc); split along one diagonal.
                // With (a, b, c, d) an even permutation, the ring winds so
                // its normal faces the positive pair.
                let even = permutation_is_even(&[a, b, c, d]);
                let flip = !even;
                triangles.push(orient([v_ac, v_ad, v_bd], flip));
                triangles.push(orient([v_ac, v_bd, v_bc], flip));
            }
            _ => unreachable!(),
        }
    }

    // Exact-degenerate triangles carry no area and no gradient.
    triangles.retain(|tri| {
        (positions[tri[1]] - positions[tri[0]])
            .cross(&(positions[tri[2]] - positions[tri[0]]))
            .norm()
            * 0.5
            > MIN_TRIANGLE_AREA
    });

    let mut mesh = TriangleMesh::new(positions, triangles);
    mesh.provenance = Some(provenance);
    Ok(mesh)
}

#[inline]
fn orient(tri: [usize; 3], flip: bool) -> [usize; 3] {
    if flip {
        [tri[0], tri[2], tri[1]]
    } else {
        tri
    }
}

/// Parity of a permutation of {0, 1, 2, 3}.
fn permutation_is_even(p: &[usize; 4]) -> bool {
    let mut inversions = 0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 0
}

/// Transports per-vertex PBR records to the extracted surface using the
/// stored interpolation weights. Results are clamped to valid ranges.
pub fn surface_attributes(
    grid: &TetGrid,
    field: &FieldParams,
    mesh: &TriangleMesh,
) -> Result<Vec<MaterialSample>> {
    field.check_matches(grid)?;
    let provenance = mesh.provenance.as_ref().ok_or_else(|| {
        Error::Contract("surface_attributes requires extraction provenance".into())
    })?;
    if provenance.len() != mesh.positions.len() {
        return Err(Error::Contract(
            "provenance length does not match surface vertex count".into(),
        ));
    }
    Ok(provenance
        .iter()
        .map(|pv| {
            let (i, j) = grid.edges[pv.edge];
            MaterialSample::lerp(&field.pbr[i], &field.pbr[j], pv.t).clamped()
        })
        .collect())
}

/// Attaches transported attributes to the mesh in place.
pub fn attach_surface_attributes(
    grid: &TetGrid,
    field: &FieldParams,
    mesh: &mut TriangleMesh,
) -> Result<()> {
    let mats = surface_attributes(grid, field, mesh)?;
    mesh.materials = Some(mats);
    Ok(())
}

/// Gradients with respect to every learnable field parameter.
#[derive(Debug, Clone)]
pub struct FieldGrads {
    pub d_sdf: Vec<f64>,
    pub d_deform: Vec<crate::math::Vec3>,
    pub d_pbr: Vec<crate::shading::MaterialGrad>,
}

impl FieldGrads {
    pub fn zeros(vertex_count: usize) -> Self {
        Self {
            d_sdf: vec![0.0; vertex_count],
            d_deform: vec![crate::math::Vec3::zeros(); vertex_count],
            d_pbr: vec![crate::shading::MaterialGrad::default(); vertex_count],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.d_sdf.iter_mut().zip(&other.d_sdf) {
            *a += b;
        }
        for (a, b) in self.d_deform.iter_mut().zip(&other.d_deform) {
            *a += b;
        }
        for (a, b) in self.d_pbr.iter_mut().zip(&other.d_pbr) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.d_sdf {
            *a *= s;
        }
        for a in &mut self.d_deform {
            *a *= s;
        }
        for a in &mut self.d_pbr {
            *a = a.scaled(s);
        }
    }
}

/// Chains gradients on extracted surface vertices (positions and transported
/// materials) back to the field parameters through the recorded provenance.
/// Material clamping gates gradients where the raw interpolation left the
/// valid range.
pub fn surface_grads_to_field(
    grid: &TetGrid,
    field: &FieldParams,
    mesh: &TriangleMesh,
    d_positions: &[crate::math::Vec3],
    d_materials: &[crate::shading::MaterialGrad],
) -> Result<FieldGrads> {
    use crate::shading::MaterialGrad;
    let provenance = mesh.provenance.as_ref().ok_or_else(|| {
        Error::Contract("gradient chaining requires extraction provenance".into())
    })?;
    if d_positions.len() != provenance.len() || d_materials.len() != provenance.len() {
        return Err(Error::Contract(
            "surface gradient arrays do not match the surface vertex count".into(),
        ));
    }
    let mut out = FieldGrads::zeros(grid.vertex_count());
    for (pv, (g_pos, g_mat)) in provenance
        .iter()
        .zip(d_positions.iter().zip(d_materials.iter()))
    {
        let (i, j) = grid.edges[pv.edge];
        let t = pv.t;
        let a = field.deformed(grid, i);
        let b = field.deformed(grid, j);

        // Position path: p = (1-t) a + t b.
        out.d_deform[i] += g_pos * (1.0 - t);
        out.d_deform[j] += g_pos * t;
        let mut d_t = g_pos.dot(&(b - a));

        // Material path: attr = clamp(lerp(m_i, m_j, t)). The clamp gate is
        // derived from the raw lerp.
        let raw = MaterialSample::lerp(&field.pbr[i], &field.pbr[j], t);
        let clamped = raw.clamped();
        let gate = |raw_v: f64, clamped_v: f64| -> f64 {
            if raw_v == clamped_v {
                1.0
            } else {
                0.0
            }
        };
        let mut gated = MaterialGrad::default();
        for c in 0..3 {
            gated.d_kd[c] = g_mat.d_kd[c] * gate(raw.k_d[c], clamped.k_d[c]);
            gated.d_kn[c] = g_mat.d_kn[c] * gate(raw.k_n[c], clamped.k_n[c]);
        }
        gated.d_roughness = g_mat.d_roughness * gate(raw.roughness, clamped.roughness);
        gated.d_metal = g_mat.d_metal * gate(raw.metal, clamped.metal);

        out.d_pbr[i].add_assign(&gated.scaled(1.0 - t));
        out.d_pbr[j].add_assign(&gated.scaled(t));
        d_t += gated.d_kd.dot(&(field.pbr[j].k_d - field.pbr[i].k_d))
            + gated.d_roughness * (field.pbr[j].roughness - field.pbr[i].roughness)
            + gated.d_metal * (field.pbr[j].metal - field.pbr[i].metal)
            + gated.d_kn.dot(&(field.pbr[j].k_n - field.pbr[i].k_n));

        // t depends on the two SDF endpoints.
        let s_i = effective_sdf(field.sdf[i]);
        let s_j = effective_sdf(field.sdf[j]);
        let (dt_dsi, dt_dsj) = crossing_weight_grad(s_i, s_j);
        out.d_sdf[i] += d_t * dt_dsi;
        out.d_sdf[j] += d_t * dt_dsj;
    }
    Ok(out)
}
