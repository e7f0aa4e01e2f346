//! Differentiable rasterization: z-buffered shading with perspective-correct
//! attribute interpolation, a soft silhouette mask, and an analytic backward
//! pass to field parameters and camera pose.
//!
//! Visibility (which triangle wins the depth test) is treated as locally
//! constant; pixels near depth discontinuities are flagged so callers can
//! exclude them from gradient-sensitive losses.

use crate::camera::CameraTransform;
use crate::env::EnvironmentLight;
use crate::grid::{FieldParams, TetGrid};
use crate::image::{Image, Mask};
use crate::marching::{surface_grads_to_field, FieldGrads};
use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use crate::shading::{shade_pbr_vjp, MaterialGrad, MaterialSample};
use crate::{Error, Result};

/// Soft-mask contributions below this sigmoid value are skipped. The
/// survival factor is rescaled so it reaches exactly 1 at the cutoff,
/// keeping the mask continuous in the vertex positions.
const MASK_SIGMA_MIN: f64 = 1e-4;
const MASK_SIGMA_MIN_LOGIT: f64 = 9.210340371976184; // logit(1 - 1e-4)
/// Pixels this close (in px) to a triangle count as covered; pixels landing
/// numerically on shared vertices or edges are otherwise inside no triangle.
const MASK_INSIDE_EPS: f64 = 1e-6;
const MASK_SIGMA_RESCALE: f64 = 1.0 / (1.0 - MASK_SIGMA_MIN);
/// Once the per-pixel survival product drops below this, the mask is
/// saturated to exactly 1 and carries no gradient.
const MASK_SATURATE: f64 = 1e-14;
const TILE: usize = 16;
/// Relative depth jump that counts as a discontinuity.
const DEPTH_JUMP_REL: f64 = 0.02;
/// Boundary flags cover pixels within this Chebyshev radius of a
/// discontinuity.
const BOUNDARY_DILATE: usize = 2;

#[derive(Debug, Clone)]
pub struct RenderParams {
    /// Soft-mask falloff scale, in screen pixels at the 128-px reference
    /// image height. Scaling with resolution keeps the mask's spatial
    /// extent constant in object units, so mean coverage is consistent
    /// across render sizes.
    pub gamma: f64,
    /// Linear RGB background the foreground is composited over.
    pub background: [f64; 3],
}

impl RenderParams {
    /// Falloff scale in actual pixels for the given image height.
    pub fn gamma_px(&self, height: usize) -> f64 {
        self.gamma * height as f64 / 128.0
    }
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            background: [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: Image,
    pub mask: Mask,
    /// Positive view depth per pixel; +inf where nothing was hit.
    pub depth: Mask,
    /// Pixels within [`BOUNDARY_DILATE`] px of a depth discontinuity.
    pub boundary: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    depth: f64,
    valid: bool,
}

/// Forward render plus the bookkeeping the backward pass needs.
pub struct FrameData {
    pub output: RenderOutput,
    projected: Vec<ScreenVertex>,
    /// Per-pixel winning triangle (-1 = none).
    hits: Vec<i32>,
    /// Per-pixel survival product of the soft mask (0 when saturated).
    mask_product: Vec<f64>,
    bins: Vec<Vec<u32>>,
    tiles_x: usize,
    /// Unnormalized per-vertex normal sums and their normalized versions.
    /// Shading interpolates vertex normals, so the image stays continuous
    /// across interior mesh edges.
    normal_sums: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
}

/// Gradients accumulated in surface/world space, before provenance chaining.
#[derive(Debug, Clone)]
pub struct SurfaceGrads {
    pub d_position: Vec<Vec3>,
    pub d_material: Vec<MaterialGrad>,
    pub d_elevation: f64,
    pub d_azimuth: f64,
    pub d_radius: f64,
}

/// Gradients of a rendered loss with respect to everything learnable.
#[derive(Debug, Clone)]
pub struct RenderGrads {
    pub field: FieldGrads,
    pub d_elevation: f64,
    pub d_azimuth: f64,
    pub d_radius: f64,
}

impl RenderGrads {
    pub fn zeros(vertex_count: usize) -> Self {
        Self {
            field: FieldGrads::zeros(vertex_count),
            d_elevation: 0.0,
            d_azimuth: 0.0,
            d_radius: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.field.add_assign(&other.field);
        self.d_elevation += other.d_elevation;
        self.d_azimuth += other.d_azimuth;
        self.d_radius += other.d_radius;
    }

    pub fn scale(&mut self, s: f64) {
        self.field.scale(s);
        self.d_elevation *= s;
        self.d_azimuth *= s;
        self.d_radius *= s;
    }
}

/// Renders and returns only the output buffers.
pub fn render(
    mesh: &TriangleMesh,
    materials: &[MaterialSample],
    cam: &CameraTransform,
    env: &EnvironmentLight,
    params: &RenderParams,
) -> Result<RenderOutput> {
    Ok(render_forward(mesh, materials, cam, env, params)?.output)
}

/// Renders with retained bookkeeping for [`render_backward`].
pub fn render_forward(
    mesh: &TriangleMesh,
    materials: &[MaterialSample],
    cam: &CameraTransform,
    env: &EnvironmentLight,
    params: &RenderParams,
) -> Result<FrameData> {
    env.check_prefiltered()?;
    if materials.len() != mesh.positions.len() {
        return Err(Error::Contract(
            "material array must match mesh vertex count".into(),
        ));
    }
    let w = cam.intrinsics.width;
    let h = cam.intrinsics.height;
    let near = cam.intrinsics.near;

    let mut normal_sums = vec![Vec3::zeros(); mesh.positions.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let n = mesh.face_normal_raw(t);
        for &v in tri {
            normal_sums[v] += n;
        }
    }
    let vertex_normals: Vec<Vec3> = normal_sums
        .iter()
        .map(|m| {
            let len = m.norm();
            if len > 1e-300 {
                m / len
            } else {
                Vec3::new(0.0, 0.0, 1.0)
            }
        })
        .collect();

    let projected: Vec<ScreenVertex> = mesh
        .positions
        .iter()
        .map(|p| {
            let q = cam.to_camera(p);
            let depth = -q.z;
            if depth > near {
                let (sx, sy, d) = cam.project_camera_point(&q);
                ScreenVertex {
                    x: sx,
                    y: sy,
                    depth: d,
                    valid: true,
                }
            } else {
                ScreenVertex {
                    x: 0.0,
                    y: 0.0,
                    depth,
                    valid: false,
                }
            }
        })
        .collect();

    // Hard visibility pass.
    let mut hits = vec![-1i32; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
        if !(sv[0].valid && sv[1].valid && sv[2].valid) {
            continue;
        }
        let min_x = sv.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
        let max_x = sv.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = sv.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        let max_y = sv.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let x1 = ((max_x + 0.5).ceil() as i64).clamp(0, w as i64) as usize;
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        let y1 = ((max_y + 0.5).ceil() as i64).clamp(0, h as i64) as usize;
        if x0 >= x1.min(w) || y0 >= y1.min(h) {
            continue;
        }
        let area2 = edge_fn((sv[0].x, sv[0].y), (sv[1].x, sv[1].y), (sv[2].x, sv[2].y));
        if area2.abs() < 1e-12 {
            continue;
        }
        for py in y0..y1.min(h) {
            for px in x0..x1.min(w) {
                let pc = (px as f64 + 0.5, py as f64 + 0.5);
                if let Some(lambda) = barycentric(&sv, pc, area2) {
                    let s: f64 = (0..3).map(|k| lambda[k] / sv[k].depth).sum();
                    let depth = 1.0 / s;
                    let idx = py * w + px;
                    if depth < zbuf[idx] {
                        zbuf[idx] = depth;
                        hits[idx] = ti as i32;
                    }
                }
            }
        }
    }

    // Soft mask with tile binning.
    let gamma_px = params.gamma_px(h);
    let r_cut = gamma_px * MASK_SIGMA_MIN_LOGIT;
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
        if !(sv[0].valid && sv[1].valid && sv[2].valid) {
            continue;
        }
        let min_x = sv.iter().map(|v| v.x).fold(f64::INFINITY, f64::min) - r_cut;
        let max_x = sv.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max) + r_cut;
        let min_y = sv.iter().map(|v| v.y).fold(f64::INFINITY, f64::min) - r_cut;
        let max_y = sv.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max) + r_cut;
        if max_x < 0.0 || max_y < 0.0 || min_x >= w as f64 || min_y >= h as f64 {
            continue;
        }
        let tx0 = (min_x.max(0.0) as usize) / TILE;
        let tx1 = ((max_x.min(w as f64 - 1.0)).max(0.0) as usize) / TILE;
        let ty0 = (min_y.max(0.0) as usize) / TILE;
        let ty1 = ((max_y.min(h as f64 - 1.0)).max(0.0) as usize) / TILE;
        for ty in ty0..=ty1.min(tiles_y - 1) {
            for tx in tx0..=tx1.min(tiles_x - 1) {
                bins[ty * tiles_x + tx].push(ti as u32);
            }
        }
    }

    let mut mask = Mask::new(w, h);
    let mut mask_product = vec![1.0f64; w * h];
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let bin = &bins[(py / TILE) * tiles_x + (px / TILE)];
            if bin.is_empty() {
                continue;
            }
            let pc = (px as f64 + 0.5, py as f64 + 0.5);
            let mut product = 1.0f64;
            for &ti in bin {
                let tri = mesh.triangles[ti as usize];
                let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
                let d = signed_distance_2d(
                    pc,
                    (sv[0].x, sv[0].y),
                    (sv[1].x, sv[1].y),
                    (sv[2].x, sv[2].y),
                );
                if d > -MASK_INSIDE_EPS {
                    // Inside a triangle: full coverage (the d -> +inf limit
                    // of the sigmoid). Interior pixels would otherwise sag
                    // wherever two triangles meet.
                    product = 0.0;
                    break;
                }
                let x = d / gamma_px;
                if x < -MASK_SIGMA_MIN_LOGIT {
                    continue;
                }
                // 1 - sigmoid(x), computed stably and rescaled to hit 1 at
                // the cutoff.
                let q = (crate::math::sigmoid(-x) * MASK_SIGMA_RESCALE).min(1.0);
                product *= q;
                if product < MASK_SATURATE {
                    product = 0.0;
                    break;
                }
            }
            mask_product[idx] = product;
            mask.data[idx] = 1.0 - product;
        }
    }

    // Shade covered pixels and composite.
    let bg = params.background;
    let mut rgb = Image::filled(w, h, bg);
    let eye = cam.eye;
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let ti = hits[idx];
            if ti < 0 {
                continue;
            }
            let shaded = match pixel_geometry(
                mesh,
                materials,
                &projected,
                &vertex_normals,
                ti as usize,
                px,
                py,
                &eye,
            ) {
                Some(g) => crate::shading::shade_pbr(&g.material, &g.normal, &g.view, env)?,
                None => Vec3::zeros(),
            };
            let m = mask.data[idx];
            rgb.set_pixel(
                px,
                py,
                [
                    m * shaded.x + (1.0 - m) * bg[0],
                    m * shaded.y + (1.0 - m) * bg[1],
                    m * shaded.z + (1.0 - m) * bg[2],
                ],
            );
        }
    }

    let boundary = boundary_flags(&hits, &zbuf, w, h);
    let depth = Mask {
        width: w,
        height: h,
        data: zbuf,
    };

    Ok(FrameData {
        output: RenderOutput {
            rgb,
            mask,
            depth,
            boundary,
        },
        projected,
        hits,
        mask_product,
        bins,
        tiles_x,
        normal_sums,
        vertex_normals,
    })
}

struct PixelGeometry {
    lambda: [f64; 3],
    weights: [f64; 3],
    /// Interpolated (unnormalized) shading normal.
    normal_raw: Vec3,
    normal: Vec3,
    view_raw: Vec3,
    view: Vec3,
    material: MaterialSample,
}

#[allow(clippy::too_many_arguments)]
fn pixel_geometry(
    mesh: &TriangleMesh,
    materials: &[MaterialSample],
    projected: &[ScreenVertex],
    vertex_normals: &[Vec3],
    ti: usize,
    px: usize,
    py: usize,
    eye: &Vec3,
) -> Option<PixelGeometry> {
    let tri = mesh.triangles[ti];
    let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
    let pc = (px as f64 + 0.5, py as f64 + 0.5);
    let area2 = edge_fn((sv[0].x, sv[0].y), (sv[1].x, sv[1].y), (sv[2].x, sv[2].y));
    if area2.abs() < 1e-12 {
        return None;
    }
    let lambda = barycentric_unclamped(&sv, pc, area2);
    let wt = [
        lambda[0] / sv[0].depth,
        lambda[1] / sv[1].depth,
        lambda[2] / sv[2].depth,
    ];
    let s: f64 = wt.iter().sum();
    let weights = [wt[0] / s, wt[1] / s, wt[2] / s];

    let p0 = mesh.positions[tri[0]];
    let p1 = mesh.positions[tri[1]];
    let p2 = mesh.positions[tri[2]];
    let world = p0 * weights[0] + p1 * weights[1] + p2 * weights[2];
    let normal_raw = vertex_normals[tri[0]] * weights[0]
        + vertex_normals[tri[1]] * weights[1]
        + vertex_normals[tri[2]] * weights[2];
    let nlen = normal_raw.norm();
    if nlen < 1e-12 {
        return None;
    }
    let normal = normal_raw / nlen;
    let view_raw = eye - world;
    let view = view_raw.normalize();

    let m0 = &materials[tri[0]];
    let m1 = &materials[tri[1]];
    let m2 = &materials[tri[2]];
    let material = MaterialSample {
        k_d: m0.k_d * weights[0] + m1.k_d * weights[1] + m2.k_d * weights[2],
        roughness: m0.roughness * weights[0]
            + m1.roughness * weights[1]
            + m2.roughness * weights[2],
        metal: m0.metal * weights[0] + m1.metal * weights[1] + m2.metal * weights[2],
        k_n: m0.k_n * weights[0] + m1.k_n * weights[1] + m2.k_n * weights[2],
    };
    Some(PixelGeometry {
        lambda,
        weights,
        normal_raw,
        normal,
        view_raw,
        view,
        material,
    })
}

/// Backward pass: given dL/drgb and dL/dmask, produces gradients with
/// respect to the field parameters (through extraction provenance) and the
/// camera pose. Requires the bookkeeping from [`render_forward`].
#[allow(clippy::too_many_arguments)]
pub fn render_backward(
    grid: &TetGrid,
    field: &FieldParams,
    mesh: &TriangleMesh,
    materials: &[MaterialSample],
    cam: &CameraTransform,
    env: &EnvironmentLight,
    params: &RenderParams,
    frame: &FrameData,
    d_rgb: &Image,
    d_mask: &Mask,
) -> Result<RenderGrads> {
    let surface = render_backward_surface(mesh, materials, cam, env, params, frame, d_rgb, d_mask)?;
    let field_grads =
        surface_grads_to_field(grid, field, mesh, &surface.d_position, &surface.d_material)?;
    Ok(RenderGrads {
        field: field_grads,
        d_elevation: surface.d_elevation,
        d_azimuth: surface.d_azimuth,
        d_radius: surface.d_radius,
    })
}

/// Backward pass stopping at surface vertices (positions + materials) and
/// the camera pose.
#[allow(clippy::too_many_arguments)]
pub fn render_backward_surface(
    mesh: &TriangleMesh,
    materials: &[MaterialSample],
    cam: &CameraTransform,
    env: &EnvironmentLight,
    params: &RenderParams,
    frame: &FrameData,
    d_rgb: &Image,
    d_mask: &Mask,
) -> Result<SurfaceGrads> {
    env.check_prefiltered()?;
    let w = cam.intrinsics.width;
    let h = cam.intrinsics.height;
    if d_rgb.width != w || d_rgb.height != h || d_mask.width != w || d_mask.height != h {
        return Err(Error::Contract(
            "gradient image dimensions do not match the render".into(),
        ));
    }
    if frame.projected.len() != mesh.positions.len() {
        return Err(Error::Contract(
            "stale forward bookkeeping: vertex count mismatch".into(),
        ));
    }

    let nv = mesh.positions.len();
    let mut d_world = vec![Vec3::zeros(); nv];
    let mut d_material = vec![MaterialGrad::default(); nv];
    let mut d_screen = vec![[0.0f64; 2]; nv];
    let mut d_depth = vec![0.0f64; nv];
    let mut d_vertex_normal = vec![Vec3::zeros(); nv];
    let mut d_eye = Vec3::zeros();
    // dL/dmask per pixel: the given term plus the compositing term.
    let mut mask_grad_total = d_mask.data.clone();

    let bg = params.background;
    let eye = cam.eye;
    let projected = &frame.projected;

    // Pass 1: shading and compositing at hit pixels.
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let ti = frame.hits[idx];
            if ti < 0 {
                continue;
            }
            let g_pixel = d_rgb.pixel(px, py);
            if g_pixel == [0.0; 3] {
                continue;
            }
            let ti = ti as usize;
            let Some(geom) = pixel_geometry(
                mesh,
                materials,
                projected,
                &frame.vertex_normals,
                ti,
                px,
                py,
                &eye,
            ) else {
                continue;
            };
            let shaded =
                crate::shading::shade_pbr(&geom.material, &geom.normal, &geom.view, env)?;
            let m = frame.output.mask.data[idx];

            // rgb = m * fg + (1 - m) * bg.
            let g_fg = Vec3::new(g_pixel[0] * m, g_pixel[1] * m, g_pixel[2] * m);
            mask_grad_total[idx] += g_pixel[0] * (shaded.x - bg[0])
                + g_pixel[1] * (shaded.y - bg[1])
                + g_pixel[2] * (shaded.z - bg[2]);

            let svjp = shade_pbr_vjp(&geom.material, &geom.normal, &geom.view, env, &g_fg)?;
            let tri = mesh.triangles[ti];

            // Material interpolation: mat_px = sum_i w_i mat_i.
            let pixel_mat_grad = MaterialGrad {
                d_kd: svjp.d_kd,
                d_roughness: svjp.d_roughness,
                d_metal: svjp.d_metal,
                d_kn: svjp.d_kn,
            };
            let mut d_weights = [0.0f64; 3];
            for k in 0..3 {
                d_material[tri[k]].add_assign(&pixel_mat_grad.scaled(geom.weights[k]));
                d_weights[k] += pixel_mat_grad.dot_material(&materials[tri[k]]);
            }

            // View direction: view = normalize(eye - world).
            let g_view_raw = crate::math::normalize_vjp(&geom.view_raw, &svjp.d_view);
            d_eye += g_view_raw;
            let mut g_world = -g_view_raw;

            // Interpolated shading normal.
            let g_nraw = crate::math::normalize_vjp(&geom.normal_raw, &svjp.d_normal);
            for k in 0..3 {
                d_vertex_normal[tri[k]] += g_nraw * geom.weights[k];
                d_weights[k] += g_nraw.dot(&frame.vertex_normals[tri[k]]);
            }

            // World interpolation: world = sum_i w_i p_i.
            for k in 0..3 {
                d_world[tri[k]] += g_world * geom.weights[k];
                d_weights[k] += g_world.dot(&mesh.positions[tri[k]]);
            }
            g_world = Vec3::zeros();
            let _ = g_world;

            // Perspective-correct weights -> barycentrics and depths.
            let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
            let depths = [sv[0].depth, sv[1].depth, sv[2].depth];
            let (d_lambda, d_dep) = weights_vjp(&geom.lambda, &depths, &d_weights);
            for k in 0..3 {
                d_depth[tri[k]] += d_dep[k];
            }

            // Barycentrics -> screen positions.
            let pc = (px as f64 + 0.5, py as f64 + 0.5);
            let d_scr = barycentric_vjp(&sv, pc, &d_lambda);
            for k in 0..3 {
                d_screen[tri[k]][0] += d_scr[k][0];
                d_screen[tri[k]][1] += d_scr[k][1];
            }
        }
    }

    // Chain vertex-normal gradients through the per-vertex normalization
    // and the incident-face cross products.
    if d_vertex_normal.iter().any(|g| *g != Vec3::zeros()) {
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); nv];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for &v in tri {
                incident[v].push(t as u32);
            }
        }
        for v in 0..nv {
            let g = d_vertex_normal[v];
            if g == Vec3::zeros() {
                continue;
            }
            let g_sum = crate::math::normalize_vjp(&frame.normal_sums[v], &g);
            for &t in &incident[v] {
                let tri = mesh.triangles[t as usize];
                let e1 = mesh.positions[tri[1]] - mesh.positions[tri[0]];
                let e2 = mesh.positions[tri[2]] - mesh.positions[tri[0]];
                let g_e1 = e2.cross(&g_sum);
                let g_e2 = g_sum.cross(&e1);
                d_world[tri[0]] -= g_e1 + g_e2;
                d_world[tri[1]] += g_e1;
                d_world[tri[2]] += g_e2;
            }
        }
    }

    // Pass 2: soft-mask boundary term.
    let gamma = params.gamma_px(h);
    let mut contributions: Vec<(u32, f64)> = Vec::with_capacity(128);
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let g_m = mask_grad_total[idx];
            if g_m == 0.0 {
                continue;
            }
            // Saturated pixels carry no mask gradient.
            if frame.mask_product[idx] == 0.0 {
                continue;
            }
            let bin = &frame.bins[(py / TILE) * frame.tiles_x + (px / TILE)];
            if bin.is_empty() {
                continue;
            }
            let pc = (px as f64 + 0.5, py as f64 + 0.5);
            contributions.clear();
            let mut running = 1.0f64;
            for &ti in bin {
                let tri = mesh.triangles[ti as usize];
                let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
                let d = signed_distance_2d(
                    pc,
                    (sv[0].x, sv[0].y),
                    (sv[1].x, sv[1].y),
                    (sv[2].x, sv[2].y),
                );
                if d > -MASK_INSIDE_EPS {
                    running = 0.0;
                    break;
                }
                let x = d / gamma;
                if x < -MASK_SIGMA_MIN_LOGIT {
                    continue;
                }
                // Same arithmetic as the forward pass. The gradient uses the
                // raw sigmoid: d mask / d d_j = sigma_j * product / gamma
                // holds with the rescaled survival factors too.
                let q_raw = crate::math::sigmoid(-x);
                contributions.push((ti, 1.0 - q_raw));
                running *= (q_raw * MASK_SIGMA_RESCALE).min(1.0);
                if running < MASK_SATURATE {
                    running = 0.0;
                    break;
                }
            }
            if running == 0.0 {
                continue;
            }
            // d mask / d d_j = sigma_j * product / gamma.
            for &(ti, sigma) in &contributions {
                let g_d = g_m * sigma * running / gamma;
                if g_d == 0.0 {
                    continue;
                }
                let tri = mesh.triangles[ti as usize];
                let sv = [projected[tri[0]], projected[tri[1]], projected[tri[2]]];
                let g_scr = signed_distance_2d_vjp(
                    pc,
                    (sv[0].x, sv[0].y),
                    (sv[1].x, sv[1].y),
                    (sv[2].x, sv[2].y),
                    g_d,
                );
                for k in 0..3 {
                    d_screen[tri[k]][0] += g_scr[k][0];
                    d_screen[tri[k]][1] += g_scr[k][1];
                }
            }
        }
    }

    // Pass 3: projection and camera chain per vertex.
    let mut out = SurfaceGrads {
        d_position: vec![Vec3::zeros(); nv],
        d_material,
        d_elevation: 0.0,
        d_azimuth: 0.0,
        d_radius: 0.0,
    };
    for v in 0..nv {
        let needs_projection =
            d_screen[v] != [0.0; 2] || d_depth[v] != 0.0;
        let mut total = d_world[v];
        if needs_projection && projected[v].valid {
            let vjp = cam.project_vjp(
                &mesh.positions[v],
                d_screen[v][0],
                d_screen[v][1],
                d_depth[v],
            );
            total += vjp.d_point;
            out.d_elevation += vjp.d_elevation;
            out.d_azimuth += vjp.d_azimuth;
            out.d_radius += vjp.d_radius;
        }
        out.d_position[v] = total;
    }
    // Eye movement from shading view directions.
    out.d_elevation += d_eye.dot(&cam.d_eye_d_elevation);
    out.d_azimuth += d_eye.dot(&cam.d_eye_d_azimuth);
    out.d_radius += d_eye.dot(&cam.d_eye_d_radius);

    Ok(out)
}

#[inline]
fn edge_fn(a: (f64, f64), b: (f64, f64), x: (f64, f64)) -> f64 {
    (b.0 - a.0) * (x.1 - a.1) - (b.1 - a.1) * (x.0 - a.0)
}

fn barycentric(sv: &[ScreenVertex; 3], pc: (f64, f64), area2: f64) -> Option<[f64; 3]> {
    let l = barycentric_unclamped(sv, pc, area2);
    if l.iter().all(|&v| v >= -1e-12) {
        Some(l)
    } else {
        None
    }
}

fn barycentric_unclamped(sv: &[ScreenVertex; 3], pc: (f64, f64), area2: f64) -> [f64; 3] {
    let n_a = edge_fn((sv[1].x, sv[1].y), (sv[2].x, sv[2].y), pc);
    let n_b = edge_fn((sv[2].x, sv[2].y), (sv[0].x, sv[0].y), pc);
    let n_c = edge_fn((sv[0].x, sv[0].y), (sv[1].x, sv[1].y), pc);
    [n_a / area2, n_b / area2, n_c / area2]
}

/// VJP of the perspective-correct weights `w_i = (l_i/d_i) / sum_j (l_j/d_j)`.
fn weights_vjp(lambda: &[f64; 3], depth: &[f64; 3], d_w: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let wt = [
        lambda[0] / depth[0],
        lambda[1] / depth[1],
        lambda[2] / depth[2],
    ];
    let s: f64 = wt.iter().sum();
    let w = [wt[0] / s, wt[1] / s, wt[2] / s];
    let dot: f64 = (0..3).map(|k| d_w[k] * w[k]).sum();
    let mut d_lambda = [0.0; 3];
    let mut d_depth = [0.0; 3];
    for k in 0..3 {
        let d_wt = (d_w[k] - dot) / s;
        d_lambda[k] = d_wt / depth[k];
        d_depth[k] = -d_wt * lambda[k] / (depth[k] * depth[k]);
    }
    (d_lambda, d_depth)
}

/// VJP of screen-space barycentrics with respect to the three screen
/// positions (the pixel is fixed).
fn barycentric_vjp(sv: &[ScreenVertex; 3], pc: (f64, f64), d_lambda: &[f64; 3]) -> [[f64; 2]; 3] {
    let a = (sv[0].x, sv[0].y);
    let b = (sv[1].x, sv[1].y);
    let c = (sv[2].x, sv[2].y);
    let dd = edge_fn(a, b, c);
    let n = [edge_fn(b, c, pc), edge_fn(c, a, pc), edge_fn(a, b, pc)];

    // dE(p, q, x)/dp = (q.y - x.y, x.x - q.x); dE/dq = (x.y - p.y, p.x - x.x);
    // dE/dx = (p.y - q.y, q.x - p.x).
    let de_dp = |q: (f64, f64), x: (f64, f64)| [q.1 - x.1, x.0 - q.0];
    let de_dq = |p: (f64, f64), x: (f64, f64)| [x.1 - p.1, p.0 - x.0];
    let de_dx = |p: (f64, f64), q: (f64, f64)| [p.1 - q.1, q.0 - p.0];

    // dN/dvertex for each of the three numerators.
    let zero = [0.0, 0.0];
    let dn = [
        // N_a = E(b, c, pc): no dependence on a.
        [zero, de_dp(c, pc), de_dq(b, pc)],
        // N_b = E(c, a, pc).
        [de_dq(c, pc), zero, de_dp(a, pc)],
        // N_c = E(a, b, pc).
        [de_dp(b, pc), de_dq(a, pc), zero],
    ];
    // D = E(a, b, c).
    let d_d = [de_dp(b, c), de_dq(a, c), de_dx(a, b)];

    let mut out = [[0.0f64; 2]; 3];
    for i in 0..3 {
        if d_lambda[i] == 0.0 {
            continue;
        }
        let gi = d_lambda[i];
        for v in 0..3 {
            for c2 in 0..2 {
                out[v][c2] += gi * (dn[i][v][c2] / dd - n[i] * d_d[v][c2] / (dd * dd));
            }
        }
    }
    out
}

/// Signed 2D distance from point `p` to triangle (a, b, c): positive inside,
/// negative outside, zero on the boundary.
pub fn signed_distance_2d(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let c1 = edge_fn(a, b, p);
    let c2 = edge_fn(b, c, p);
    let c3 = edge_fn(c, a, p);
    let inside = (c1 > 0.0 && c2 > 0.0 && c3 > 0.0) || (c1 < 0.0 && c2 < 0.0 && c3 < 0.0);
    let d = segment_distance(p, a, b)
        .0
        .min(segment_distance(p, b, c).0)
        .min(segment_distance(p, c, a).0);
    if inside {
        d
    } else {
        -d
    }
}

/// (distance, clamped parameter) from `p` to segment (u, v).
fn segment_distance(p: (f64, f64), u: (f64, f64), v: (f64, f64)) -> (f64, f64) {
    let ex = v.0 - u.0;
    let ey = v.1 - u.1;
    let l2 = ex * ex + ey * ey;
    let t = if l2 < 1e-30 {
        0.0
    } else {
        (((p.0 - u.0) * ex + (p.1 - u.1) * ey) / l2).clamp(0.0, 1.0)
    };
    let cx = u.0 + t * ex;
    let cy = u.1 + t * ey;
    (((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt(), t)
}

/// VJP of [`signed_distance_2d`] with respect to the three triangle
/// vertices, scaled by `g`.
pub fn signed_distance_2d_vjp(
    p: (f64, f64),
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    g: f64,
) -> [[f64; 2]; 3] {
    let c1 = edge_fn(a, b, p);
    let c2 = edge_fn(b, c, p);
    let c3 = edge_fn(c, a, p);
    let inside = (c1 > 0.0 && c2 > 0.0 && c3 > 0.0) || (c1 < 0.0 && c2 < 0.0 && c3 < 0.0);
    let sign = if inside { 1.0 } else { -1.0 };

    let edges: [((f64, f64), (f64, f64), usize, usize); 3] =
        [(a, b, 0, 1), (b, c, 1, 2), (c, a, 2, 0)];
    let mut best = f64::INFINITY;
    let mut best_edge = 0usize;
    let mut best_t = 0.0;
    for (k, &(u, v, _, _)) in edges.iter().enumerate() {
        let (d, t) = segment_distance(p, u, v);
        if d < best {
            best = d;
            best_edge = k;
            best_t = t;
        }
    }
    let mut out = [[0.0f64; 2]; 3];
    if best <= 1e-12 {
        return out; // on the boundary: subgradient zero
    }
    let (u, v, iu, iv) = edges[best_edge];
    let t = best_t;
    let cx = u.0 + t * (v.0 - u.0);
    let cy = u.1 + t * (v.1 - u.1);
    // Unit vector from closest point toward p; distance decreases when the
    // closest point moves toward p.
    let nx = (p.0 - cx) / best;
    let ny = (p.1 - cy) / best;
    // d dist / d u = -(1-t) n, d dist / d v = -t n.
    out[iu][0] = g * sign * (-(1.0 - t) * nx);
    out[iu][1] = g * sign * (-(1.0 - t) * ny);
    out[iv][0] = g * sign * (-t * nx);
    out[iv][1] = g * sign * (-t * ny);
    out
}

fn boundary_flags(hits: &[i32], zbuf: &[f64], w: usize, h: usize) -> Vec<bool> {
    let mut disc = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let here_hit = hits[idx] >= 0;
            let here_z = zbuf[idx];
            let mut is_disc = false;
            for (dx, dy) in [(1i64, 0i64), (0, 1), (1, 1), (1, -1)] {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                let there_hit = hits[nidx] >= 0;
                if here_hit != there_hit {
                    is_disc = true;
                    break;
                }
                if here_hit && there_hit {
                    let dz = (here_z - zbuf[nidx]).abs();
                    if dz > DEPTH_JUMP_REL * here_z.min(zbuf[nidx]) {
                        is_disc = true;
                        break;
                    }
                }
            }
            if is_disc {
                disc[idx] = true;
                // Mark the neighbor too so both sides are covered.
            }
        }
    }
    // Dilate by the boundary radius.
    let r = BOUNDARY_DILATE as i64;
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    let nx = x + dx;
                    let ny = y + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    if disc[ny as usize * w + nx as usize] {
                        out[(y * w as i64 + x) as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    out
}
