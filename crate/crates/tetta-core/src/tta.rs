//! Two-stage test-time adaptation: radius pre-optimization against the
//! reference mask, then joint optimization of shape, materials, and the
//! virtual camera against photometric, mask, regularization, and
//! score-distillation signals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::camera::{camera_from_spherical, sample_novel_views, CameraPose, Intrinsics};
use crate::env::EnvironmentLight;
use crate::grid::{build_grid, FieldParams, TetGrid};
use crate::image::{Image, Mask};
use crate::losses::{laplacian_loss, mask_loss, photometric_loss, sdf_regularizer};
use crate::marching::{attach_surface_attributes, marching_tetrahedra};
use crate::math::{split_seed, Aabb, Vec3};
use crate::mesh::TriangleMesh;
use crate::metrics::mesh_chamfer;
use crate::optim::AdamW;
use crate::render::{render_backward, render_backward_surface, render_forward, RenderGrads, RenderParams};
use crate::sdf::fit_field_to_mesh;
use crate::sds::{sds_gradient, Condition, DiffusionSchedule, NoisePredictor};
use crate::{Error, Result};

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sds: f64,
    pub photo: f64,
    pub mask: f64,
    pub reg: f64,
    pub lap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sds: 1.0,
            photo: 100.0,
            mask: 50.0,
            reg: 0.1,
            lap: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sds, self.photo, self.mask, self.reg, self.lap];
        if all.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TTAConfig {
    pub grid_resolution: usize,
    pub bounds: Aabb,
    pub stage_a_iters: usize,
    pub stage_b_iters: usize,
    pub views_per_iter: usize,
    pub lr_geometry: f64,
    pub lr_texture: f64,
    pub lr_camera: f64,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub learn_camera: bool,
    pub intrinsics: Intrinsics,
    pub render: RenderParams,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Noise level sampling range as fractions of the schedule length.
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub fit_points: usize,
    pub fit_iters: usize,
    pub fit_lr: f64,
    /// Record Chamfer against the ground truth every this many iterations
    /// (0 disables; requires a ground-truth mesh input).
    pub eval_every: usize,
    pub chamfer_points: usize,
}

impl Default for TTAConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 64,
            bounds: Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
            stage_a_iters: 200,
            stage_b_iters: 2000,
            views_per_iter: 8,
            lr_geometry: 1e-3,
            lr_texture: 1e-3,
            lr_camera: 1e-2,
            clip_norm: 1.0,
            weights: LossWeights::default(),
            seed: 0,
            learn_camera: true,
            intrinsics: Intrinsics::default(),
            render: RenderParams::default(),
            schedule_steps: 1000,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
            t_min_frac: 0.02,
            t_max_frac: 0.98,
            fit_points: 20_000,
            fit_iters: 0,
            fit_lr: 0.3,
            eval_every: 0,
            chamfer_points: 10_000,
        }
    }
}

pub struct TTAInputs<'a> {
    pub coarse_mesh: &'a TriangleMesh,
    pub initial_pose: CameraPose,
    pub reference_image: &'a Image,
    pub reference_mask: &'a Mask,
    pub predictor: &'a dyn NoisePredictor,
    pub env: &'a EnvironmentLight,
    /// Optional ground truth for Chamfer history.
    pub ground_truth: Option<&'a TriangleMesh>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageARecord {
    pub iter: usize,
    pub mask_loss: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub total: f64,
    pub photo: f64,
    pub mask: f64,
    pub reg: f64,
    pub lap: f64,
    /// Mean absolute SDS pixel gradient across the novel views.
    pub sds: f64,
    pub elevation: f64,
    pub azimuth: f64,
    pub radius: f64,
    pub chamfer: Option<f64>,
}

pub struct TTAResult {
    pub mesh: TriangleMesh,
    pub pose: CameraPose,
    pub grid: TetGrid,
    pub field: FieldParams,
    pub stage_a: Vec<StageARecord>,
    pub history: Vec<IterationRecord>,
    pub fit_loss: f64,
}

/// Runs the full pipeline: fit the field to the coarse mesh, settle the
/// camera radius against the reference mask, then jointly optimize
/// everything.
pub fn run_tta(config: &TTAConfig, inputs: &TTAInputs<'_>) -> Result<TTAResult> {
    config.weights.validate()?;
    if inputs.reference_image.width != config.intrinsics.width
        || inputs.reference_image.height != config.intrinsics.height
    {
        return Err(Error::Config(
            "reference image dimensions do not match intrinsics".into(),
        ));
    }
    inputs
        .reference_mask
        .check_same_shape(&Mask::new(config.intrinsics.width, config.intrinsics.height), "reference mask")?;
    inputs.env.check_prefiltered()?;

    let res = config.grid_resolution;
    let grid = build_grid([res, res, res], config.bounds)?;
    let (mut field, fit_report) = fit_field_to_mesh(
        &grid,
        inputs.coarse_mesh,
        config.fit_points,
        config.fit_iters,
        config.fit_lr,
    )?;

    let mut pose = inputs.initial_pose;

    // Stage A: settle the radius against the reference mask, geometry frozen.
    let mut stage_a = Vec::with_capacity(config.stage_a_iters);
    if config.stage_a_iters > 0 {
        let mut mesh = marching_tetrahedra(&grid, &field)?;
        attach_surface_attributes(&grid, &field, &mut mesh)?;
        if mesh.is_empty() {
            return Err(Error::NonFinite {
                iter: 0,
                snapshot: "initial field produced an empty mesh".into(),
            });
        }
        let materials = mesh.materials.clone().unwrap();
        let mut opt = AdamW::new(vec![("radius".into(), 1, config.lr_camera)], config.clip_norm);
        for iter in 0..config.stage_a_iters {
            let cam = camera_from_spherical(&pose, &config.intrinsics);
            let frame = render_forward(&mesh, &materials, &cam, inputs.env, &config.render)?;
            let (loss, d_mask) = mask_loss(&frame.output.mask, inputs.reference_mask)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    iter,
                    snapshot: format!("stage A mask loss diverged (radius {})", pose.radius),
                });
            }
            let zero_rgb = Image::new(frame.output.rgb.width, frame.output.rgb.height);
            let surf = render_backward_surface(
                &mesh,
                &materials,
                &cam,
                inputs.env,
                &config.render,
                &frame,
                &zero_rgb,
                &d_mask,
            )?;
            let mut radius = [pose.radius];
            let grads = [surf.d_radius];
            opt.step(&mut [&mut radius], &[&grads])?;
            pose.radius = radius[0].max(0.05);
            stage_a.push(StageARecord {
                iter,
                mask_loss: loss,
                radius: pose.radius,
            });
        }
    }

    // Stage B: joint optimization.
    let schedule = crate::sds::make_schedule(config.schedule_steps, config.beta_start, config.beta_end)?;
    let history = stage_b(config, inputs, &grid, &mut field, &mut pose, &schedule)?;

    let mut mesh = marching_tetrahedra(&grid, &field)?;
    attach_surface_attributes(&grid, &field, &mut mesh)?;
    Ok(TTAResult {
        mesh,
        pose,
        grid,
        field,
        stage_a,
        history,
        fit_loss: fit_report.final_loss,
    })
}

struct PreparedView {
    pose: CameraPose,
    rel: crate::camera::RelativeView,
    t: usize,
    eps_seed: u64,
}

fn stage_b(
    config: &TTAConfig,
    inputs: &TTAInputs<'_>,
    grid: &TetGrid,
    field: &mut FieldParams,
    pose: &mut CameraPose,
    schedule: &DiffusionSchedule,
) -> Result<Vec<IterationRecord>> {
    let n_vertices = grid.vertex_count();
    let w = config.weights;
    let mut opt = AdamW::new(
        vec![
            ("sdf".into(), n_vertices, config.lr_geometry),
            ("deform".into(), n_vertices * 3, config.lr_geometry),
            ("pbr".into(), n_vertices * 8, config.lr_texture),
            ("pose".into(), 3, config.lr_camera),
        ],
        config.clip_norm,
    );

    let t_lo = ((config.t_min_frac * config.schedule_steps as f64).ceil() as usize).max(1);
    let t_hi = ((config.t_max_frac * config.schedule_steps as f64).floor() as usize)
        .min(config.schedule_steps)
        .max(t_lo);

    let mut history = Vec::with_capacity(config.stage_b_iters);
    for iter in 0..config.stage_b_iters {
        let mut mesh = marching_tetrahedra(grid, field)?;
        attach_surface_attributes(grid, field, &mut mesh)?;
        if mesh.is_empty() {
            return Err(Error::NonFinite {
                iter,
                snapshot: "geometry collapsed: marching tetrahedra produced no surface".into(),
            });
        }
        let materials = mesh.materials.clone().unwrap();
        let cam_ref = camera_from_spherical(pose, &config.intrinsics);

        // Reference view: photometric + mask.
        let frame = render_forward(&mesh, &materials, &cam_ref, inputs.env, &config.render)?;
        let (photo, mut d_rgb) = photometric_loss(&frame.output.rgb, inputs.reference_image)?;
        let (mask_l, mut d_mask) = mask_loss(&frame.output.mask, inputs.reference_mask)?;
        for v in &mut d_rgb.data {
            *v *= w.photo;
        }
        for v in &mut d_mask.data {
            *v *= w.mask;
        }
        let mut grads = render_backward(
            grid,
            field,
            &mesh,
            &materials,
            &cam_ref,
            inputs.env,
            &config.render,
            &frame,
            &d_rgb,
            &d_mask,
        )?;

        // Novel views through the prior. Randomness is drawn up front so the
        // parallel evaluation stays deterministic.
        let view_seed = split_seed(config.seed, 0x5b0 + iter as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(view_seed);
        let prepared: Vec<PreparedView> = sample_novel_views(pose, config.views_per_iter, view_seed)
            .into_iter()
            .map(|(_, rel_raw)| {
                let rel = inputs.predictor.snap_condition(rel_raw);
                let mut composed = pose.compose(&rel);
                composed.elevation = composed.elevation.clamp(-89.0, 89.0);
                PreparedView {
                    pose: composed,
                    rel,
                    t: rng.gen_range(t_lo..=t_hi),
                    eps_seed: rng.gen(),
                }
            })
            .collect();

        let view_results: Vec<Result<(RenderGrads, f64)>> = prepared
            .par_iter()
            .map(|view| {
                let cam = camera_from_spherical(&view.pose, &config.intrinsics);
                let frame = render_forward(&mesh, &materials, &cam, inputs.env, &config.render)?;
                let mut eps = Image::new(frame.output.rgb.width, frame.output.rgb.height);
                let mut eps_rng = ChaCha12Rng::seed_from_u64(view.eps_seed);
                for v in &mut eps.data {
                    *v = eps_rng.sample(StandardNormal);
                }
                let cond = Condition {
                    reference: inputs.reference_image,
                    rel_view: view.rel,
                };
                let mut g = sds_gradient(
                    &frame.output.rgb,
                    &cond,
                    view.t,
                    &eps,
                    inputs.predictor,
                    schedule,
                )?;
                let surrogate =
                    g.data.iter().map(|v| v.abs()).sum::<f64>() / g.data.len() as f64;
                for v in &mut g.data {
                    *v *= w.sds;
                }
                let zero_mask = Mask::new(g.width, g.height);
                let view_grads = render_backward(
                    grid,
                    field,
                    &mesh,
                    &materials,
                    &cam,
                    inputs.env,
                    &config.render,
                    &frame,
                    &g,
                    &zero_mask,
                )?;
                Ok((view_grads, surrogate))
            })
            .collect();

        let mut sds_surrogate = 0.0;
        for r in view_results {
            let (vg, s) = r?;
            grads.add_assign(&vg);
            sds_surrogate += s;
        }
        if config.views_per_iter > 0 {
            sds_surrogate /= config.views_per_iter as f64;
        }

        // Field regularizers.
        let (reg, d_reg) = sdf_regularizer(field, grid)?;
        let (lap, d_lap) = laplacian_loss(field, grid)?;
        for (g, (r, l)) in grads
            .field
            .d_sdf
            .iter_mut()
            .zip(d_reg.iter().zip(d_lap.iter()))
        {
            *g += w.reg * r + w.lap * l;
        }

        let total = w.photo * photo + w.mask * mask_l + w.reg * reg + w.lap * lap
            + w.sds * sds_surrogate;
        if !total.is_finite() {
            return Err(Error::NonFinite {
                iter,
                snapshot: format!(
                    "photo {photo}, mask {mask_l}, reg {reg}, lap {lap}, sds {sds_surrogate}, \
                     pose ({}, {}, {})",
                    pose.elevation, pose.azimuth, pose.radius
                ),
            });
        }

        // Flatten, step, write back, clamp.
        let mut flat_deform = flatten_vec3(&field.deform);
        let mut flat_pbr = flatten_pbr(field);
        let mut flat_pose = [pose.elevation, pose.azimuth, pose.radius];
        let g_deform = flatten_vec3(&grads.field.d_deform);
        let g_pbr = flatten_pbr_grads(&grads.field.d_pbr);
        let g_pose = if config.learn_camera {
            [grads.d_elevation, grads.d_azimuth, grads.d_radius]
        } else {
            [0.0; 3]
        };
        opt.step(
            &mut [
                &mut field.sdf,
                &mut flat_deform,
                &mut flat_pbr,
                &mut flat_pose,
            ],
            &[&grads.field.d_sdf, &g_deform, &g_pbr, &g_pose],
        )?;
        unflatten_vec3(&flat_deform, &mut field.deform);
        unflatten_pbr(&flat_pbr, field);
        field.clamp_domains(grid);
        pose.elevation = flat_pose[0].clamp(-85.0, 85.0);
        pose.azimuth = crate::math::wrap_angle_360(flat_pose[1]);
        pose.radius = flat_pose[2].max(0.05);

        let chamfer = match (inputs.ground_truth, config.eval_every) {
            (Some(gt), every) if every > 0 && (iter % every == 0 || iter + 1 == config.stage_b_iters) => {
                let mut m = marching_tetrahedra(grid, field)?;
                m.provenance = None;
                if m.is_empty() {
                    None
                } else {
                    Some(mesh_chamfer(&m, gt, config.chamfer_points.min(4000), split_seed(config.seed, 77))?)
                }
            }
            _ => None,
        };

        history.push(IterationRecord {
            iter,
            total,
            photo,
            mask: mask_l,
            reg,
            lap,
            sds: sds_surrogate,
            elevation: pose.elevation,
            azimuth: pose.azimuth,
            radius: pose.radius,
            chamfer,
        });
    }
    Ok(history)
}

fn flatten_vec3(v: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() * 3);
    for p in v {
        out.extend_from_slice(&[p.x, p.y, p.z]);
    }
    out
}

fn unflatten_vec3(flat: &[f64], out: &mut [Vec3]) {
    for (i, p) in out.iter_mut().enumerate() {
        p.x = flat[i * 3];
        p.y = flat[i * 3 + 1];
        p.z = flat[i * 3 + 2];
    }
}

fn flatten_pbr(field: &FieldParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(field.pbr.len() * 8);
    for m in &field.pbr {
        out.extend_from_slice(&[
            m.k_d.x,
            m.k_d.y,
            m.k_d.z,
            m.roughness,
            m.metal,
            m.k_n.x,
            m.k_n.y,
            m.k_n.z,
        ]);
    }
    out
}

fn unflatten_pbr(flat: &[f64], field: &mut FieldParams) {
    for (i, m) in field.pbr.iter_mut().enumerate() {
        let b = i * 8;
        m.k_d.x = flat[b];
        m.k_d.y = flat[b + 1];
        m.k_d.z = flat[b + 2];
        m.roughness = flat[b + 3];
        m.metal = flat[b + 4];
        m.k_n.x = flat[b + 5];
        m.k_n.y = flat[b + 6];
        m.k_n.z = flat[b + 7];
    }
}

fn flatten_pbr_grads(grads: &[crate::shading::MaterialGrad]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grads.len() * 8);
    for g in grads {
        out.extend_from_slice(&[
            g.d_kd.x,
            g.d_kd.y,
            g.d_kd.z,
            g.d_roughness,
            g.d_metal,
            g.d_kn.x,
            g.d_kn.y,
            g.d_kn.z,
        ]);
    }
    out
}
