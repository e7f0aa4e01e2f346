// Debug: per-pixel soft-mask derivative w.r.t. camera elevation.
use tetta_core::camera::{camera_from_spherical, CameraPose, Intrinsics};
use tetta_core::env::EnvironmentLight;
use tetta_core::grid::{build_grid, FieldParams};
use tetta_core::image::{Image, Mask};
use tetta_core::marching::{attach_surface_attributes, marching_tetrahedra};
use tetta_core::math::{Aabb, Vec3};
use tetta_core::render::{render_backward_surface, render_forward, RenderParams};
use tetta_core::shapes;

fn main() {
    let grid = build_grid(
        [8, 8, 8],
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
    )
    .unwrap();
    let mut field = FieldParams::new(grid.vertex_count());
    for (i, v) in grid.vertices.iter().enumerate() {
        field.sdf[i] = shapes::sdf::sphere(v, 0.55);
    }
    let intr = Intrinsics::default_square(64);
    let env = EnvironmentLight::uniform([1.0, 1.0, 1.0]);
    let params = RenderParams::default();

    let mask_at = |pose: &CameraPose| -> Mask {
        let mut mesh = marching_tetrahedra(&grid, &field).unwrap();
        attach_surface_attributes(&grid, &field, &mut mesh).unwrap();
        let mats = mesh.materials.clone().unwrap();
        let cam = camera_from_spherical(pose, &intr);
        render_forward(&mesh, &mats, &cam, &env, &params)
            .unwrap()
            .output
            .mask
    };

    let pose = CameraPose::new(18.0, 40.0, 2.3).unwrap();
    let base = mask_at(&pose);

    // Band pixels: mask strictly inside (0,1).
    let mut band: Vec<(usize, usize)> = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            let m = base.get(x, y);
            if m > 1e-6 && m < 0.9999 {
                band.push((x, y));
            }
        }
    }
    println!("band pixels: {}", band.len());

    let h = 1e-3;
    let pp = CameraPose::new(pose.elevation + h, pose.azimuth, pose.radius).unwrap();
    let pm = CameraPose::new(pose.elevation - h, pose.azimuth, pose.radius).unwrap();
    let mp = mask_at(&pp);
    let mm = mask_at(&pm);

    let mut mesh = marching_tetrahedra(&grid, &field).unwrap();
    attach_surface_attributes(&grid, &field, &mut mesh).unwrap();
    let mats = mesh.materials.clone().unwrap();
    let cam = camera_from_spherical(&pose, &intr);
    let frame = render_forward(&mesh, &mats, &cam, &env, &params).unwrap();

    let mut bad = 0;
    for &(x, y) in band.iter().step_by(7).take(30) {
        let fd = (mp.get(x, y) - mm.get(x, y)) / (2.0 * h);
        let mut d_mask = Mask::new(64, 64);
        d_mask.set(x, y, 1.0);
        let d_rgb = Image::new(64, 64);
        let surf = render_backward_surface(
            &mesh, &mats, &cam, &env, &params, &frame, &d_rgb, &d_mask,
        )
        .unwrap();
        let an = surf.d_elevation;
        let rel = (an - fd).abs() / fd.abs().max(1e-9);
        let flag = if rel > 1e-2 && (an - fd).abs() > 1e-7 {
            bad += 1;
            "BAD"
        } else {
            "ok "
        };
        println!(
            "{flag} px ({x:2},{y:2}) mask {:.4}: analytic {an:+.6e} fd {fd:+.6e} rel {rel:.2e}",
            base.get(x, y)
        );
    }
    println!("bad: {bad}");
}
