// Debug: per-pixel rgb elevation-gradient, analytic vs FD.
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
        field.pbr[i].k_d = Vec3::new(0.5, 0.5, 0.5);
    }
    let intr = Intrinsics::default_square(64);
    let env = EnvironmentLight::gradient_sky();
    let params = RenderParams::default();
    let mut mesh = marching_tetrahedra(&grid, &field).unwrap();
    attach_surface_attributes(&grid, &field, &mut mesh).unwrap();
    let mats = mesh.materials.clone().unwrap();

    let render_at = |el: f64| {
        let pose = CameraPose::new(el, 40.0, 2.3).unwrap();
        let cam = camera_from_spherical(&pose, &intr);
        render_forward(&mesh, &mats, &cam, &env, &params).unwrap()
    };
    let h = 1e-3;
    let base = render_at(18.0);
    let fp = render_at(18.0 + h);
    let fm = render_at(18.0 - h);

    let pose = CameraPose::new(18.0, 40.0, 2.3).unwrap();
    let cam = camera_from_spherical(&pose, &intr);

    // Sample interior pixels.
    let mut count_bad = 0;
    let mut shown = 0;
    for y in 0..64 {
        for x in 0..64 {
            let m = base.output.mask.get(x, y);
            // Ring pixels: partial coverage, not boundary-flagged.
            if base.output.boundary[y * 64 + x] || !(1e-6..0.9999).contains(&m) {
                continue;
            }
            let c = 0; // red channel
            let fd = (fp.output.rgb.pixel(x, y)[c] - fm.output.rgb.pixel(x, y)[c]) / (2.0 * h);
            let mut d_rgb = Image::new(64, 64);
            d_rgb.data[(y * 64 + x) * 3 + c] = 1.0;
            let d_mask = Mask::new(64, 64);
            let surf = render_backward_surface(
                &mesh, &mats, &cam, &env, &params, &base, &d_rgb, &d_mask,
            )
            .unwrap();
            let an = surf.d_elevation;
            let rel = (an - fd).abs() / fd.abs().max(1e-8);
            if rel > 1e-2 && (an - fd).abs() > 1e-7 {
                count_bad += 1;
                if shown < 15 {
                    let hit = base.output.depth.get(x, y).is_finite();
                    println!("BAD ({x:2},{y:2}) mask {m:.5} hit {hit}: analytic {an:+.6e} fd {fd:+.6e}");
                    shown += 1;
                }
            }
        }
    }
    println!("bad interior pixels: {count_bad}");
}
