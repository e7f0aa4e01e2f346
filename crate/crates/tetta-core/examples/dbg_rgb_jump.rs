// Debug: locate pixels whose rgb jumps under a tiny camera change.
use tetta_core::camera::{camera_from_spherical, CameraPose, Intrinsics};
use tetta_core::env::EnvironmentLight;
use tetta_core::grid::{build_grid, FieldParams};
use tetta_core::marching::{attach_surface_attributes, marching_tetrahedra};
use tetta_core::math::{Aabb, Vec3};
use tetta_core::render::{render_forward, RenderParams};
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

    let mut jumps: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            if base.output.boundary[y * 64 + x] {
                continue;
            }
            let a = fp.output.rgb.pixel(x, y);
            let b = fm.output.rgb.pixel(x, y);
            let d = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0f64, f64::max);
            jumps.push((d, x, y));
        }
    }
    jumps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("top valid-pixel |rgb(el+h) - rgb(el-h)| (h = {h}):");
    for &(d, x, y) in jumps.iter().take(12) {
        let m = base.output.mask.get(x, y);
        let z = base.output.depth.get(x, y);
        println!(
            "  px ({x:2},{y:2}) jump {d:.3e} mask {m:.6} depth {z:.4}"
        );
    }
    // Expected smooth scale: |d rgb/d el| * 2h.
    let median = jumps[jumps.len() / 2].0;
    println!("median {median:.3e}");
}
