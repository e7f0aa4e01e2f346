use tetta_core::camera::{camera_from_spherical, CameraPose, Intrinsics};
use tetta_core::env::EnvironmentLight;
use tetta_core::grid::{build_grid, FieldParams};
use tetta_core::marching::{attach_surface_attributes, marching_tetrahedra};
use tetta_core::math::{Aabb, Vec3};
use tetta_core::render::{render_forward, signed_distance_2d, RenderParams};
use tetta_core::shapes;

fn main() {
    let grid = build_grid(
        [16, 16, 16],
        Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
    )
    .unwrap();
    let mut field = FieldParams::new(grid.vertex_count());
    for (i, v) in grid.vertices.iter().enumerate() {
        field.sdf[i] = shapes::sdf::sphere(v, 0.6);
    }
    let mut mesh = marching_tetrahedra(&grid, &field).unwrap();
    attach_surface_attributes(&grid, &field, &mut mesh).unwrap();
    let mats = mesh.materials.clone().unwrap();
    let pose = CameraPose::new(0.0, 0.0, 0.8).unwrap();
    let cam = camera_from_spherical(&pose, &Intrinsics::default_square(128));
    let env = EnvironmentLight::uniform([1.0, 1.0, 1.0]);
    let frame = render_forward(&mesh, &mats, &cam, &env, &RenderParams::default()).unwrap();
    let (px, py) = (79usize, 48usize);
    println!("mask {}", frame.output.mask.get(px, py));
    println!("depth {}", frame.output.depth.get(px, py));
    // Distances of every triangle to this pixel.
    let pc = (px as f64 + 0.5, py as f64 + 0.5);
    let mut near: Vec<(f64, usize, bool)> = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let sv: Vec<(f64, f64, f64, bool)> = tri
            .iter()
            .map(|&v| {
                let q = cam.to_camera(&mesh.positions[v]);
                let (sx, sy, d) = cam.project_camera_point(&q);
                (sx, sy, d, d > cam.intrinsics.near)
            })
            .collect();
        let valid = sv.iter().all(|s| s.3);
        let d = signed_distance_2d(
            pc,
            (sv[0].0, sv[0].1),
            (sv[1].0, sv[1].1),
            (sv[2].0, sv[2].1),
        );
        if d > -5.0 {
            near.push((d, t, valid));
        }
    }
    near.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(d, t, valid) in near.iter().take(8) {
        println!("tri {t} d {d:+.4} valid {valid}");
    }
}
