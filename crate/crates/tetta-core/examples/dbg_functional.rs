// Debug: localize the analytic-vs-FD discrepancy of the rgb functional.
use rand::Rng;
use rand::SeedableRng;
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
        let m = &mut field.pbr[i];
        m.k_d = Vec3::new(
            0.3 + 0.3 * (0.5 + 0.5 * (1.7 * v.x).sin()),
            0.35 + 0.25 * (0.5 + 0.5 * (2.3 * v.y).sin()),
            0.4 + 0.2 * (0.5 + 0.5 * (1.1 * v.z).sin()),
        );
        m.roughness = 0.4 + 0.2 * (0.5 + 0.5 * (v.x + v.y).sin());
        m.metal = 0.2 + 0.15 * (0.5 + 0.5 * (v.z - v.x).sin());
        m.k_n = Vec3::new(0.0, 0.0, 1.0);
    }
    let intr = Intrinsics::default_square(64);
    let env = EnvironmentLight::gradient_sky();
    let params = RenderParams::default();
    let mut mesh = marching_tetrahedra(&grid, &field).unwrap();
    attach_surface_attributes(&grid, &field, &mut mesh).unwrap();
    let mats = mesh.materials.clone().unwrap();

    let render_at = |r: f64| {
        let pose = CameraPose::new(18.0, 40.0, r).unwrap();
        let cam = camera_from_spherical(&pose, &intr);
        render_forward(&mesh, &mats, &cam, &env, &params).unwrap()
    };
    let h = 1e-4;
    let base = render_at(2.3);
    let fp = render_at(2.3 + h);
    let fm = render_at(2.3 - h);
    let valid: Vec<bool> = base.output.boundary.iter().map(|b| !b).collect();

    let mut weights = Image::new(64, 64);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);
    for (p, v) in weights.data.iter_mut().enumerate() {
        *v = if valid[p / 3] {
            rng.gen::<f64>() * 2.0 - 1.0
        } else {
            rng.gen::<f64>();
            0.0
        };
    }

    let pose = CameraPose::new(18.0, 40.0, 2.3).unwrap();
    let cam = camera_from_spherical(&pose, &intr);

    let mut total_an = 0.0;
    let mut total_fd = 0.0;
    let mut worst: Vec<(f64, usize, usize, f64, f64)> = Vec::new();
    for y in 0..64 {
        for x in 0..64 {
            let idx = y * 64 + x;
            if !valid[idx] {
                continue;
            }
            let wpx = [
                weights.data[idx * 3],
                weights.data[idx * 3 + 1],
                weights.data[idx * 3 + 2],
            ];
            if wpx == [0.0; 3] {
                continue;
            }
            let fd: f64 = (0..3)
                .map(|c| {
                    wpx[c] * (fp.output.rgb.pixel(x, y)[c] - fm.output.rgb.pixel(x, y)[c])
                        / (2.0 * h)
                })
                .sum();
            let mut d_rgb = Image::new(64, 64);
            d_rgb.data[idx * 3..idx * 3 + 3].copy_from_slice(&wpx);
            let d_mask = Mask::new(64, 64);
            let surf = render_backward_surface(
                &mesh, &mats, &cam, &env, &params, &base, &d_rgb, &d_mask,
            )
            .unwrap();
            let an = surf.d_radius;
            total_an += an;
            total_fd += fd;
            let err = (an - fd).abs();
            if err > 1e-6 {
                worst.push((err, x, y, an, fd));
            }
        }
    }
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("total analytic {total_an:+.6e} total fd {total_fd:+.6e}");
    for &(err, x, y, an, fd) in worst.iter().take(15) {
        let m = base.output.mask.get(x, y);
        let hit = base.output.depth.get(x, y).is_finite();
        println!("  ({x:2},{y:2}) err {err:.3e} an {an:+.4e} fd {fd:+.4e} mask {m:.6} hit {hit}");
    }
    println!("pixels with err > 1e-6: {}", worst.len());
}
