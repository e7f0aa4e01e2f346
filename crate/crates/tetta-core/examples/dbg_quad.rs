use tetta_core::camera::{camera_from_spherical, CameraPose, Intrinsics};
use tetta_core::env::EnvironmentLight;
use tetta_core::render::{render, RenderParams};
use tetta_core::shading::MaterialSample;
use tetta_core::shapes;

fn main() {
    let mut mesh = shapes::quad(1.0);
    mesh.materials = Some(vec![MaterialSample::default(); 4]);
    let mats = mesh.materials.clone().unwrap();
    let pose = CameraPose::new(0.0, 0.0, 2.0).unwrap();
    let cam = camera_from_spherical(&pose, &Intrinsics::default_square(64));
    let env = EnvironmentLight::uniform([1.0, 1.0, 1.0]);
    let out = render(&mesh, &mats, &cam, &env, &RenderParams::default()).unwrap();
    let mut max = 0.0f64;
    for v in &out.mask.data {
        max = max.max(*v);
    }
    println!("max mask {max}");
    for y in [10, 20, 32, 48] {
        let row: Vec<String> = (8..56).step_by(6).map(|x| format!("{:.4}", out.mask.get(x, y))).collect();
        println!("row {y}: {}", row.join(" "));
    }
    println!("depth center {}", out.depth.get(32, 32));
    println!("rgb center {:?}", out.rgb.pixel(32, 32));
    println!("hit coverage: {}", out.depth.data.iter().filter(|d| d.is_finite()).count());
}
