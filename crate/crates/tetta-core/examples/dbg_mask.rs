// Debug: FD check of signed_distance_2d_vjp and a single-pixel mask derivative.
use tetta_core::render::{signed_distance_2d, signed_distance_2d_vjp};

fn main() {
    let p = (10.3, 7.2);
    let tris = [
        ((3.0, 2.0), (14.0, 4.5), (8.0, 12.0)),   // p inside-ish
        ((12.0, 9.0), (20.0, 10.0), (15.0, 18.0)), // p outside
        ((10.0, 7.0), (11.0, 7.1), (10.5, 8.0)),   // small triangle near p
    ];
    let h = 1e-6;
    for (a, b, c) in tris {
        let g = signed_distance_2d_vjp(p, a, b, c, 1.0);
        let verts = [a, b, c];
        for vi in 0..3 {
            for ci in 0..2 {
                let mut vp = verts;
                let mut vm = verts;
                if ci == 0 { vp[vi].0 += h; vm[vi].0 -= h; } else { vp[vi].1 += h; vm[vi].1 -= h; }
                let fp = signed_distance_2d(p, vp[0], vp[1], vp[2]);
                let fm = signed_distance_2d(p, vm[0], vm[1], vm[2]);
                let fd = (fp - fm) / (2.0 * h);
                let an = g[vi][ci];
                let err = (an - fd).abs();
                if err > 1e-5 {
                    println!("MISMATCH tri {:?} v{} c{}: analytic {an:.8} fd {fd:.8}", (a,b,c), vi, ci);
                } else {
                    println!("ok        tri v{} c{}: {an:.8} vs {fd:.8}", vi, ci);
                }
            }
        }
    }
}
