//! Scalar losses with analytic gradients: photometric L1, mask L1, the
//! sign-consistency SDF regularizer, and the umbrella-Laplacian smoothness
//! term.

use crate::grid::{FieldParams, TetGrid};
use crate::image::{Image, Mask};
use crate::math::{sigmoid, softplus};
use crate::Result;

/// Mean absolute difference between a rendering and the reference, with the
/// subgradient `sign(x - ref) / (3 H W)` (zero at exact ties).
pub fn photometric_loss(x: &Image, reference: &Image) -> Result<(f64, Image)> {
    photometric_loss_masked(x, reference, None)
}

/// Same as [`photometric_loss`], restricted to pixels where `valid` is true.
/// The normalizer stays `3 H W` so values are comparable across subsets.
pub fn photometric_loss_masked(
    x: &Image,
    reference: &Image,
    valid: Option<&[bool]>,
) -> Result<(f64, Image)> {
    x.check_same_shape(reference, "photometric_loss")?;
    if let Some(v) = valid {
        if v.len() != x.width * x.height {
            return Err(crate::Error::Contract(
                "validity mask length mismatch".into(),
            ));
        }
    }
    let n = (x.data.len()) as f64;
    let mut grad = Image::new(x.width, x.height);
    let mut acc = 0.0;
    for p in 0..x.width * x.height {
        if let Some(v) = valid {
            if !v[p] {
                continue;
            }
        }
        for c in 0..3 {
            let i = p * 3 + c;
            let d = x.data[i] - reference.data[i];
            acc += d.abs();
            grad.data[i] = if d == 0.0 { 0.0 } else { d.signum() / n };
        }
    }
    Ok((acc / n, grad))
}

/// Mean absolute difference between the soft mask and the binary reference.
pub fn mask_loss(mask: &Mask, reference: &Mask) -> Result<(f64, Mask)> {
    mask_loss_masked(mask, reference, None)
}

pub fn mask_loss_masked(
    mask: &Mask,
    reference: &Mask,
    valid: Option<&[bool]>,
) -> Result<(f64, Mask)> {
    mask.check_same_shape(reference, "mask_loss")?;
    if let Some(v) = valid {
        if v.len() != mask.data.len() {
            return Err(crate::Error::Contract(
                "validity mask length mismatch".into(),
            ));
        }
    }
    let n = mask.data.len() as f64;
    let mut grad = Mask::new(mask.width, mask.height);
    let mut acc = 0.0;
    for i in 0..mask.data.len() {
        if let Some(v) = valid {
            if !v[i] {
                continue;
            }
        }
        let d = mask.data[i] - reference.data[i];
        acc += d.abs();
        grad.data[i] = if d == 0.0 { 0.0 } else { d.signum() / n };
    }
    Ok((acc / n, grad))
}

/// Sign-consistency regularizer over grid edges:
/// `sum_(i,j) BCE(sigmoid(s_i), [s_j > 0]) + BCE(sigmoid(s_j), [s_i > 0])`.
/// The sign labels are treated as constants for the gradient.
pub fn sdf_regularizer(field: &FieldParams, grid: &TetGrid) -> Result<(f64, Vec<f64>)> {
    field.check_matches(grid)?;
    let mut grad = vec![0.0; field.sdf.len()];
    let mut acc = 0.0;
    for &(i, j) in &grid.edges {
        let s_i = field.sdf[i];
        let s_j = field.sdf[j];
        let label_j = if s_j > 0.0 { 1.0 } else { 0.0 };
        let label_i = if s_i > 0.0 { 1.0 } else { 0.0 };
        // BCE(sigmoid(x), y) = softplus(x) - y x.
        acc += softplus(s_i) - label_j * s_i;
        acc += softplus(s_j) - label_i * s_j;
        grad[i] += sigmoid(s_i) - label_j;
        grad[j] += sigmoid(s_j) - label_i;
    }
    Ok((acc, grad))
}

/// Mean absolute umbrella Laplacian of the SDF over grid vertices:
/// `(1/N) sum_i | mean_{j in N(i)} s_j - s_i |`.
pub fn laplacian_loss(field: &FieldParams, grid: &TetGrid) -> Result<(f64, Vec<f64>)> {
    field.check_matches(grid)?;
    let n = grid.vertex_count();
    let mut grad = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        let nbrs = &grid.neighbors[i];
        if nbrs.is_empty() {
            continue;
        }
        let mean: f64 = nbrs.iter().map(|&j| field.sdf[j]).sum::<f64>() / nbrs.len() as f64;
        let lap = mean - field.sdf[i];
        acc += lap.abs();
        // Below float noise the sign of `lap` is meaningless; treat it as
        // the tie case of |.| and emit no gradient.
        if lap.abs() > 1e-12 {
            let s = lap.signum() / n as f64;
            grad[i] -= s;
            let w = s / nbrs.len() as f64;
            for &j in nbrs {
                grad[j] += w;
            }
        }
    }
    Ok((acc / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::math::{Aabb, Vec3};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn photometric_identical_is_zero() {
        let img = Image::filled(4, 4, [0.3, 0.4, 0.5]);
        let (l, g) = photometric_loss(&img, &img).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn photometric_single_channel_difference() {
        let a = Image::new(2, 2);
        let mut b = Image::new(2, 2);
        b.data[4] = 0.3;
        let (l, _) = photometric_loss(&a, &b).unwrap();
        assert_relative_eq!(l, 0.3 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn photometric_gradient_matches_fd() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut a = Image::new(3, 3);
        let mut b = Image::new(3, 3);
        for v in &mut a.data {
            *v = rng.gen::<f64>();
        }
        for v in &mut b.data {
            *v = rng.gen::<f64>();
        }
        let (_, g) = photometric_loss(&a, &b).unwrap();
        let h = 1e-7;
        for i in (0..a.data.len()).step_by(5) {
            let orig = a.data[i];
            a.data[i] = orig + h;
            let (lp, _) = photometric_loss(&a, &b).unwrap();
            a.data[i] = orig - h;
            let (lm, _) = photometric_loss(&a, &b).unwrap();
            a.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert_relative_eq!(g.data[i], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn mask_loss_extremes() {
        let a = Mask::filled(4, 4, 1.0);
        let b = Mask::filled(4, 4, 0.0);
        let (l, _) = mask_loss(&a, &b).unwrap();
        assert_eq!(l, 1.0);
        let (l, _) = mask_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn mask_loss_checkerboard_half() {
        let mut a = Mask::new(4, 4);
        let b = Mask::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    a.set(x, y, 1.0);
                }
            }
        }
        let (l, _) = mask_loss(&a, &b).unwrap();
        assert_eq!(l, 0.5);
    }

    fn small_grid() -> TetGrid {
        build_grid(
            [2, 2, 2],
            Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn regularizer_single_edge_values() {
        // Isolate one edge by checking the formula directly on paired values.
        let bce_pair = |s_i: f64, s_j: f64| -> f64 {
            let label_j = if s_j > 0.0 { 1.0 } else { 0.0 };
            let label_i = if s_i > 0.0 { 1.0 } else { 0.0 };
            softplus(s_i) - label_j * s_i + softplus(s_j) - label_i * s_j
        };
        assert_relative_eq!(bce_pair(0.0, 0.0), 2.0 * (2.0f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(bce_pair(10.0, -10.0), 20.0, max_relative = 1e-4);
        assert_relative_eq!(bce_pair(10.0, 10.0), 9.1e-5, max_relative = 2e-2);
    }

    #[test]
    fn regularizer_gradient_matches_fd() {
        let grid = small_grid();
        let mut field = FieldParams::new(grid.vertex_count());
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for s in &mut field.sdf {
            *s = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let (_, g) = sdf_regularizer(&field, &grid).unwrap();
        let h = 1e-6;
        for i in 0..field.sdf.len() {
            if field.sdf[i].abs() < 10.0 * h {
                continue; // labels flip at zero; subgradient region
            }
            let orig = field.sdf[i];
            field.sdf[i] = orig + h;
            let (lp, _) = sdf_regularizer(&field, &grid).unwrap();
            field.sdf[i] = orig - h;
            let (lm, _) = sdf_regularizer(&field, &grid).unwrap();
            field.sdf[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn laplacian_constant_field_is_zero() {
        let grid = small_grid();
        let mut field = FieldParams::new(grid.vertex_count());
        for s in &mut field.sdf {
            *s = 0.7;
        }
        let (l, g) = laplacian_loss(&field, &grid).unwrap();
        // Neighbor means of a constant accumulate a few ulps of dust.
        assert!(l < 1e-14, "constant field laplacian {l}");
        assert!(g.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn laplacian_linear_field_interior_zero() {
        // For a linear field the umbrella at a vertex whose neighbor offsets
        // sum to zero vanishes. The grid's interior vertex qualifies.
        let grid = small_grid();
        let a = Vec3::new(0.3, -0.7, 0.2);
        let mut field = FieldParams::new(grid.vertex_count());
        for (i, v) in grid.vertices.iter().enumerate() {
            field.sdf[i] = a.dot(v);
        }
        let center = grid.vertex_index(1, 1, 1);
        let nbrs = &grid.neighbors[center];
        let offset_sum: Vec3 = nbrs
            .iter()
            .map(|&j| grid.vertices[j] - grid.vertices[center])
            .sum();
        assert!(offset_sum.norm() < 1e-12, "stencil not symmetric");
        let mean: f64 = nbrs.iter().map(|&j| field.sdf[j]).sum::<f64>() / nbrs.len() as f64;
        assert_relative_eq!(mean - field.sdf[center], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_quadratic_field_positive() {
        let grid = small_grid();
        let mut field = FieldParams::new(grid.vertex_count());
        for (i, v) in grid.vertices.iter().enumerate() {
            field.sdf[i] = v.norm_squared();
        }
        let center = grid.vertex_index(1, 1, 1);
        let nbrs = &grid.neighbors[center];
        let mean: f64 = nbrs.iter().map(|&j| field.sdf[j]).sum::<f64>() / nbrs.len() as f64;
        let lap = mean - field.sdf[center];
        let mean_sq_offset: f64 = nbrs
            .iter()
            .map(|&j| (grid.vertices[j] - grid.vertices[center]).norm_squared())
            .sum::<f64>()
            / nbrs.len() as f64;
        assert!(lap > 0.0);
        assert_relative_eq!(lap, mean_sq_offset, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_gradient_matches_fd() {
        let grid = small_grid();
        let mut field = FieldParams::new(grid.vertex_count());
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for s in &mut field.sdf {
            *s = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let (_, g) = laplacian_loss(&field, &grid).unwrap();
        let h = 1e-7;
        for i in (0..field.sdf.len()).step_by(3) {
            let orig = field.sdf[i];
            field.sdf[i] = orig + h;
            let (lp, _) = laplacian_loss(&field, &grid).unwrap();
            field.sdf[i] = orig - h;
            let (lm, _) = laplacian_loss(&field, &grid).unwrap();
            field.sdf[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(photometric_loss(&a, &b).is_err());
        let m = Mask::new(4, 4);
        let n = Mask::new(5, 4);
        assert!(mask_loss(&m, &n).is_err());
    }
}
