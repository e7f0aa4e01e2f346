//! Small math building blocks shared across the crate.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Smallest box containing all `points`. Empty input gives an inverted box.
    pub fn from_points<'a, I: IntoIterator<Item = &'a Vec3>>(points: I) -> Self {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn is_degenerate(&self) -> bool {
        let e = self.extent();
        !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.iter().all(|v| v.is_finite())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn grown(&self, margin: f64) -> Self {
        Self {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Wraps an angle in degrees to `[0, 360)`.
pub fn wrap_angle_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w == 360.0 {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference in degrees to `(-180, 180]`.
pub fn wrap_angle_delta(deg: f64) -> f64 {
    180.0 - (180.0 - deg).rem_euclid(360.0)
}

/// SplitMix64 step; used to derive independent sub-seeds from a master seed.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Backward of `y = normalize(x)`: given dL/dy, returns dL/dx.
pub fn normalize_vjp(x: &Vec3, grad_y: &Vec3) -> Vec3 {
    let n = x.norm();
    if n < 1e-300 {
        return Vec3::zeros();
    }
    let y = x / n;
    (grad_y - y * y.dot(grad_y)) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_matches_naive_in_safe_range() {
        for &x in &[-30.0, -1.0, 0.0, 0.5, 30.0] {
            let naive = 1.0 / (1.0 + (-x as f64).exp());
            assert_relative_eq!(sigmoid(x), naive, max_relative = 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-800.0) < 1e-300);
    }

    #[test]
    fn wrap_delta_covers_boundaries() {
        assert_eq!(wrap_angle_delta(180.0), 180.0);
        assert_eq!(wrap_angle_delta(-180.0), 180.0);
        assert_relative_eq!(wrap_angle_delta(190.0), -170.0);
        assert_relative_eq!(wrap_angle_delta(-340.0), 20.0);
        assert_relative_eq!(wrap_angle_delta(20.0), 20.0);
    }

    #[test]
    fn normalize_vjp_matches_finite_differences() {
        let x = Vec3::new(0.3, -1.2, 0.7);
        let g = Vec3::new(0.5, 0.25, -1.0);
        let analytic = normalize_vjp(&x, &g);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (xp.normalize().dot(&g) - xm.normalize().dot(&g)) / (2.0 * h);
            assert_relative_eq!(analytic[i], fd, max_relative = 1e-6);
        }
    }
}
