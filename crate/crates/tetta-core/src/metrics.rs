//! Geometric and photometric evaluation: cloud normalization, ICP, Chamfer
//! distance, F-score, PSNR, and the packaged mesh-to-mesh protocol.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::image::Image;
use crate::math::{Aabb, Vec3};
use crate::mesh::TriangleMesh;
use crate::sdf::{sample_surface_points, PointCloud};
use crate::{Error, Result};

/// Rotation + translation with `det(R) = +1`.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.rotation * self.rotation.transpose();
        (should_be_identity - Matrix3::identity()).norm() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

/// Scale/offset applied by [`normalize_cloud`].
#[derive(Debug, Clone, Copy)]
pub struct Normalization {
    pub scale: f64,
    pub offset: Vec3,
}

impl Normalization {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p + self.offset) * self.scale
    }
}

/// Centers the centroid at the origin and scales the bounding-box diagonal
/// to one.
pub fn normalize_cloud(pc: &PointCloud) -> Result<(PointCloud, Normalization)> {
    if pc.len() < 2 {
        return Err(Error::Contract("normalization needs at least 2 points".into()));
    }
    let centroid = pc.centroid();
    let centered: Vec<Vec3> = pc.points.iter().map(|p| p - centroid).collect();
    let bounds = Aabb::from_points(centered.iter());
    let diag = bounds.diagonal();
    if !(diag > 0.0) {
        return Err(Error::Contract(
            "all points coincide; cannot normalize scale".into(),
        ));
    }
    let scale = 1.0 / diag;
    Ok((
        PointCloud::new(centered.into_iter().map(|p| p * scale).collect()),
        Normalization {
            scale,
            offset: -centroid,
        },
    ))
}

/// Simple point BVH for nearest-neighbor queries.
pub struct PointIndex {
    points: Vec<Vec3>,
    nodes: Vec<(Aabb, usize, usize)>, // (bounds, right_or_start, count)
    order: Vec<usize>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let points = points.to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        Self::build(&points, &mut order, 0, points.len(), &mut nodes);
        Self {
            points,
            nodes,
            order,
        }
    }

    fn build(
        points: &[Vec3],
        order: &mut [usize],
        start: usize,
        count: usize,
        nodes: &mut Vec<(Aabb, usize, usize)>,
    ) -> usize {
        let bounds = Aabb::from_points(order[start..start + count].iter().map(|&i| &points[i]));
        let idx = nodes.len();
        nodes.push((bounds, start, count));
        if count > 16 {
            let ext = bounds.extent();
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            order[start..start + count]
                .sort_unstable_by(|&a, &b| points[a][axis].partial_cmp(&points[b][axis]).unwrap());
            let half = count / 2;
            nodes[idx].2 = 0;
            Self::build(points, order, start, half, nodes);
            let right = Self::build(points, order, start + half, count - half, nodes);
            nodes[idx].1 = right;
        }
        idx
    }

    /// Index of and squared distance to the nearest stored point.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (bounds, right_or_start, count) = self.nodes[ni];
            if bounds.distance_sq(q) >= best.1 {
                continue;
            }
            if count > 0 {
                for k in 0..count {
                    let i = self.order[right_or_start + k];
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 {
                        best = (i, d2);
                    }
                }
            } else {
                let l = ni + 1;
                let r = right_or_start;
                let dl = self.nodes[l].0.distance_sq(q);
                let dr = self.nodes[r].0.distance_sq(q);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

/// Rigid alignment of `src` onto `dst` by iterated nearest-neighbor
/// correspondence and closed-form orthogonal fitting (no scale). The
/// per-iteration RMS residual is monotone non-increasing.
pub fn icp_align(
    src: &PointCloud,
    dst: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<RigidTransform> {
    Ok(icp_align_detailed(src, dst, max_iters, tol)?.0)
}

/// ICP returning the final RMS residual and the residual history.
pub fn icp_align_detailed(
    src: &PointCloud,
    dst: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<(RigidTransform, f64, Vec<f64>)> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::Contract("ICP needs non-empty clouds".into()));
    }
    let index = PointIndex::new(&dst.points);
    let mut transform = RigidTransform::identity();
    let mut moved: Vec<Vec3> = src.points.clone();
    let mut history = Vec::new();
    let mut prev_rms = f64::INFINITY;

    for _ in 0..max_iters {
        let pairs: Vec<(Vec3, Vec3, f64)> = moved
            .par_iter()
            .map(|p| {
                let (j, d2) = index.nearest(p);
                (*p, dst.points[j], d2)
            })
            .collect();
        let rms =
            (pairs.iter().map(|(_, _, d2)| d2).sum::<f64>() / pairs.len() as f64).sqrt();
        history.push(rms);

        let delta = kabsch(&pairs)?;
        transform = delta.compose(&transform);
        for p in &mut moved {
            *p = delta.apply(p);
        }

        if prev_rms.is_finite() && (prev_rms - rms).abs() <= tol * prev_rms.max(1e-30) {
            break;
        }
        prev_rms = rms;
    }
    let final_rms = history.last().copied().unwrap_or(0.0);
    Ok((transform, final_rms, history))
}

/// Closed-form least-squares rotation/translation for matched pairs.
fn kabsch(pairs: &[(Vec3, Vec3, f64)]) -> Result<RigidTransform> {
    let n = pairs.len() as f64;
    let c_src: Vec3 = pairs.iter().map(|(s, _, _)| s).sum::<Vec3>() / n;
    let c_dst: Vec3 = pairs.iter().map(|(_, d, _)| d).sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d, _) in pairs {
        h += (s - c_src) * (d - c_dst).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Contract("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Contract("svd failed".into()))?;
    let mut rotation = v_t.transpose() * u.transpose();
    if rotation.determinant() < 0.0 {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        rotation = v_t.transpose() * flip * u.transpose();
    }
    let translation = c_dst - rotation * c_src;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Squared-distance Chamfer: sum of the two directed means.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("chamfer needs non-empty clouds".into()));
    }
    let ib = PointIndex::new(&b.points);
    let ia = PointIndex::new(&a.points);
    let d_ab: f64 = a
        .points
        .par_iter()
        .map(|p| ib.nearest(p).1)
        .sum::<f64>()
        / a.len() as f64;
    let d_ba: f64 = b
        .points
        .par_iter()
        .map(|p| ia.nearest(p).1)
        .sum::<f64>()
        / b.len() as f64;
    Ok(d_ab + d_ba)
}

/// F-score (percent) at absolute distance threshold `tau`.
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Contract("f_score needs non-empty clouds".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract("f_score threshold must be positive".into()));
    }
    let ig = PointIndex::new(&gt.points);
    let ip = PointIndex::new(&pred.points);
    let tau2 = tau * tau;
    let precision = pred
        .points
        .par_iter()
        .filter(|p| ig.nearest(p).1 <= tau2)
        .count() as f64
        / pred.len() as f64;
    let recall = gt
        .points
        .par_iter()
        .filter(|p| ip.nearest(p).1 <= tau2)
        .count() as f64
        / gt.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Peak signal-to-noise ratio in dB; identical images return +infinity.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Result of the packaged evaluation protocol.
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub chamfer: f64,
    pub f_score: f64,
    /// World-space rigid transform that aligned the prediction.
    pub alignment: RigidTransform,
    pub icp_rms: f64,
}

/// Full mesh-to-mesh protocol: sample `n` points each, rigidly align the
/// prediction to the ground truth (multi-start ICP over the 24 axis
/// rotations so any rigid pre-transform of the prediction is undone), then
/// scale-normalize to the ground truth and measure Chamfer and F-score.
pub fn evaluation_protocol(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    n: usize,
    tau: f64,
    seed: u64,
) -> Result<ProtocolResult> {
    let pred_pc = sample_surface_points(pred, n, seed)?;
    let gt_pc = sample_surface_points(gt, n, seed ^ 0x9e37_79b9)?;

    // Center both; try every octahedral orientation of the prediction and
    // keep the ICP result with the lowest residual.
    let c_pred = pred_pc.centroid();
    let c_gt = gt_pc.centroid();
    let pred_centered = PointCloud::new(pred_pc.points.iter().map(|p| p - c_pred).collect());
    let gt_centered = PointCloud::new(gt_pc.points.iter().map(|p| p - c_gt).collect());

    let rotations = octahedral_rotations();
    let results: Vec<(usize, RigidTransform, f64)> = rotations
        .par_iter()
        .enumerate()
        .map(|(k, rot)| {
            let start = PointCloud::new(
                pred_centered.points.iter().map(|p| rot * p).collect(),
            );
            match icp_align_detailed(&start, &gt_centered, 50, 1e-7) {
                Ok((t, rms, _)) => {
                    let total = t.compose(&RigidTransform {
                        rotation: *rot,
                        translation: Vec3::zeros(),
                    });
                    (k, total, rms)
                }
                Err(_) => (k, RigidTransform::identity(), f64::INFINITY),
            }
        })
        .collect();
    let best = results
        .iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)))
        .unwrap();

    let aligned = PointCloud::new(
        pred_centered
            .points
            .iter()
            .map(|p| best.1.apply(p))
            .collect(),
    );

    // Normalize to the ground truth's scale.
    let (gt_norm, norm) = normalize_cloud(&gt_centered)?;
    let pred_norm = PointCloud::new(aligned.points.iter().map(|p| norm.apply(p)).collect());

    let chamfer = chamfer_distance(&pred_norm, &gt_norm)?;
    let fs = f_score(&pred_norm, &gt_norm, tau)?;

    // Total world-space alignment: center, rotate, uncenter.
    let centering = RigidTransform {
        rotation: Matrix3::identity(),
        translation: -c_pred,
    };
    let uncenter = RigidTransform {
        rotation: Matrix3::identity(),
        translation: c_gt,
    };
    let alignment = uncenter.compose(&best.1.compose(&centering));

    Ok(ProtocolResult {
        chamfer,
        f_score: fs,
        alignment,
        icp_rms: best.2,
    })
}

/// Direct Chamfer between two meshes in world space (no alignment); used
/// when both meshes live in the same frame.
pub fn mesh_chamfer(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    let pa = sample_surface_points(a, n, seed)?;
    let pb = sample_surface_points(b, n, seed ^ 0x517c_c1b7)?;
    chamfer_distance(&pa, &pb)
}

/// The 24 rotation matrices of the octahedral group.
fn octahedral_rotations() -> Vec<Matrix3<f64>> {
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let mut out = Vec::with_capacity(24);
    for x in &axes {
        for y in &axes {
            if x.dot(y).abs() > 1e-9 {
                continue;
            }
            let z = x.cross(y);
            let m = Matrix3::from_columns(&[*x, *y, z]);
            if (m.determinant() - 1.0).abs() < 1e-9 {
                out.push(m);
            }
        }
    }
    debug_assert_eq!(out.len(), 24);
    out
}
