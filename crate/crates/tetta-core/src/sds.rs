//! Score distillation: the diffusion schedule, the pluggable noise-predictor
//! interface, the per-pixel gradient it induces on a rendering, and the
//! analytic oracle predictor used for verification.

use crate::camera::RelativeView;
use crate::image::Image;
use crate::{Error, Result};

/// Linear-beta diffusion schedule.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    /// `alpha_bar[t]` for t in 0..=steps, with `alpha_bar[0] = 1`.
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Weight applied to the noise residual: `w(t) = 1 - alpha_bar_t`.
    pub fn weight(&self, t: usize) -> f64 {
        1.0 - self.alpha_bars[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps {
            return Err(Error::Contract(format!(
                "noise level t={t} outside [1, {}]",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Builds a linear-beta schedule with `steps` levels.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps < 1 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let mut betas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut running = 1.0;
    for t in 0..steps {
        let frac = if steps == 1 {
            0.0
        } else {
            t as f64 / (steps - 1) as f64
        };
        let beta = beta_start + (beta_end - beta_start) * frac;
        betas.push(beta);
        running *= 1.0 - beta;
        alpha_bars.push(running);
    }
    Ok(DiffusionSchedule {
        steps,
        betas,
        alpha_bars,
    })
}

/// Conditioning for the noise predictor: the reference image and the
/// relative viewpoint of the rendering being denoised.
#[derive(Debug, Clone, Copy)]
pub struct Condition<'a> {
    pub reference: &'a Image,
    pub rel_view: RelativeView,
}

/// A denoiser: predicts the noise inside `z_t`. Implementations must be
/// pure (same inputs, same output) and callable from multiple views at once.
pub trait NoisePredictor: Sync {
    fn predict(&self, z_t: &Image, condition: &Condition<'_>, t: usize) -> Result<Image>;

    /// Some predictors only support a discrete set of conditioning views;
    /// they may snap a requested view to the nearest supported one. The
    /// default accepts everything unchanged.
    fn snap_condition(&self, rel: RelativeView) -> RelativeView {
        rel
    }
}

/// Per-pixel score-distillation gradient for a rendered image `x`:
/// noises `x` into `z_t`, queries the predictor, and returns
/// `w(t) * (eps_hat - eps)`. The latent encoder is the identity, so this is
/// the gradient the caller chains through the render backward pass.
pub fn sds_gradient(
    x: &Image,
    condition: &Condition<'_>,
    t: usize,
    eps: &Image,
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
) -> Result<Image> {
    x.check_same_shape(eps, "sds_gradient noise")?;
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let sqrt_ab = ab.sqrt();
    let sqrt_1m = (1.0 - ab).sqrt();

    let mut z_t = Image::new(x.width, x.height);
    for (z, (xv, ev)) in z_t.data.iter_mut().zip(x.data.iter().zip(eps.data.iter())) {
        *z = sqrt_ab * xv + sqrt_1m * ev;
    }
    let eps_hat = predictor.predict(&z_t, condition, t)?;
    eps_hat.check_same_shape(x, "predictor output")?;

    let w = schedule.weight(t);
    let mut g = Image::new(x.width, x.height);
    for (gv, (ehat, ev)) in g
        .data
        .iter_mut()
        .zip(eps_hat.data.iter().zip(eps.data.iter()))
    {
        *gv = w * (ehat - ev);
    }
    Ok(g)
}

/// A ground-truth view bank: the oracle predictor inverts the noising
/// process against the stored rendering for the queried viewpoint, which
/// makes SDS collapse to a closed-form photometric pull.
pub struct OraclePredictor {
    views: Vec<(RelativeView, Image)>,
    schedule: DiffusionSchedule,
    /// Max angular distance (degrees) accepted by lookups.
    pub tolerance: f64,
}

impl OraclePredictor {
    pub fn new(
        views: Vec<(RelativeView, Image)>,
        schedule: DiffusionSchedule,
        tolerance: f64,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Config("oracle view bank is empty".into()));
        }
        Ok(Self {
            views,
            schedule,
            tolerance,
        })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views(&self) -> &[(RelativeView, Image)] {
        &self.views
    }

    fn nearest(&self, rel: &RelativeView) -> (f64, &RelativeView, &Image) {
        let mut best = f64::INFINITY;
        let mut best_entry = &self.views[0];
        for entry in &self.views {
            let d = entry.0.angular_distance(rel);
            if d < best {
                best = d;
                best_entry = entry;
            }
        }
        (best, &best_entry.0, &best_entry.1)
    }

    /// Ground-truth rendering for a condition, if within tolerance.
    pub fn ground_truth(&self, rel: &RelativeView) -> Result<&Image> {
        let (d, _, img) = self.nearest(rel);
        if d > self.tolerance {
            return Err(Error::Lookup(format!(
                "no bank view within {} deg of ({}, {}); nearest is {d:.2} deg away",
                self.tolerance, rel.d_elevation, rel.d_azimuth
            )));
        }
        Ok(img)
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(&self, z_t: &Image, condition: &Condition<'_>, t: usize) -> Result<Image> {
        self.schedule.check_t(t)?;
        let x_gt = self.ground_truth(&condition.rel_view)?;
        z_t.check_same_shape(x_gt, "oracle bank image")?;
        let ab = self.schedule.alpha_bar(t);
        let sqrt_ab = ab.sqrt();
        let inv = 1.0 / (1.0 - ab).sqrt();
        let mut out = Image::new(z_t.width, z_t.height);
        for (o, (z, gt)) in out
            .data
            .iter_mut()
            .zip(z_t.data.iter().zip(x_gt.data.iter()))
        {
            *o = (z - sqrt_ab * gt) * inv;
        }
        Ok(out)
    }

    fn snap_condition(&self, rel: RelativeView) -> RelativeView {
        let (_, nearest, _) = self.nearest(&rel);
        *nearest
    }
}

/// A predictor that always returns the injected-noise image supplied at
/// construction; `sds_gradient` with it is exactly zero. Test helper.
pub struct PerfectDenoiser {
    pub eps: Image,
}

impl NoisePredictor for PerfectDenoiser {
    fn predict(&self, _z_t: &Image, _condition: &Condition<'_>, _t: usize) -> Result<Image> {
        Ok(self.eps.clone())
    }
}
