//! Conditional densities and the batch mixture log-likelihood.
//!
//! Everything is evaluated in the log domain. The clutter density is uniform
//! over the measurement bounds; track densities are axis-aligned Gaussians
//! around the constant-velocity prediction.

use rayon::prelude::*;

use crate::error::{Dim, Error, Result};
use crate::model::{
    measurement_volume, Batch, HypothesisSet, Measurement, MeasurementBounds, Sigmas,
    TrackHypothesis,
};

/// `-2 ln(2π)`: the 4-D Gaussian normalizer without the determinant.
pub const LOG_GAUSS_NORM_4D: f64 = -3.675_754_132_818_690_6;

/// Below this many measurements the per-measurement loop stays serial.
pub(crate) const PAR_THRESHOLD: usize = 4096;

/// Signed measurement-minus-prediction errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub ex: f64,
    pub ey: f64,
    pub ea: f64,
    pub ed: f64,
}

impl Residual {
    pub fn get(&self, dim: Dim) -> f64 {
        match dim {
            Dim::X => self.ex,
            Dim::Y => self.ey,
            Dim::A => self.ea,
            Dim::D => self.ed,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.ex, self.ey, self.ea, self.ed]
    }
}

/// Expected measurement `(x, y, a, d)` of a track at time `t`.
pub fn predict(h: &TrackHypothesis, t: f64) -> Result<[f64; 4]> {
    if h.is_clutter() {
        return Err(Error::UnsupportedHypothesis);
    }
    let p = &h.params;
    Ok([p.x0 + p.vx * t, p.y0 + p.vy * t, p.a, p.d])
}

pub fn residual(m: &Measurement, h: &TrackHypothesis) -> Result<Residual> {
    let [px, py, pa, pd] = predict(h, m.t)?;
    Ok(Residual {
        ex: m.x - px,
        ey: m.y - py,
        ea: m.a - pa,
        ed: m.d - pd,
    })
}

pub fn clutter_pdf(bounds: &MeasurementBounds) -> Result<f64> {
    Ok(1.0 / measurement_volume(bounds)?)
}

pub fn clutter_log_pdf(bounds: &MeasurementBounds) -> Result<f64> {
    Ok(-measurement_volume(bounds)?.ln())
}

/// Log of the diagonal-covariance Gaussian density at residual `e`.
pub fn track_log_pdf(e: &Residual, sigma: &Sigmas) -> Result<f64> {
    sigma.check_positive()?;
    Ok(GaussianTerm::new(sigma).log_pdf(&e.to_array()))
}

/// `pdf(n|h)` in the log domain, dispatching on the hypothesis kind.
pub fn conditional_log_pdf(
    m: &Measurement,
    h: &TrackHypothesis,
    bounds: &MeasurementBounds,
) -> Result<f64> {
    if h.is_clutter() {
        clutter_log_pdf(bounds)
    } else {
        track_log_pdf(&residual(m, h)?, &h.sigma)
    }
}

pub fn conditional_pdf(
    m: &Measurement,
    h: &TrackHypothesis,
    bounds: &MeasurementBounds,
) -> Result<f64> {
    conditional_log_pdf(m, h, bounds).map(f64::exp)
}

/// `ln Σ exp(x_i)` with max-shift. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Precomputed Gaussian normalizer and inverse variances.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussianTerm {
    log_norm: f64,
    inv_var: [f64; 4],
}

impl GaussianTerm {
    pub(crate) fn new(sigma: &Sigmas) -> Self {
        let s = sigma.to_array();
        let log_det_half: f64 = s.iter().map(|v| v.ln()).sum();
        Self {
            log_norm: LOG_GAUSS_NORM_4D - log_det_half,
            inv_var: s.map(|v| 1.0 / (v * v)),
        }
    }

    #[inline]
    pub(crate) fn log_pdf(&self, e: &[f64; 4]) -> f64 {
        let q = e[0] * e[0] * self.inv_var[0]
            + e[1] * e[1] * self.inv_var[1]
            + e[2] * e[2] * self.inv_var[2]
            + e[3] * e[3] * self.inv_var[3];
        self.log_norm - 0.5 * q
    }
}

/// A hypothesis prepared for repeated density evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Component {
    Clutter {
        log_pdf: f64,
    },
    Track {
        x0: f64,
        y0: f64,
        vx: f64,
        vy: f64,
        a: f64,
        d: f64,
        gauss: GaussianTerm,
    },
}

impl Component {
    pub(crate) fn new(h: &TrackHypothesis, clutter_log_pdf: f64) -> Result<Self> {
        if h.is_clutter() {
            return Ok(Component::Clutter {
                log_pdf: clutter_log_pdf,
            });
        }
        h.sigma.check_positive()?;
        let p = &h.params;
        Ok(Component::Track {
            x0: p.x0,
            y0: p.y0,
            vx: p.vx,
            vy: p.vy,
            a: p.a,
            d: p.d,
            gauss: GaussianTerm::new(&h.sigma),
        })
    }

    #[inline]
    pub(crate) fn log_pdf(&self, m: &Measurement) -> f64 {
        match *self {
            Component::Clutter { log_pdf } => log_pdf,
            Component::Track {
                x0,
                y0,
                vx,
                vy,
                a,
                d,
                ref gauss,
            } => gauss.log_pdf(&[
                m.x - (x0 + vx * m.t),
                m.y - (y0 + vy * m.t),
                m.a - a,
                m.d - d,
            ]),
        }
    }
}

pub(crate) fn components(hs: &HypothesisSet, bounds: &MeasurementBounds) -> Result<Vec<Component>> {
    let clutter = clutter_log_pdf(bounds)?;
    hs.hypotheses()
        .iter()
        .map(|h| Component::new(h, clutter))
        .collect()
}

/// Log of the mixture density of one measurement, or `-inf` if it vanishes.
#[inline]
pub(crate) fn mixture_log_density(
    m: &Measurement,
    comps: &[Component],
    log_priors: &[f64],
    scratch: &mut Vec<f64>,
) -> f64 {
    scratch.clear();
    scratch.extend(
        comps
            .iter()
            .zip(log_priors)
            .map(|(c, &lr)| lr + c.log_pdf(m)),
    );
    log_sum_exp(scratch)
}

/// `Σ_n ln Σ_h r(h) pdf(n|h)`.
pub fn batch_log_likelihood(batch: &Batch, hs: &HypothesisSet) -> Result<f64> {
    let comps = components(hs, batch.bounds())?;
    let log_priors: Vec<f64> = hs.priors().iter().map(|r| r.ln()).collect();
    let ms = batch.measurements();
    let per_point: Vec<f64> = if ms.len() >= PAR_THRESHOLD {
        ms.par_iter()
            .map_init(Vec::new, |scratch, m| {
                mixture_log_density(m, &comps, &log_priors, scratch)
            })
            .collect()
    } else {
        let mut scratch = Vec::with_capacity(comps.len());
        ms.iter()
            .map(|m| mixture_log_density(m, &comps, &log_priors, &mut scratch))
            .collect()
    };
    let mut total = 0.0;
    for (index, v) in per_point.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DegenerateLikelihood { index });
        }
        total += v;
    }
    Ok(total)
}
