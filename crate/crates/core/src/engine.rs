//! The dynamic-logic iteration.
//!
//! Each iteration computes association weights from the current models
//! (E-step), re-estimates priors and the parameters of every active track
//! from those weights (M-step), then lets the track manager activate,
//! eliminate and prune models. The loop stops once the log-likelihood stops
//! growing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Dim, Error, Result};
use crate::likelihood::{components, log_sum_exp, Component, PAR_THRESHOLD};
use crate::model::{
    AssociationMatrix, Batch, HypothesisSet, MeasurementBounds, Sigmas, Status, TrackHypothesis,
    TrackParams,
};
use crate::track_manager::{lifecycle_step, prune_duplicates, Search};

/// How the Doppler-coupling weight `c` of the x-motion update is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    /// `σx² / σd²`, the stationarity condition of the weighted objective.
    #[default]
    DerivedXd,
    /// `σx² / σy²`.
    RatioXy,
    Unity,
}

/// A prior threshold, either absolute or as a number of supporting points
/// (`k / N`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Support(f64),
    Prior(f64),
}

impl Threshold {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Threshold::Support(k) => k / n.max(1) as f64,
            Threshold::Prior(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DLConfig {
    pub max_iterations: usize,
    /// Stop once `(L_i - L_{i-1}) / |L_{i-1}|` drops below this.
    pub loglik_rel_tolerance: f64,
    pub sigma_floor: Sigmas,
    pub c_mode: CMode,
    /// Replace `σx²` and `σd²` by their average after every update.
    pub tie_sigma_x_d: bool,
    pub dormant_count: usize,
    pub activation_threshold: Threshold,
    pub elimination_threshold: Threshold,
    /// Active tracks whose supporting mass `r·N` drops below this are pruned
    /// once they are crisp.
    pub min_support: f64,
    /// Duplicate test distance, in combined standard deviations.
    pub duplicate_gate: f64,
    /// A track counts as crisp once every sigma is below `crisp_factor`
    /// times its floor.
    pub crisp_factor: f64,
    /// Prior given to a newly spawned dormant track.
    pub spawn_prior: Threshold,
    /// Upper bound on simultaneously active tracks.
    pub max_active: usize,
    /// Fraction of the batch used as probe seeds per iteration; 0 keeps a
    /// single vague dormant model instead.
    pub probe_fraction: f64,
    /// Probe sigmas, in multiples of the floor.
    pub probe_sigma_factor: f64,
    /// Prior re-estimates a probe gets to reach the activation threshold.
    pub probe_patience: usize,
    pub rng_seed: u64,
}

impl Default for DLConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            loglik_rel_tolerance: 1e-6,
            sigma_floor: Sigmas::new(5.0, 5.0, 0.05, 0.5),
            c_mode: CMode::DerivedXd,
            tie_sigma_x_d: false,
            dormant_count: 1,
            activation_threshold: Threshold::Support(3.0),
            elimination_threshold: Threshold::Support(1.5),
            min_support: 2.5,
            duplicate_gate: 1.0,
            crisp_factor: 3.0,
            spawn_prior: Threshold::Support(0.5),
            max_active: 16,
            probe_fraction: 0.05,
            probe_sigma_factor: 1.0,
            probe_patience: 2,
            rng_seed: 0,
        }
    }
}

impl DLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        if !(self.loglik_rel_tolerance > 0.0) {
            return Err(Error::config("loglik_rel_tolerance", "must be positive"));
        }
        for dim in Dim::ALL {
            let v = self.sigma_floor.get(dim);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("sigma_floor.{}", dim_key(dim)),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.dormant_count < 1 {
            return Err(Error::config("dormant_count", "must be at least 1"));
        }
        for (name, t) in [
            ("activation_threshold", self.activation_threshold),
            ("elimination_threshold", self.elimination_threshold),
            ("spawn_prior", self.spawn_prior),
        ] {
            let v = match t {
                Threshold::Support(k) => k,
                Threshold::Prior(p) => {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::config(name, "prior threshold must lie in (0, 1)"));
                    }
                    p
                }
            };
            if !(v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if let (Threshold::Support(e), Threshold::Support(a))
        | (Threshold::Prior(e), Threshold::Prior(a)) =
            (self.elimination_threshold, self.activation_threshold)
        {
            if e >= a {
                return Err(Error::config(
                    "elimination_threshold",
                    "must be below activation_threshold",
                ));
            }
        }
        if !(self.crisp_factor >= 1.0) {
            return Err(Error::config("crisp_factor", "must be at least 1"));
        }
        if !(self.duplicate_gate > 0.0) {
            return Err(Error::config("duplicate_gate", "must be positive"));
        }
        if self.max_active < 1 {
            return Err(Error::config("max_active", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.probe_fraction) {
            return Err(Error::config("probe_fraction", "must lie in [0, 1]"));
        }
        if !(self.probe_sigma_factor >= 1.0 && self.probe_sigma_factor.is_finite()) {
            return Err(Error::config("probe_sigma_factor", "must be at least 1"));
        }
        if self.probe_patience < 1 {
            return Err(Error::config("probe_patience", "must be at least 1"));
        }
        Ok(())
    }

    /// Resolved `(activation, elimination)` priors for a batch of `n` points.
    pub fn thresholds(&self, n: usize) -> Result<(f64, f64)> {
        let act = self.activation_threshold.resolve(n);
        let elim = self.elimination_threshold.resolve(n);
        if !(elim < act && act < 1.0 && elim > 0.0) {
            return Err(Error::config(
                "activation_threshold",
                format!("resolved thresholds must satisfy 0 < {elim} < {act} < 1"),
            ));
        }
        Ok((act, elim))
    }
}

fn dim_key(dim: Dim) -> &'static str {
    match dim {
        Dim::X => "x",
        Dim::Y => "y",
        Dim::A => "a",
        Dim::D => "d",
    }
}

/// Broad, uninformed track: centered on the bounds with sigmas of half the
/// range in every dimension and zero velocity.
pub fn vague_track(
    id: u32,
    status: Status,
    bounds: &MeasurementBounds,
    prior: f64,
) -> TrackHypothesis {
    let params = TrackParams {
        x0: bounds.x.midpoint(),
        y0: bounds.y.midpoint(),
        vx: 0.0,
        vy: 0.0,
        a: bounds.a.midpoint(),
        d: 0.0,
    };
    let sigma = Sigmas::new(
        0.5 * bounds.x.width(),
        0.5 * bounds.y.width(),
        0.5 * bounds.a.width(),
        0.5 * bounds.d.width(),
    );
    TrackHypothesis::track(id, status, params, sigma, prior)
}

/// Clutter, one active track and `dormant_count` dormant tracks, all with
/// equal priors.
pub fn init_hypotheses(bounds: &MeasurementBounds, cfg: &DLConfig) -> Result<HypothesisSet> {
    bounds.validate()?;
    let h = 2 + cfg.dormant_count;
    let r = 1.0 / h as f64;
    let mut tracks = vec![vague_track(1, Status::Active, bounds, r)];
    for i in 0..cfg.dormant_count {
        tracks.push(vague_track(2 + i as u32, Status::Dormant, bounds, r));
    }
    Ok(HypothesisSet::new(r, tracks))
}

/// Association weights plus by-products of the same pass.
#[derive(Debug, Clone)]
pub struct EStep {
    pub f: AssociationMatrix,
    /// Batch log-likelihood of the hypothesis set the weights came from.
    pub loglik: f64,
    /// Rows where every term vanished and which were handed to clutter.
    pub underflow_rows: Vec<usize>,
}

/// Computes `f(h|n) = r(h) pdf(n|h) / Σ r(h') pdf(n|h')` in the log domain.
pub fn e_step(batch: &Batch, hs: &HypothesisSet) -> Result<EStep> {
    let comps = components(hs, batch.bounds())?;
    let log_priors: Vec<f64> = hs.priors().iter().map(|r| r.ln()).collect();
    let h = comps.len();
    let n = batch.len();
    let mut f = AssociationMatrix::zeros(n, h);

    let ms = batch.measurements();
    let row_ll: Vec<f64> = if n >= PAR_THRESHOLD {
        f.data_mut()
            .par_chunks_mut(h)
            .zip(ms.par_iter())
            .map(|(out, m)| fill_row(m, &comps, &log_priors, out))
            .collect()
    } else {
        f.data_mut()
            .chunks_mut(h)
            .zip(ms)
            .map(|(out, m)| fill_row(m, &comps, &log_priors, out))
            .collect()
    };

    let mut loglik = 0.0;
    let mut underflow_rows = Vec::new();
    for (i, v) in row_ll.into_iter().enumerate() {
        if v.is_finite() {
            loglik += v;
        } else {
            underflow_rows.push(i);
            let r = f.row_mut(i);
            r.fill(0.0);
            r[0] = 1.0;
        }
    }
    if !underflow_rows.is_empty() {
        loglik = f64::NEG_INFINITY;
    }
    Ok(EStep {
        f,
        loglik,
        underflow_rows,
    })
}

/// Fills one association row and returns the log mixture density.
#[inline]
fn fill_row(
    m: &crate::model::Measurement,
    comps: &[Component],
    log_priors: &[f64],
    out: &mut [f64],
) -> f64 {
    for ((o, c), &lr) in out.iter_mut().zip(comps).zip(log_priors) {
        *o = lr + c.log_pdf(m);
    }
    let lse = log_sum_exp(out);
    if lse.is_finite() {
        let mut s = 0.0;
        for o in out.iter_mut() {
            *o = (*o - lse).exp();
            s += *o;
        }
        // exp rounding leaves the row a few ulps off one
        for o in out.iter_mut() {
            *o /= s;
        }
    }
    lse
}

/// `⟨q⟩_h = Σ_n f(h|n) q_n`.
pub fn weighted_moment(f: &[f64], q: &[f64]) -> f64 {
    assert_eq!(f.len(), q.len(), "weight and quantity lengths differ");
    f.iter().zip(q).map(|(w, v)| w * v).sum()
}

/// `r(h) = ⟨1⟩_h / N`, rescaled to sum to one exactly.
pub fn update_priors(f: &AssociationMatrix) -> Vec<f64> {
    let n = f.rows() as f64;
    let mut r = vec![0.0; f.cols()];
    for i in 0..f.rows() {
        for (acc, w) in r.iter_mut().zip(f.row(i)) {
            *acc += w;
        }
    }
    for v in &mut r {
        *v /= n;
    }
    let s: f64 = r.iter().sum();
    if s > 0.0 {
        for v in &mut r {
            *v /= s;
        }
    }
    r
}

/// Weighted sums needed by the closed-form updates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub w: f64,
    pub t: f64,
    pub tt: f64,
    pub x: f64,
    pub xt: f64,
    pub y: f64,
    pub yt: f64,
    pub a: f64,
    pub d: f64,
}

impl Moments {
    pub fn from_column(f: &[f64], batch: &Batch) -> Self {
        assert_eq!(
            f.len(),
            batch.len(),
            "association column length differs from batch"
        );
        let mut s = Moments::default();
        for (&w, m) in f.iter().zip(batch.measurements()) {
            s.accumulate(w, m);
        }
        s
    }

    #[inline]
    fn accumulate(&mut self, w: f64, m: &crate::model::Measurement) {
        let wt = w * m.t;
        self.w += w;
        self.t += wt;
        self.tt += wt * m.t;
        self.x += w * m.x;
        self.xt += wt * m.x;
        self.y += w * m.y;
        self.yt += wt * m.y;
        self.a += w * m.a;
        self.d += w * m.d;
    }

    fn support(&self) -> Result<f64> {
        if self.w > 0.0 && self.w.is_finite() {
            Ok(self.w)
        } else {
            Err(Error::EmptySupport { mass: self.w })
        }
    }

    pub fn amplitude(&self) -> Result<f64> {
        Ok(self.a / self.support()?)
    }

    /// Solves `Y0⟨1⟩ + Vy⟨t⟩ = ⟨y⟩`, `Y0⟨t⟩ + Vy⟨t²⟩ = ⟨yt⟩`.
    pub fn y_motion(&self) -> Result<(f64, f64)> {
        solve_line(self.support()?, self.t, self.tt, self.y, self.yt, 0.0, 0.0)
    }

    /// Solves `X0⟨1⟩ + Vx⟨t⟩ = ⟨x⟩`, `X0⟨t⟩ + Vx(⟨t²⟩ + c⟨1⟩) = ⟨xt⟩ + c⟨D⟩`.
    pub fn x_motion(&self, c: f64) -> Result<(f64, f64)> {
        solve_line(self.support()?, self.t, self.tt, self.x, self.xt, c, self.d)
    }
}

/// Weighted line fit in centered form; `c` adds the Doppler pseudo-observation
/// of the slope.
fn solve_line(w: f64, st: f64, stt: f64, sv: f64, svt: f64, c: f64, sd: f64) -> Result<(f64, f64)> {
    let tbar = st / w;
    let vbar = sv / w;
    let var_t = (stt / w - tbar * tbar).max(0.0);
    let cov = svt / w - tbar * vbar;
    let denom = var_t + c;
    let scale = stt / w + c;
    if !(denom > 1e-12 * scale.max(f64::MIN_POSITIVE)) || denom == 0.0 {
        return Err(Error::DegenerateGeometry { det: denom * w * w });
    }
    let slope = (cov + c * sd / w) / denom;
    Ok((vbar - slope * tbar, slope))
}

pub fn update_amplitude(f: &[f64], batch: &Batch) -> Result<f64> {
    Moments::from_column(f, batch).amplitude()
}

pub fn update_y_motion(f: &[f64], batch: &Batch) -> Result<(f64, f64)> {
    Moments::from_column(f, batch).y_motion()
}

/// Returns `(x0, vx)`; the caller sets `d = vx`.
pub fn update_x_motion(f: &[f64], batch: &Batch, c: f64) -> Result<(f64, f64)> {
    if !(c >= 0.0) {
        return Err(Error::config(
            "c",
            format!("coupling must be non-negative, got {c}"),
        ));
    }
    Moments::from_column(f, batch).x_motion(c)
}

pub fn compute_c(h: &TrackHypothesis, cfg: &DLConfig) -> f64 {
    let s = &h.sigma;
    match cfg.c_mode {
        CMode::DerivedXd => (s.x * s.x) / (s.d * s.d),
        CMode::RatioXy => (s.x * s.x) / (s.y * s.y),
        CMode::Unity => 1.0,
    }
}

/// Weighted mean-square residual per dimension around the model `h`,
/// normalized by `⟨1⟩_h`, optionally tied in x/d, then floored.
pub fn update_sigmas(
    f: &[f64],
    batch: &Batch,
    h: &TrackHypothesis,
    cfg: &DLConfig,
) -> Result<Sigmas> {
    if h.is_clutter() {
        return Err(Error::UnsupportedHypothesis);
    }
    assert_eq!(
        f.len(),
        batch.len(),
        "association column length differs from batch"
    );
    let p = &h.params;
    let mut w = 0.0;
    let mut ss = [0.0f64; 4];
    for (&fw, m) in f.iter().zip(batch.measurements()) {
        let e = [
            m.x - (p.x0 + p.vx * m.t),
            m.y - (p.y0 + p.vy * m.t),
            m.a - p.a,
            m.d - p.d,
        ];
        w += fw;
        for k in 0..4 {
            ss[k] += fw * e[k] * e[k];
        }
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::EmptySupport { mass: w });
    }
    let mut var = ss.map(|v| v / w);
    if cfg.tie_sigma_x_d {
        let tied = 0.5 * (var[0] + var[3]);
        var[0] = tied;
        var[3] = tied;
    }
    let floor = cfg.sigma_floor.to_array();
    Ok(Sigmas::from_array(
        [0, 1, 2, 3].map(|k| var[k].sqrt().max(floor[k])),
    ))
}

/// What happened to the roster after one M-step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RosterEvents {
    pub activated: Vec<u32>,
    pub eliminated: Vec<u32>,
    pub pruned: Vec<u32>,
    pub spawned: Vec<u32>,
}

impl RosterEvents {
    pub fn changed(&self) -> bool {
        !(self.activated.is_empty()
            && self.eliminated.is_empty()
            && self.pruned.is_empty()
            && self.spawned.is_empty())
    }

    pub(crate) fn merge(&mut self, other: RosterEvents) {
        self.activated.extend(other.activated);
        self.eliminated.extend(other.eliminated);
        self.pruned.extend(other.pruned);
        self.spawned.extend(other.spawned);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisSnapshot {
    pub id: u32,
    pub status: Status,
    pub prior: f64,
    pub params: TrackParams,
    pub sigma: Sigmas,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Log-likelihood of the hypotheses entering this iteration.
    pub loglik: f64,
    pub num_active: usize,
    pub num_dormant: usize,
    pub hypotheses: Vec<HypothesisSnapshot>,
    /// Lifecycle changes applied after this iteration's M-step.
    pub events: RosterEvents,
    pub underflow_rows: usize,
    /// Density evaluations plus M-step accumulation terms.
    pub ops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loglik).collect()
    }

    pub fn total_ops(&self) -> u64 {
        self.records.iter().map(|r| r.ops).sum()
    }

    /// Consecutive iteration pairs whose hypothesis roster was left unchanged.
    pub fn comparable_pairs(&self) -> impl Iterator<Item = (&IterationRecord, &IterationRecord)> {
        self.records
            .windows(2)
            .filter(|w| !w[0].events.changed())
            .map(|w| (&w[0], &w[1]))
    }
}

#[derive(Debug, Clone)]
pub struct DlOutput {
    pub hypotheses: HypothesisSet,
    pub associations: AssociationMatrix,
    pub trace: IterationTrace,
}

/// Applies the closed-form parameter updates to one active track.
/// Degenerate sub-problems keep their previous values.
pub(crate) fn update_track(
    h: &mut TrackHypothesis,
    f: &[f64],
    batch: &Batch,
    cfg: &DLConfig,
) -> u64 {
    let mom = Moments::from_column(f, batch);
    let mut ops = batch.len() as u64;
    if mom.support().is_err() {
        return ops;
    }
    if let Ok(a) = mom.amplitude() {
        h.params.a = a;
    }
    if let Ok((y0, vy)) = mom.y_motion() {
        h.params.y0 = y0;
        h.params.vy = vy;
    }
    let c = compute_c(h, cfg);
    if let Ok((x0, vx)) = mom.x_motion(c) {
        h.params.x0 = x0;
        h.params.vx = vx;
        h.params.d = vx;
    }
    if let Ok(s) = update_sigmas(f, batch, h, cfg) {
        h.sigma = s;
    }
    ops += batch.len() as u64;
    ops
}

/// One M-step: priors for every hypothesis, parameters for active tracks.
pub fn m_step(hs: &mut HypothesisSet, f: &AssociationMatrix, batch: &Batch, cfg: &DLConfig) -> u64 {
    let priors = update_priors(f);
    let active: Vec<usize> = hs.active().map(|(i, _)| i).collect();
    let columns: Vec<(usize, Vec<f64>)> = active.iter().map(|&i| (i, f.column(i))).collect();
    let updated: Vec<(usize, TrackHypothesis, u64)> = columns
        .par_iter()
        .map(|(i, col)| {
            let mut h = hs.hypotheses()[*i].clone();
            let ops = update_track(&mut h, col, batch, cfg);
            (*i, h, ops)
        })
        .collect();
    let mut ops = (f.rows() * f.cols()) as u64;
    let hyps = hs.hypotheses_mut();
    for (h, r) in hyps.iter_mut().zip(&priors) {
        h.prior = *r;
    }
    for (i, h, o) in updated {
        let prior = hyps[i].prior;
        hyps[i] = h;
        hyps[i].prior = prior;
        ops += o;
    }
    ops
}

fn snapshot(hs: &HypothesisSet) -> Vec<HypothesisSnapshot> {
    hs.hypotheses()
        .iter()
        .map(|h| HypothesisSnapshot {
            id: h.id,
            status: h.status,
            prior: h.prior,
            params: h.params,
            sigma: h.sigma,
        })
        .collect()
}

/// Runs the full iteration from the vague initial models.
pub fn run_dl(batch: &Batch, cfg: &DLConfig) -> Result<DlOutput> {
    let hs = init_hypotheses(batch.bounds(), cfg)?;
    run_dl_from(batch, hs, cfg)
}

/// Runs the iteration from a caller-supplied hypothesis set.
pub fn run_dl_from(batch: &Batch, mut hs: HypothesisSet, cfg: &DLConfig) -> Result<DlOutput> {
    cfg.validate()?;
    let n = batch.len();
    let thresholds = cfg.thresholds(n)?;
    let mut search = Search::new(batch, cfg);
    let mut trace = IterationTrace::default();
    let mut prev: Option<(f64, bool)> = None;

    for iteration in 0..cfg.max_iterations {
        let es = e_step(batch, &hs)?;
        if let Some(&index) = es.underflow_rows.first() {
            return Err(Error::DegenerateLikelihood { index });
        }
        let ll = es.loglik;

        if let Some((prev_ll, roster_changed)) = prev {
            if !roster_changed && ll - prev_ll <= cfg.loglik_rel_tolerance * prev_ll.abs() {
                trace.converged = true;
                trace.records.push(IterationRecord {
                    iteration,
                    loglik: ll,
                    num_active: hs.num_active(),
                    num_dormant: hs.num_dormant(),
                    hypotheses: snapshot(&hs),
                    events: RosterEvents::default(),
                    underflow_rows: es.underflow_rows.len(),
                    ops: (n * hs.len()) as u64,
                });
                return Ok(DlOutput {
                    hypotheses: hs,
                    associations: es.f,
                    trace,
                });
            }
        }

        let snap = snapshot(&hs);
        let num_active = hs.num_active();
        let num_dormant = hs.num_dormant();
        let ops = m_step(&mut hs, &es.f, batch, cfg);
        let mut events = lifecycle_step(&mut hs, &es.f, batch, cfg, thresholds, &mut search);
        events.merge(prune_duplicates(&mut hs, batch, cfg));

        let changed = events.changed();
        trace.records.push(IterationRecord {
            iteration,
            loglik: ll,
            num_active,
            num_dormant,
            hypotheses: snap,
            events,
            underflow_rows: es.underflow_rows.len(),
            ops,
        });
        prev = Some((ll, changed));
    }

    let es = e_step(batch, &hs)?;
    Ok(DlOutput {
        hypotheses: hs,
        associations: es.f,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_batch, Interval, Measurement};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wide() -> MeasurementBounds {
        MeasurementBounds::new(
            Interval::new(-100.0, 100.0),
            Interval::new(-100.0, 100.0),
            Interval::new(0.0, 1.0),
            Interval::new(-10.0, 10.0),
        )
        .unwrap()
    }

    /// One return per `(t, x, y, a, d)` tuple; scan index follows time order.
    fn batch(rows: &[(f64, f64, f64, f64, f64)]) -> Batch {
        let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        times.dedup();
        let ms = rows
            .iter()
            .map(|&(t, x, y, a, d)| Measurement {
                scan: times.iter().position(|&s| s == t).unwrap() as u32,
                t,
                x,
                y,
                a,
                d,
            })
            .collect();
        validate_batch(ms, &wide()).unwrap()
    }

    fn track(params: TrackParams, sigma: Sigmas) -> TrackHypothesis {
        TrackHypothesis::track(1, Status::Active, params, sigma, 0.5)
    }

    #[test]
    fn init_examples() {
        let b = MeasurementBounds::new(
            Interval::new(0.0, 500.0),
            Interval::new(0.0, 500.0),
            Interval::new(0.0, 1.0),
            Interval::new(-10.0, 10.0),
        )
        .unwrap();
        let hs = init_hypotheses(&b, &DLConfig::default()).unwrap();
        assert_eq!(hs.len(), 3);
        assert_eq!(hs.num_active(), 1);
        assert_eq!(hs.num_dormant(), 1);
        let t = &hs.hypotheses()[1];
        assert_eq!(t.sigma.x, 250.0);
        assert_eq!(t.params.x0, 250.0);
        assert_eq!(t.sigma.d, 10.0);
        assert_eq!((t.params.vx, t.params.vy, t.params.d), (0.0, 0.0, 0.0));
        for h in hs.hypotheses() {
            assert_relative_eq!(h.prior, 1.0 / 3.0);
        }
        let cfg = DLConfig {
            dormant_count: 4,
            ..DLConfig::default()
        };
        let hs = init_hypotheses(&b, &cfg).unwrap();
        assert_eq!(hs.len(), 6);
        assert!(hs.priors().iter().all(|&r| r == 1.0 / 6.0));
    }

    #[test]
    fn e_step_examples() {
        let b = batch(&[(0.0, 1.0, 2.0, 0.5, 0.0), (1.0, -3.0, 4.0, 0.2, 1.0)]);
        let hs = HypothesisSet::new(1.0, vec![]);
        let es = e_step(&b, &hs).unwrap();
        assert_eq!(es.f.column(0), vec![1.0, 1.0]);

        // identical tracks split evenly
        let t = track(
            TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.5),
            Sigmas::splat(3.0),
        );
        let mut t2 = t.clone();
        t2.id = 2;
        let hs = HypothesisSet::new(0.0, vec![t.clone(), t2]);
        let mut hs = hs;
        hs.hypotheses_mut()[0].prior = 0.0;
        hs.hypotheses_mut()[1].prior = 0.5;
        hs.hypotheses_mut()[2].prior = 0.5;
        let es = e_step(&b, &hs).unwrap();
        for i in 0..2 {
            assert_relative_eq!(es.f.get(i, 1), 0.5, max_relative = 1e-15);
            assert_relative_eq!(es.f.get(i, 2), 0.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn e_step_posterior_arithmetic() {
        // clutter density = 1/(200·200·1·20) = 1.25e-6; pick a track density
        // of 1e-3 by choosing its sigma; r = (0.8, 0.2)
        let b = batch(&[(0.0, 0.0, 0.0, 0.5, 0.0)]);
        let clutter = 1.0 / (200.0 * 200.0 * 20.0);
        // zero residual: pdf = (2π)^-2 / Πσ; choose σ = s in all dims
        let target: f64 = 1e-3;
        let s = ((2.0 * std::f64::consts::PI).powi(-2) / target).powf(0.25);
        let t = track(TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.5), Sigmas::splat(s));
        let mut hs = HypothesisSet::new(0.8, vec![t]);
        hs.hypotheses_mut()[1].prior = 0.2;
        let es = e_step(&b, &hs).unwrap();
        let expect = 0.2 * target / (0.8 * clutter + 0.2 * target);
        assert_relative_eq!(es.f.get(0, 1), expect, max_relative = 1e-12);
        assert_relative_eq!(
            es.loglik,
            (0.8 * clutter + 0.2 * target).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn weighted_moment_examples() {
        assert_eq!(weighted_moment(&[1.0; 4], &[1.0; 4]), 4.0);
        assert_eq!(weighted_moment(&[0.0; 4], &[3.0; 4]), 0.0);
        assert_eq!(weighted_moment(&[1.0, 0.0, 0.5, 0.5], &[1.0; 4]), 2.0);
    }

    #[test]
    fn prior_examples() {
        let f = AssociationMatrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        ]);
        assert_eq!(update_priors(&f), vec![0.5, 0.5]);
        let f = AssociationMatrix::from_rows(&vec![vec![0.25; 4]; 7]);
        assert!(update_priors(&f).iter().all(|&r| (r - 0.25).abs() < 1e-15));
    }

    #[test]
    fn amplitude_examples() {
        let b = batch(&[(0.0, 0.0, 0.0, 0.2, 0.0), (1.0, 0.0, 0.0, 0.4, 0.0)]);
        assert_relative_eq!(
            update_amplitude(&[1.0, 1.0], &b).unwrap(),
            0.3,
            max_relative = 1e-15
        );
        let b = batch(&[
            (0.0, 0.0, 0.0, 0.2, 0.0),
            (1.0, 0.0, 0.0, 0.6, 0.0),
            (2.0, 0.0, 0.0, 0.9, 0.0),
        ]);
        assert_relative_eq!(
            update_amplitude(&[0.5, 0.5, 0.0], &b).unwrap(),
            0.4,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            update_amplitude(&[0.0, 0.0, 1.0], &b).unwrap(),
            0.9,
            max_relative = 1e-15
        );
        assert!(matches!(
            update_amplitude(&[0.0; 3], &b),
            Err(Error::EmptySupport { .. })
        ));
    }

    #[test]
    fn y_motion_examples() {
        let b = batch(&[
            (0.0, 0.0, 2.0, 0.5, 0.0),
            (1.0, 0.0, 5.0, 0.5, 0.0),
            (2.0, 0.0, 8.0, 0.5, 0.0),
        ]);
        let (y0, vy) = update_y_motion(&[1.0; 3], &b).unwrap();
        assert_relative_eq!(y0, 2.0, epsilon = 1e-12);
        assert_relative_eq!(vy, 3.0, epsilon = 1e-12);

        let b = batch(&[(0.0, 0.0, 5.0, 0.5, 0.0), (0.0, 0.0, 5.0, 0.5, 0.0)]);
        assert!(matches!(
            update_y_motion(&[1.0, 1.0], &b),
            Err(Error::DegenerateGeometry { .. })
        ));
    }

    /// Unweighted least squares through the raw normal equations.
    fn normal_equation_fit(t: &[f64], v: &[f64]) -> (f64, f64) {
        let n = t.len() as f64;
        let st: f64 = t.iter().sum();
        let stt: f64 = t.iter().map(|x| x * x).sum();
        let sv: f64 = v.iter().sum();
        let svt: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
        let det = n * stt - st * st;
        ((sv * stt - st * svt) / det, (n * svt - st * sv) / det)
    }

    #[test]
    fn y_motion_matches_least_squares_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<_> = (0..12)
            .map(|k| {
                let t = 1.5 * k as f64;
                (t, 0.0, -20.0 + 2.5 * t + rng.gen_range(-3.0..3.0), 0.5, 0.0)
            })
            .collect();
        let b = batch(&rows);
        let (y0, vy) = update_y_motion(&[1.0; 12], &b).unwrap();
        let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let (ey0, evy) = normal_equation_fit(&t, &y);
        assert!((y0 - ey0).abs() < 1e-10 && (vy - evy).abs() < 1e-10);
    }

    #[test]
    fn x_motion_examples() {
        let consistent = batch(&[
            (0.0, 1.0, 0.0, 0.5, 2.0),
            (1.0, 3.0, 0.0, 0.5, 2.0),
            (2.0, 5.0, 0.0, 0.5, 2.0),
        ]);
        for c in [0.0, 0.3, 1.0, 50.0] {
            let (x0, vx) = update_x_motion(&[1.0; 3], &consistent, c).unwrap();
            assert_relative_eq!(x0, 1.0, epsilon = 1e-12);
            assert_relative_eq!(vx, 2.0, epsilon = 1e-12);
        }
        let conflicting = batch(&[
            (0.0, 1.0, 0.0, 0.5, 4.0),
            (1.0, 3.0, 0.0, 0.5, 4.0),
            (2.0, 5.0, 0.0, 0.5, 4.0),
        ]);
        let (x0, vx) = update_x_motion(&[1.0; 3], &conflicting, 1.0).unwrap();
        assert_relative_eq!(x0, -0.2, epsilon = 1e-12);
        assert_relative_eq!(vx, 3.2, epsilon = 1e-12);
        assert!(update_x_motion(&[1.0; 3], &conflicting, -1.0).is_err());

        // one time instant is solvable once the Doppler pins the slope
        let single = batch(&[(0.0, 4.0, 0.0, 0.5, 1.5), (0.0, 6.0, 0.0, 0.5, 1.5)]);
        let (x0, vx) = update_x_motion(&[1.0, 1.0], &single, 1.0).unwrap();
        assert_relative_eq!(x0, 5.0, epsilon = 1e-12);
        assert_relative_eq!(vx, 1.5, epsilon = 1e-12);
        assert!(update_x_motion(&[1.0, 1.0], &single, 0.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        let cfg = DLConfig {
            sigma_floor: Sigmas::splat(1e-6),
            ..DLConfig::default()
        };
        let h = track(
            TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.5),
            Sigmas::splat(1.0),
        );
        let b = batch(&[(0.0, 1.0, 0.0, 0.5, 0.0), (1.0, -1.0, 0.0, 0.5, 0.0)]);
        let s = update_sigmas(&[1.0, 1.0], &b, &h, &cfg).unwrap();
        assert_relative_eq!(s.x * s.x, 1.0, max_relative = 1e-15);
        assert_eq!(s.y, 1e-6);

        let exact = batch(&[(0.0, 0.0, 0.0, 0.5, 0.0), (1.0, 0.0, 0.0, 0.5, 0.0)]);
        let s = update_sigmas(&[1.0, 1.0], &exact, &h, &DLConfig::default()).unwrap();
        assert_eq!(s, DLConfig::default().sigma_floor);

        assert!(matches!(
            update_sigmas(&[0.0, 0.0], &exact, &h, &cfg),
            Err(Error::EmptySupport { .. })
        ));
        assert!(update_sigmas(&[1.0, 1.0], &exact, &TrackHypothesis::clutter(0.5), &cfg).is_err());

        let tied = DLConfig {
            tie_sigma_x_d: true,
            ..cfg.clone()
        };
        let b = batch(&[(0.0, 2.0, 0.0, 0.5, 0.0), (1.0, 2.0, 0.0, 0.5, 0.0)]);
        let s = update_sigmas(&[1.0, 1.0], &b, &h, &tied).unwrap();
        assert_relative_eq!(s.x, 2.0f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s.d, 2.0f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn sigmas_match_weighted_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = DLConfig {
            sigma_floor: Sigmas::splat(1e-9),
            ..DLConfig::default()
        };
        let p = TrackParams::new(3.0, -4.0, 1.5, -0.5, 0.4);
        let h = track(p, Sigmas::splat(1.0));
        let rows: Vec<_> = (0..20)
            .map(|k| {
                let t = k as f64;
                (
                    t,
                    3.0 + 1.5 * t + rng.gen_range(-5.0..5.0),
                    -4.0 - 0.5 * t + rng.gen_range(-5.0..5.0),
                    0.4 + rng.gen_range(-0.3..0.3),
                    1.5 + rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let b = batch(&rows);
        let f: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = update_sigmas(&f, &b, &h, &cfg).unwrap();
        let w: f64 = f.iter().sum();
        type Row = (f64, f64, f64, f64, f64);
        let var = |res: &dyn Fn(&Row) -> f64| {
            rows.iter()
                .zip(&f)
                .map(|(r, wi)| wi * res(r).powi(2))
                .sum::<f64>()
                / w
        };
        let vx = var(&|r| r.1 - 3.0 - 1.5 * r.0);
        let vy = var(&|r| r.2 + 4.0 + 0.5 * r.0);
        let va = var(&|r| r.3 - 0.4);
        let vd = var(&|r| r.4 - 1.5);
        assert_relative_eq!(s.x * s.x, vx, max_relative = 1e-12);
        assert_relative_eq!(s.y * s.y, vy, max_relative = 1e-12);
        assert_relative_eq!(s.a * s.a, va, max_relative = 1e-12);
        assert_relative_eq!(s.d * s.d, vd, max_relative = 1e-12);
    }

    #[test]
    fn c_modes() {
        let h = track(
            TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.5),
            Sigmas::new(2.0, 4.0, 0.1, 1.0),
        );
        let mut cfg = DLConfig::default();
        assert_eq!(compute_c(&h, &cfg), 4.0);
        cfg.c_mode = CMode::RatioXy;
        assert_eq!(compute_c(&h, &cfg), 0.25);
        cfg.c_mode = CMode::Unity;
        assert_eq!(compute_c(&h, &cfg), 1.0);
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = |f: fn(&mut DLConfig)| {
            let mut c = DLConfig::default();
            f(&mut c);
            c.validate().unwrap_err().to_string()
        };
        assert!(bad(|c| c.max_iterations = 0).contains("max_iterations"));
        assert!(bad(|c| c.sigma_floor.d = -1.0).contains("sigma_floor.d"));
        assert!(bad(|c| c.elimination_threshold = Threshold::Support(5.0))
            .contains("elimination_threshold"));
        assert!(bad(|c| c.probe_fraction = 2.0).contains("probe_fraction"));
        assert!(bad(|c| c.dormant_count = 0).contains("dormant_count"));
        DLConfig::default().validate().unwrap();
        assert_eq!(Threshold::Support(3.0).resolve(100), 0.03);
        assert_eq!(DLConfig::default().thresholds(100).unwrap(), (0.03, 0.015));
        assert!(DLConfig::default().thresholds(2).is_err());
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let ok: DLConfig = serde_json::from_str(r#"{"max_iterations": 7}"#).unwrap();
        assert_eq!(ok.max_iterations, 7);
        assert_eq!(ok.c_mode, CMode::DerivedXd);
        let err = serde_json::from_str::<DLConfig>(r#"{"max_iteration": 7}"#).unwrap_err();
        assert!(err.to_string().contains("max_iteration"));
        let t: DLConfig = serde_json::from_str(
            r#"{"activation_threshold": {"prior": 0.2}, "c_mode": "ratio_xy"}"#,
        )
        .unwrap();
        assert_eq!(t.activation_threshold, Threshold::Prior(0.2));
        assert_eq!(t.c_mode, CMode::RatioXy);
    }

    fn line_batch(noise: f64, clutter: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for k in 0..6 {
            let t = 2.0 * k as f64;
            for _ in 0..clutter {
                rows.push((
                    t,
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(-100.0..100.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-10.0..10.0),
                ));
            }
            rows.push((
                t,
                -40.0 + 5.0 * t + noise * rng.gen_range(-1.0..1.0),
                10.0 - 2.0 * t + noise * rng.gen_range(-1.0..1.0),
                0.8,
                5.0 + noise * rng.gen_range(-0.1..0.1),
            ));
        }
        batch(&rows)
    }

    #[test]
    fn run_is_deterministic_and_keeps_invariants() {
        let b = line_batch(1.0, 20, 3);
        let cfg = DLConfig {
            sigma_floor: Sigmas::new(1.0, 1.0, 0.05, 0.2),
            ..DLConfig::default()
        };
        let a = run_dl(&b, &cfg).unwrap();
        let again = run_dl(&b, &cfg).unwrap();
        assert_eq!(a.trace, again.trace);
        assert_eq!(a.hypotheses, again.hypotheses);
        a.hypotheses.check_invariants(1e-12).unwrap();
        assert!(a.associations.max_row_error() < 1e-12);
        for (p, q) in a.trace.comparable_pairs() {
            assert!(
                q.loglik >= p.loglik - 1e-9 * p.loglik.abs(),
                "{} -> {}",
                p.loglik,
                q.loglik
            );
        }
        for r in &a.trace.records {
            let s: f64 = r.hypotheses.iter().map(|h| h.prior).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clutter_only_batch_yields_no_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<_> = (0..6)
            .flat_map(|k| {
                (0..30)
                    .map(|_| {
                        (
                            2.0 * k as f64,
                            rng.gen_range(-100.0..100.0),
                            rng.gen_range(-100.0..100.0),
                            rng.gen_range(0.0..1.0),
                            rng.gen_range(-10.0..10.0),
                        )
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let b = batch(&rows);
        let out = run_dl(&b, &DLConfig::default()).unwrap();
        let report = crate::track_manager::declare_detections(&out.hypotheses, &b, 0.0).unwrap();
        assert_eq!(report.num_detected(), 0, "{:?}", report.tracks);
    }
}
