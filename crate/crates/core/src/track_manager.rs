//! Track lifecycle and detection.
//!
//! Dormant models only have their prior re-estimated; once the prior climbs
//! over the activation threshold the model starts adapting. Active models
//! whose prior falls under the elimination threshold are dropped, and crisp
//! models that collapsed onto each other or onto a couple of points are
//! pruned. Detection uses a local log-likelihood ratio against clutter over
//! the returns gated within two standard deviations of a track.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{vague_track, DLConfig, RosterEvents};
use crate::error::Result;
use crate::likelihood::{clutter_log_pdf, predict, GaussianTerm};
use crate::model::{
    AssociationMatrix, Batch, HypothesisSet, Sigmas, Status, TrackHypothesis, TrackParams,
};

/// Per-run state of the dormant-model search: a seeded sweep over the
/// batch, plus the iteration at which each probe was spawned.
#[derive(Debug, Clone)]
pub struct Search {
    order: Vec<usize>,
    cursor: usize,
    per_iteration: usize,
    born: HashMap<u32, usize>,
    iteration: usize,
    culled: bool,
}

impl Search {
    pub fn new(batch: &Batch, cfg: &DLConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.shuffle(&mut rng);
        let per_iteration = if cfg.probe_fraction > 0.0 {
            ((cfg.probe_fraction * batch.len() as f64).ceil() as usize).max(1)
        } else {
            order.clear();
            0
        };
        Self {
            order,
            cursor: 0,
            per_iteration,
            born: HashMap::new(),
            iteration: 0,
            culled: false,
        }
    }

    /// True once every seed has been tried.
    pub fn exhausted(&self) -> bool {
        self.cursor >= self.order.len()
    }
}

/// Activates, eliminates and spawns models from the current priors.
///
/// `f` holds the associations the priors were re-estimated from and
/// `thresholds` is the resolved `(activation, elimination)` pair. While the
/// seed sweep lasts, each call spawns probes from the next slice of seeds;
/// a probe that has not been activated within `probe_patience` re-estimates
/// is dropped. When the sweep is over and every probe has been resolved,
/// active tracks that never sharpened are eliminated, and from then on a
/// vague dormant model is kept around.
pub fn lifecycle_step(
    hs: &mut HypothesisSet,
    f: &AssociationMatrix,
    batch: &Batch,
    cfg: &DLConfig,
    thresholds: (f64, f64),
    search: &mut Search,
) -> RosterEvents {
    let (activation, elimination) = thresholds;
    let n = batch.len();
    let mut events = RosterEvents::default();
    let explained = explained_rows(hs, f, cfg);

    let room = cfg.max_active.saturating_sub(hs.num_active());
    let mut candidates: Vec<(usize, f64)> = hs
        .hypotheses()
        .iter()
        .enumerate()
        .filter(|(_, h)| h.is_dormant() && h.prior > activation)
        .map(|(i, h)| (i, h.prior))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (i, _) in candidates.into_iter().take(room) {
        let h = &mut hs.hypotheses_mut()[i];
        h.status = Status::Active;
        search.born.remove(&h.id);
        events.activated.push(h.id);
    }

    let mut doomed = Vec::new();
    for (i, h) in hs.hypotheses().iter().enumerate() {
        if h.is_active() && h.prior < elimination && !events.activated.contains(&h.id) {
            doomed.push(i);
            events.eliminated.push(h.id);
        } else if h.is_dormant() {
            if let Some(&born) = search.born.get(&h.id) {
                if search.iteration - born >= cfg.probe_patience {
                    doomed.push(i);
                    events.eliminated.push(h.id);
                }
            }
        }
    }
    for id in &events.eliminated {
        search.born.remove(id);
    }
    hs.remove_indices(&doomed);

    let prior = cfg.spawn_prior.resolve(n);
    let end = (search.cursor + search.per_iteration).min(search.order.len());
    for k in search.cursor..end {
        let seed = search.order[k];
        if explained[seed] {
            continue;
        }
        if let Some(params) = probe_params(batch, seed, &cfg.sigma_floor) {
            let id = hs.next_id();
            let sigma = Sigmas::from_array(
                cfg.sigma_floor
                    .to_array()
                    .map(|s| s * cfg.probe_sigma_factor),
            );
            hs.push_track(TrackHypothesis::track(
                id,
                Status::Dormant,
                params,
                sigma,
                prior,
            ));
            search.born.insert(id, search.iteration);
            events.spawned.push(id);
        }
    }
    search.cursor = end;

    if search.per_iteration > 0 && search.exhausted() && search.born.is_empty() && !search.culled {
        search.culled = true;
        let vague: Vec<usize> = hs
            .active()
            .filter(|(_, h)| !is_crisp(h, cfg))
            .map(|(i, _)| i)
            .collect();
        events
            .eliminated
            .extend(vague.iter().map(|&i| hs.hypotheses()[i].id));
        hs.remove_indices(&vague);
    }

    if search.exhausted() && hs.num_dormant() == 0 {
        let id = hs.next_id();
        hs.push_track(vague_track(id, Status::Dormant, batch.bounds(), prior));
        events.spawned.push(id);
    }
    search.iteration += 1;
    hs.renormalize();
    events
}

/// Rows mostly claimed by crisp active tracks; they are not used as seeds.
fn explained_rows(hs: &HypothesisSet, f: &AssociationMatrix, cfg: &DLConfig) -> Vec<bool> {
    let crisp: Vec<usize> = hs
        .active()
        .filter(|(_, h)| is_crisp(h, cfg))
        .map(|(i, _)| i)
        .collect();
    (0..f.rows())
        .map(|r| {
            let row = f.row(r);
            crisp.iter().map(|&h| row[h]).sum::<f64>() > 0.5
        })
        .collect()
}

/// Tracklet through the seed and its best-matching return from another
/// scan, or `None` when no return is compatible.
///
/// A partner must agree with the seed within three combined floor sigmas in
/// amplitude, Doppler and the range displacement implied by the mean
/// Doppler, and its cross-range displacement must be reachable at the
/// largest Doppler speed the bounds allow.
pub fn probe_params(batch: &Batch, seed: usize, floor: &Sigmas) -> Option<TrackParams> {
    let ms = batch.measurements();
    let m1 = &ms[seed];
    let bounds = batch.bounds();
    let vmax = bounds.d.min.abs().max(bounds.d.max.abs());
    let (sx, sy, sa, sd) = (floor.x, floor.y, floor.a, floor.d);
    let mut best: Option<(f64, usize)> = None;
    for (j, m2) in ms.iter().enumerate() {
        if m2.scan == m1.scan {
            continue;
        }
        let dt = m2.t - m1.t;
        if dt == 0.0 {
            continue;
        }
        let ea = (m2.a - m1.a) / (std::f64::consts::SQRT_2 * sa);
        let ed = (m2.d - m1.d) / (std::f64::consts::SQRT_2 * sd);
        if ea.abs() > 3.0 || ed.abs() > 3.0 {
            continue;
        }
        let dbar = 0.5 * (m1.d + m2.d);
        let sex = (2.0 * sx * sx + 0.5 * (sd * dt).powi(2)).sqrt();
        let ex = (m2.x - m1.x - dbar * dt) / sex;
        if ex.abs() > 3.0 {
            continue;
        }
        if (m2.y - m1.y).abs() > vmax * dt.abs() + 3.0 * std::f64::consts::SQRT_2 * sy {
            continue;
        }
        let score = ea * ea + ed * ed + ex * ex;
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, j));
        }
    }
    let (_, j) = best?;
    let m2 = &ms[j];
    let dt = m2.t - m1.t;
    let vx = 0.5 * (m1.d + m2.d);
    let vy = (m2.y - m1.y) / dt;
    let x0 = 0.5 * ((m1.x - vx * m1.t) + (m2.x - vx * m2.t));
    let y0 = 0.5 * ((m1.y - vy * m1.t) + (m2.y - vy * m2.t));
    Some(TrackParams::new(x0, y0, vx, vy, 0.5 * (m1.a + m2.a)))
}

fn is_crisp(h: &TrackHypothesis, cfg: &DLConfig) -> bool {
    let s = h.sigma.to_array();
    let f = cfg.sigma_floor.to_array();
    (0..4).all(|k| s[k] < cfg.crisp_factor * f[k])
}

/// True when the two tracks predict within `gate` combined standard
/// deviations of each other in every dimension at every scan time.
pub fn tracks_coincide(a: &TrackHypothesis, b: &TrackHypothesis, times: &[f64], gate: f64) -> bool {
    let sa = a.sigma.to_array();
    let sb = b.sigma.to_array();
    let tol: Vec<f64> = (0..4)
        .map(|k| gate * (sa[k] * sa[k] + sb[k] * sb[k]).sqrt())
        .collect();
    times.iter().all(|&t| {
        let (Ok(pa), Ok(pb)) = (predict(a, t), predict(b, t)) else {
            return false;
        };
        (0..4).all(|k| (pa[k] - pb[k]).abs() < tol[k])
    })
}

/// Removes crisp duplicates (keeping the larger prior) and crisp tracks
/// whose supporting mass `r·N` is below `cfg.min_support`.
pub fn prune_duplicates(hs: &mut HypothesisSet, batch: &Batch, cfg: &DLConfig) -> RosterEvents {
    let times: Vec<f64> = batch.scan_times().iter().map(|&(_, t)| t).collect();
    let n = batch.len() as f64;
    let hyps = hs.hypotheses();
    let eligible: Vec<usize> = hyps
        .iter()
        .enumerate()
        .filter(|(_, h)| h.is_active() && is_crisp(h, cfg))
        .map(|(i, _)| i)
        .collect();

    let mut removed: Vec<usize> = Vec::new();
    for (k, &i) in eligible.iter().enumerate() {
        for &j in &eligible[k + 1..] {
            if removed.contains(&i) || removed.contains(&j) {
                continue;
            }
            if tracks_coincide(&hyps[i], &hyps[j], &times, cfg.duplicate_gate) {
                // ties go to the older track
                let loser = if hyps[j].prior > hyps[i].prior { i } else { j };
                removed.push(loser);
            }
        }
    }
    for &i in &eligible {
        if !removed.contains(&i) && hyps[i].prior * n < cfg.min_support {
            removed.push(i);
        }
    }
    removed.sort_unstable();

    let mut events = RosterEvents::default();
    if removed.is_empty() {
        return events;
    }
    events.pruned = removed.iter().map(|&i| hyps[i].id).collect();
    hs.remove_indices(&removed);
    hs.renormalize();
    events
}

/// Local log-likelihood ratio of one track against clutter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackLlr {
    pub llr: f64,
    /// Batch indices within two standard deviations in every dimension.
    pub gate: Vec<usize>,
}

pub fn compute_llr(h: &TrackHypothesis, batch: &Batch) -> Result<TrackLlr> {
    h.sigma.check_positive()?;
    let clutter = clutter_log_pdf(batch.bounds())?;
    let gauss = GaussianTerm::new(&h.sigma);
    let lim = h.sigma.to_array().map(|s| 2.0 * s);
    let mut gate = Vec::new();
    let mut llr = 0.0;
    for (i, m) in batch.measurements().iter().enumerate() {
        let p = predict(h, m.t)?;
        let e = [m.x - p[0], m.y - p[1], m.a - p[2], m.d - p[3]];
        if (0..4).all(|k| e[k].abs() <= lim[k]) {
            gate.push(i);
            llr += gauss.log_pdf(&e) - clutter;
        }
    }
    Ok(TrackLlr { llr, gate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackDetection {
    pub track_id: u32,
    pub llr: f64,
    pub gate: Vec<usize>,
    pub detected: bool,
    pub params: TrackParams,
    pub sigma: crate::model::Sigmas,
}

/// Every active track with its LLR, sorted by LLR descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectionReport {
    pub tracks: Vec<TrackDetection>,
    pub threshold: f64,
}

impl DetectionReport {
    pub fn detected(&self) -> impl Iterator<Item = &TrackDetection> {
        self.tracks.iter().filter(|t| t.detected)
    }

    pub fn num_detected(&self) -> usize {
        self.detected().count()
    }

    /// Re-applies a different threshold without recomputing LLRs.
    pub fn with_threshold(&self, threshold: f64) -> DetectionReport {
        let mut r = self.clone();
        r.threshold = threshold;
        for t in &mut r.tracks {
            t.detected = t.llr > threshold;
        }
        r
    }
}

pub fn declare_detections(
    hs: &HypothesisSet,
    batch: &Batch,
    llr_threshold: f64,
) -> Result<DetectionReport> {
    let mut tracks = Vec::new();
    for (_, h) in hs.active() {
        let l = compute_llr(h, batch)?;
        tracks.push(TrackDetection {
            track_id: h.id,
            llr: l.llr,
            gate: l.gate,
            detected: l.llr > llr_threshold,
            params: h.params,
            sigma: h.sigma,
        });
    }
    tracks.sort_by(|a, b| b.llr.total_cmp(&a.llr).then(a.track_id.cmp(&b.track_id)));
    Ok(DetectionReport {
        tracks,
        threshold: llr_threshold,
    })
}
