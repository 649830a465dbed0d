//! Truth matching, Monte-Carlo ROC curves and complexity measurement.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{e_step, m_step, run_dl, DLConfig};
use crate::error::{Error, Result};
use crate::model::{validate_batch, HypothesisSet, Sigmas, Status, TrackHypothesis, TrackParams};
use crate::scenario::{derive_seed, generate, GroundTruth, ScenarioConfig};
use crate::track_manager::{declare_detections, TrackDetection};

/// Gates for accepting a detection as a given truth target. Errors are
/// measured at the middle of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchCriteria {
    pub position_gate: f64,
    pub velocity_gate: f64,
    #[serde(default)]
    pub amplitude_gate: Option<f64>,
}

impl MatchCriteria {
    /// Four sensor position sigmas, and four sigmas over the batch duration
    /// for velocity.
    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        let sigma = cfg.sensor_noise.x.max(cfg.sensor_noise.y);
        Self {
            position_gate: 4.0 * sigma,
            velocity_gate: 4.0 * sigma / cfg.duration().max(f64::MIN_POSITIVE),
            amplitude_gate: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_gate > 0.0) {
            return Err(Error::config("match.position_gate", "must be positive"));
        }
        if !(self.velocity_gate > 0.0) {
            return Err(Error::config("match.velocity_gate", "must be positive"));
        }
        if let Some(g) = self.amplitude_gate {
            if !(g > 0.0) {
                return Err(Error::config("match.amplitude_gate", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(track_id, target_id)`, in the order the matches were made.
    pub matches: Vec<(u32, u32)>,
    pub false_detections: Vec<u32>,
    pub missed: Vec<u32>,
}

fn position_at(p: &TrackParams, t: f64) -> (f64, f64) {
    (p.x0 + p.vx * t, p.y0 + p.vy * t)
}

/// Greedy one-to-one matching in descending LLR order (ties broken by track
/// id). `t_mid` is the time at which position errors are evaluated.
pub fn match_tracks(
    detections: &[TrackDetection],
    truth: &GroundTruth,
    t_mid: f64,
    criteria: &MatchCriteria,
) -> MatchResult {
    let mut order: Vec<&TrackDetection> = detections.iter().collect();
    order.sort_by(|a, b| b.llr.total_cmp(&a.llr).then(a.track_id.cmp(&b.track_id)));
    let mut taken = vec![false; truth.targets.len()];
    let mut out = MatchResult::default();
    for det in order {
        let (px, py) = position_at(&det.params, t_mid);
        let mut best: Option<(f64, usize)> = None;
        for (k, tgt) in truth.targets.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let s = &tgt.spec;
            let (tx, ty) = (s.x0 + s.vx * t_mid, s.y0 + s.vy * t_mid);
            let pos_err = (px - tx).hypot(py - ty);
            let vel_err = (det.params.vx - s.vx).hypot(det.params.vy - s.vy);
            let amp_ok = criteria
                .amplitude_gate
                .is_none_or(|g| (det.params.a - s.amplitude).abs() < g);
            if pos_err < criteria.position_gate
                && vel_err < criteria.velocity_gate
                && amp_ok
                && best.is_none_or(|(e, _)| pos_err < e)
            {
                best = Some((pos_err, k));
            }
        }
        match best {
            Some((_, k)) => {
                taken[k] = true;
                out.matches.push((det.track_id, truth.targets[k].target_id));
            }
            None => out.false_detections.push(det.track_id),
        }
    }
    out.missed = truth
        .targets
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(t, _)| t.target_id)
        .collect();
    out
}

/// LLRs of one trial's tracks, flagged by whether greedy matching over all
/// tracks paired them with a target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub replica: u64,
    pub targets: usize,
    pub tracks: Vec<(f64, bool)>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs one replica end to end. Because matching is greedy in LLR order,
/// the matched flags of any LLR-threshold prefix coincide with matching
/// that prefix alone, so thresholds can be swept afterwards.
pub fn run_trial(
    scenario: &ScenarioConfig,
    dl: &DLConfig,
    criteria: &MatchCriteria,
    replica: u64,
) -> Result<TrialOutcome> {
    let sc = generate(&scenario.replica(replica))?;
    let mut cfg = dl.clone();
    cfg.rng_seed = derive_seed(dl.rng_seed, replica);
    let out = run_dl(&sc.batch, &cfg)?;
    let report = declare_detections(&out.hypotheses, &sc.batch, f64::NEG_INFINITY)?;
    let t_mid = mid_time(&sc.batch);
    let m = match_tracks(&report.tracks, &sc.truth, t_mid, criteria);
    let tracks = report
        .tracks
        .iter()
        .map(|t| (t.llr, m.matches.iter().any(|&(id, _)| id == t.track_id)))
        .collect();
    Ok(TrialOutcome {
        replica,
        targets: sc.truth.targets.len(),
        tracks,
        iterations: out.trace.iterations(),
        converged: out.trace.converged,
    })
}

/// Midpoint between the first and last scan times.
pub fn mid_time(batch: &crate::model::Batch) -> f64 {
    let ts = batch.scan_times();
    match (ts.first(), ts.last()) {
        (Some(a), Some(b)) => 0.5 * (a.1 + b.1),
        _ => 0.0,
    }
}

/// Trials run in parallel; results come back in replica order.
pub fn run_trials(
    scenario: &ScenarioConfig,
    dl: &DLConfig,
    criteria: &MatchCriteria,
    trials: usize,
) -> Result<Vec<TrialOutcome>> {
    if trials < 1 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    criteria.validate()?;
    (0..trials as u64)
        .into_par_iter()
        .map(|r| run_trial(scenario, dl, criteria, r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub llr_threshold: f64,
    pub pd: f64,
    pub pfa_per_batch: f64,
    /// False detections per trial per square kilometre of surveillance area.
    pub pfa_per_area: f64,
    pub trials: usize,
}

/// Sweeps `thresholds` over cached trial outcomes. Points come back sorted
/// by ascending threshold; a track counts as detected when `llr > threshold`.
pub fn roc_from_trials(
    outcomes: &[TrialOutcome],
    thresholds: &[f64],
    area_km2: f64,
) -> Result<Vec<RocPoint>> {
    if thresholds.is_empty() {
        return Err(Error::config("thresholds", "must not be empty"));
    }
    if outcomes.is_empty() {
        return Err(Error::config("trials", "must be at least 1"));
    }
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    let trials = outcomes.len();
    let targets: usize = outcomes.iter().map(|o| o.targets).sum();
    Ok(ts
        .into_iter()
        .map(|thr| {
            let (mut hits, mut false_alarms) = (0usize, 0usize);
            for o in outcomes {
                for &(llr, matched) in &o.tracks {
                    if llr > thr {
                        if matched {
                            hits += 1;
                        } else {
                            false_alarms += 1;
                        }
                    }
                }
            }
            let pfa = false_alarms as f64 / trials as f64;
            RocPoint {
                llr_threshold: thr,
                pd: if targets > 0 {
                    hits as f64 / targets as f64
                } else {
                    0.0
                },
                pfa_per_batch: pfa,
                pfa_per_area: pfa / area_km2,
                trials,
            }
        })
        .collect())
}

pub fn roc_curve(
    scenario: &ScenarioConfig,
    dl: &DLConfig,
    criteria: &MatchCriteria,
    thresholds: &[f64],
    trials: usize,
) -> Result<Vec<RocPoint>> {
    if thresholds.is_empty() {
        return Err(Error::config("thresholds", "must not be empty"));
    }
    let outcomes = run_trials(scenario, dl, criteria, trials)?;
    roc_from_trials(
        &outcomes,
        thresholds,
        scenario.area_width * scenario.area_height / 1e6,
    )
}

/// Pd at a given false-alarm rate, read off a ROC curve as the best pd
/// among points whose pfa does not exceed `pfa`.
pub fn pd_at_pfa(curve: &[RocPoint], pfa: f64) -> f64 {
    curve
        .iter()
        .filter(|p| p.pfa_per_batch <= pfa)
        .map(|p| p.pd)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub iters: usize,
    pub ops_per_iter: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    /// N sweep at `fixed_h`.
    pub n_rows: Vec<ComplexityRow>,
    /// H sweep at `fixed_n`.
    pub h_rows: Vec<ComplexityRow>,
    pub fixed_h: usize,
    pub fixed_n: usize,
    pub n_fit: LinearFit,
    pub h_fit: LinearFit,
    pub n_wall_fit: LinearFit,
}

impl ComplexityReport {
    pub fn rows(&self) -> impl Iterator<Item = &ComplexityRow> {
        self.n_rows.iter().chain(&self.h_rows)
    }
}

/// Iterations timed per (N, H) cell.
pub const PROBE_ITERATIONS: usize = 5;

/// Times E-step plus M-step iterations on a fixed roster of `h` hypotheses
/// (clutter and `h − 1` active tracks) over the first `n` returns of a
/// scenario. Operation counts come from the instrumented engine.
pub fn measure_cost(
    base: &ScenarioConfig,
    dl: &DLConfig,
    n: usize,
    h: usize,
) -> Result<ComplexityRow> {
    if h < 2 {
        return Err(Error::config("h_values", "need at least 2 hypotheses"));
    }
    let mut cfg = base.clone();
    let per_scan_targets = cfg.targets.len();
    let scans = cfg.num_scans.max(1) as usize;
    cfg.clutter_per_scan = n.div_ceil(scans).saturating_sub(per_scan_targets).max(1);
    let sc = generate(&cfg)?;
    let ms = sc.batch.measurements();
    if ms.len() < n {
        return Err(Error::config(
            "n_values",
            format!("scenario yields only {} returns", ms.len()),
        ));
    }
    let batch = validate_batch(ms[..n].to_vec(), sc.batch.bounds())?;
    let bounds = batch.bounds();

    let k = h - 1;
    let r = 1.0 / h as f64;
    let sigma = Sigmas::from_array(dl.sigma_floor.to_array().map(|s| 4.0 * s));
    let tracks = (0..k)
        .map(|i| {
            let frac = (i as f64 + 0.5) / k as f64;
            let params = TrackParams::new(
                bounds.x.min + frac * bounds.x.width(),
                bounds.y.min + (1.0 - frac) * bounds.y.width(),
                0.0,
                0.0,
                bounds.a.midpoint(),
            );
            TrackHypothesis::track(i as u32 + 1, Status::Active, params, sigma, r)
        })
        .collect();
    let mut hs = HypothesisSet::new(r, tracks);

    let mut ops = 0u64;
    let start = Instant::now();
    for _ in 0..PROBE_ITERATIONS {
        let es = e_step(&batch, &hs)?;
        ops += (batch.len() * hs.len()) as u64;
        ops += m_step(&mut hs, &es.f, &batch, dl);
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ComplexityRow {
        n,
        h,
        iters: PROBE_ITERATIONS,
        ops_per_iter: ops as f64 / PROBE_ITERATIONS as f64,
        wall_ms: wall_ms / PROBE_ITERATIONS as f64,
    })
}

/// Sweeps N at the middle H value and H at the middle N value.
pub fn complexity_probe(
    base: &ScenarioConfig,
    dl: &DLConfig,
    n_values: &[usize],
    h_values: &[usize],
) -> Result<ComplexityReport> {
    if n_values.len() < 3 {
        return Err(Error::config("n_values", "need at least 3 values"));
    }
    if h_values.len() < 3 {
        return Err(Error::config("h_values", "need at least 3 values"));
    }
    let fixed_h = h_values[h_values.len() / 2];
    let fixed_n = n_values[n_values.len() / 2];
    let nr = n_values
        .iter()
        .map(|&n| measure_cost(base, dl, n, fixed_h))
        .collect::<Result<Vec<_>>>()?;
    let hr = h_values
        .iter()
        .map(|&h| measure_cost(base, dl, fixed_n, h))
        .collect::<Result<Vec<_>>>()?;
    let n_fit = linear_fit(
        &nr.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &nr.iter().map(|r| r.ops_per_iter).collect::<Vec<_>>(),
    );
    let n_wall_fit = linear_fit(
        &nr.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &nr.iter().map(|r| r.wall_ms).collect::<Vec<_>>(),
    );
    let h_fit = linear_fit(
        &hr.iter().map(|r| r.h as f64).collect::<Vec<_>>(),
        &hr.iter().map(|r| r.ops_per_iter).collect::<Vec<_>>(),
    );
    Ok(ComplexityReport {
        n_rows: nr,
        h_rows: hr,
        fixed_h,
        fixed_n,
        n_fit,
        h_fit,
        n_wall_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sigmas;
    use crate::scenario::{TargetSpec, TargetTruth};

    fn truth(specs: &[TargetSpec]) -> GroundTruth {
        GroundTruth {
            targets: specs
                .iter()
                .enumerate()
                .map(|(k, s)| TargetTruth {
                    target_id: k as u32 + 1,
                    spec: *s,
                    returns: vec![],
                })
                .collect(),
        }
    }

    fn det(id: u32, llr: f64, s: &TargetSpec, dx: f64) -> TrackDetection {
        TrackDetection {
            track_id: id,
            llr,
            gate: vec![],
            detected: true,
            params: TrackParams::new(s.x0 + dx, s.y0, s.vx, s.vy, s.amplitude),
            sigma: Sigmas::splat(1.0),
        }
    }

    const GATES: MatchCriteria = MatchCriteria {
        position_gate: 20.0,
        velocity_gate: 2.0,
        amplitude_gate: None,
    };

    #[test]
    fn match_examples() {
        let s = TargetSpec {
            x0: 10.0,
            y0: 20.0,
            vx: 1.0,
            vy: 2.0,
            amplitude: 0.8,
        };
        let tr = truth(&[s]);
        let m = match_tracks(&[det(1, 5.0, &s, 0.0)], &tr, 4.0, &GATES);
        assert_eq!(m.matches, vec![(1, 1)]);
        assert!(m.missed.is_empty());

        let m = match_tracks(&[det(1, 5.0, &s, 200.0)], &tr, 4.0, &GATES);
        assert_eq!(m.false_detections, vec![1]);
        assert_eq!(m.missed, vec![1]);

        let m = match_tracks(
            &[det(1, 5.0, &s, 1.0), det(2, 9.0, &s, 3.0)],
            &tr,
            4.0,
            &GATES,
        );
        assert_eq!(m.matches, vec![(2, 1)]);
        assert_eq!(m.false_detections, vec![1]);
    }

    #[test]
    fn matching_ignores_input_order() {
        let a = TargetSpec {
            x0: 10.0,
            y0: 20.0,
            vx: 1.0,
            vy: 2.0,
            amplitude: 0.8,
        };
        let b = TargetSpec {
            x0: 15.0,
            y0: 22.0,
            vx: 1.0,
            vy: 2.0,
            amplitude: 0.8,
        };
        let tr = truth(&[a, b]);
        let dets = vec![
            det(1, 3.0, &a, 2.0),
            det(2, 7.0, &b, -4.0),
            det(3, 5.0, &a, 100.0),
        ];
        let fwd = match_tracks(&dets, &tr, 0.0, &GATES);
        let mut rev = dets.clone();
        rev.reverse();
        assert_eq!(fwd, match_tracks(&rev, &tr, 0.0, &GATES));
    }

    #[test]
    fn criteria_defaults_and_validation() {
        let c = MatchCriteria::for_scenario(&ScenarioConfig::fig1());
        assert_eq!(c.position_gate, 20.0);
        assert!((c.velocity_gate - 20.0 / 15.0).abs() < 1e-12);
        let bad = MatchCriteria {
            position_gate: 0.0,
            ..c
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("position_gate"));
    }

    fn outcomes() -> Vec<TrialOutcome> {
        let mk = |replica, tracks: Vec<(f64, bool)>| TrialOutcome {
            replica,
            targets: 1,
            tracks,
            iterations: 10,
            converged: true,
        };
        vec![
            mk(0, vec![(50.0, true), (10.0, false)]),
            mk(1, vec![(30.0, false), (-2.0, false)]),
            mk(2, vec![(20.0, true)]),
            mk(3, vec![]),
        ]
    }

    #[test]
    fn roc_limits_and_monotonicity() {
        let thr = [f64::INFINITY, 25.0, 0.0, f64::NEG_INFINITY, 15.0];
        let roc = roc_from_trials(&outcomes(), &thr, 0.04).unwrap();
        assert!(roc
            .windows(2)
            .all(|w| w[0].llr_threshold <= w[1].llr_threshold));
        let lo = roc[0];
        assert_eq!(lo.pd, 0.5);
        assert_eq!(lo.pfa_per_batch, 0.75);
        assert_eq!(lo.pfa_per_area, 0.75 / 0.04);
        let hi = roc.last().unwrap();
        assert_eq!((hi.pd, hi.pfa_per_batch), (0.0, 0.0));
        for w in roc.windows(2) {
            assert!(w[1].pd <= w[0].pd && w[1].pfa_per_batch <= w[0].pfa_per_batch);
        }
        assert_eq!(pd_at_pfa(&roc, 0.25), 0.5);
        assert_eq!(pd_at_pfa(&roc, 0.0), 0.0);
        assert_eq!(pd_at_pfa(&roc, 1.0), 0.5);
        assert!(roc_from_trials(&outcomes(), &[], 1.0).is_err());
    }

    #[test]
    fn linear_fit_exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_doubles_with_n_and_h() {
        let base = ScenarioConfig::fig1();
        let dl = DLConfig::default();
        let c = |n, h| measure_cost(&base, &dl, n, h).unwrap().ops_per_iter;
        let r = c(1000, 4) / c(500, 4);
        assert!((r - 2.0).abs() < 0.6, "{r}");
        let r = c(500, 8) / c(500, 4);
        assert!((r - 2.0).abs() < 0.6, "{r}");
        assert!(complexity_probe(&base, &dl, &[100, 200], &[2, 3, 4]).is_err());
    }

    #[test]
    fn trials_are_reproducible_per_replica() {
        let sc = ScenarioConfig::fig2(50);
        let dl = DLConfig::default();
        let crit = MatchCriteria::for_scenario(&sc);
        let all = run_trials(&sc, &dl, &crit, 3).unwrap();
        assert_eq!(
            all.iter().map(|o| o.replica).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(run_trial(&sc, &dl, &crit, 2).unwrap(), all[2]);
    }
}
