//! Domain types shared by every stage of the tracker.
//!
//! All values here are plain data: once a [`Batch`] has been validated it is
//! never mutated, so it can be shared freely between concurrent runs.

use serde::{Deserialize, Serialize};

use crate::error::{Dim, Error, Result};

/// One pre-detected return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub scan: u32,
    /// Time since the first scan.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Normalized amplitude.
    pub a: f64,
    /// Doppler, in the same units as range velocity.
    pub d: f64,
}

impl Measurement {
    pub fn value(&self, dim: Dim) -> f64 {
        match dim {
            Dim::X => self.x,
            Dim::Y => self.y,
            Dim::A => self.a,
            Dim::D => self.d,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.x, self.y, self.a, self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Declared extent of the measurement space. The clutter density is uniform
/// over this box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementBounds {
    pub x: Interval,
    pub y: Interval,
    pub a: Interval,
    pub d: Interval,
}

impl MeasurementBounds {
    pub fn new(x: Interval, y: Interval, a: Interval, d: Interval) -> Result<Self> {
        let b = Self { x, y, a, d };
        b.validate()?;
        Ok(b)
    }

    pub fn get(&self, dim: Dim) -> Interval {
        match dim {
            Dim::X => self.x,
            Dim::Y => self.y,
            Dim::A => self.a,
            Dim::D => self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for dim in Dim::ALL {
            let iv = self.get(dim);
            if !(iv.min.is_finite() && iv.max.is_finite() && iv.max > iv.min) {
                return Err(Error::InvalidBounds {
                    dim,
                    min: iv.min,
                    max: iv.max,
                });
            }
        }
        Ok(())
    }
}

/// Product of the four interval widths.
pub fn measurement_volume(bounds: &MeasurementBounds) -> Result<f64> {
    bounds.validate()?;
    Ok(Dim::ALL.iter().map(|&d| bounds.get(d).width()).product())
}

/// Per-dimension standard deviations `(x, y, a, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sigmas {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub d: f64,
}

impl Sigmas {
    pub const fn new(x: f64, y: f64, a: f64, d: f64) -> Self {
        Self { x, y, a, d }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v, v)
    }

    pub fn get(&self, dim: Dim) -> f64 {
        match dim {
            Dim::X => self.x,
            Dim::Y => self.y,
            Dim::A => self.a,
            Dim::D => self.d,
        }
    }

    pub fn set(&mut self, dim: Dim, v: f64) {
        match dim {
            Dim::X => self.x = v,
            Dim::Y => self.y = v,
            Dim::A => self.a = v,
            Dim::D => self.d = v,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.a, self.d]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn check_positive(&self) -> Result<()> {
        for dim in Dim::ALL {
            let v = self.get(dim);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidCovariance { dim, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Clutter,
    Active,
    Dormant,
}

/// Constant-velocity tracklet parameters. `d` mirrors `vx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub a: f64,
    pub d: f64,
}

impl TrackParams {
    /// Builds parameters with the Doppler tied to the range velocity.
    pub fn new(x0: f64, y0: f64, vx: f64, vy: f64, a: f64) -> Self {
        Self {
            x0,
            y0,
            vx,
            vy,
            a,
            d: vx,
        }
    }
}

/// One mixture component: either the clutter hypothesis or a track model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackHypothesis {
    pub id: u32,
    pub status: Status,
    pub params: TrackParams,
    pub sigma: Sigmas,
    pub prior: f64,
}

impl TrackHypothesis {
    pub fn clutter(prior: f64) -> Self {
        Self {
            id: 0,
            status: Status::Clutter,
            params: TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.0),
            sigma: Sigmas::splat(1.0),
            prior,
        }
    }

    pub fn track(id: u32, status: Status, params: TrackParams, sigma: Sigmas, prior: f64) -> Self {
        debug_assert!(status != Status::Clutter);
        Self {
            id,
            status,
            params,
            sigma,
            prior,
        }
    }

    pub fn is_clutter(&self) -> bool {
        self.status == Status::Clutter
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn is_dormant(&self) -> bool {
        self.status == Status::Dormant
    }
}

/// The clutter hypothesis at index 0 followed by the track hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    hypotheses: Vec<TrackHypothesis>,
    next_id: u32,
}

impl HypothesisSet {
    /// `tracks` must not contain a clutter hypothesis.
    pub fn new(clutter_prior: f64, tracks: Vec<TrackHypothesis>) -> Self {
        assert!(
            tracks.iter().all(|h| !h.is_clutter()),
            "exactly one clutter hypothesis is allowed"
        );
        let next_id = tracks.iter().map(|h| h.id + 1).max().unwrap_or(1).max(1);
        let mut hypotheses = Vec::with_capacity(tracks.len() + 1);
        hypotheses.push(TrackHypothesis::clutter(clutter_prior));
        hypotheses.extend(tracks);
        Self {
            hypotheses,
            next_id,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[TrackHypothesis] {
        &self.hypotheses
    }

    pub fn hypotheses_mut(&mut self) -> &mut [TrackHypothesis] {
        &mut self.hypotheses
    }

    pub fn clutter(&self) -> &TrackHypothesis {
        &self.hypotheses[0]
    }

    /// Track hypotheses (everything after the clutter entry).
    pub fn tracks(&self) -> &[TrackHypothesis] {
        &self.hypotheses[1..]
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, &TrackHypothesis)> {
        self.hypotheses
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_active())
    }

    pub fn num_active(&self) -> usize {
        self.hypotheses.iter().filter(|h| h.is_active()).count()
    }

    pub fn num_dormant(&self) -> usize {
        self.hypotheses.iter().filter(|h| h.is_dormant()).count()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.prior).collect()
    }

    pub fn prior_sum(&self) -> f64 {
        self.hypotheses.iter().map(|h| h.prior).sum()
    }

    pub fn next_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn push_track(&mut self, h: TrackHypothesis) {
        assert!(!h.is_clutter());
        self.next_id = self.next_id.max(h.id + 1);
        self.hypotheses.push(h);
    }

    /// Removes the track hypotheses at the given indices. Index 0 (clutter)
    /// is never removed.
    pub fn remove_indices(&mut self, indices: &[usize]) {
        let mut i = 0;
        self.hypotheses.retain(|_| {
            let keep = i == 0 || !indices.contains(&i);
            i += 1;
            keep
        });
    }

    /// Rescales the priors to sum to one. Falls back to all mass on clutter
    /// when nothing is left to scale.
    pub fn renormalize(&mut self) {
        let sum = self.prior_sum();
        if sum > 0.0 && sum.is_finite() {
            for h in &mut self.hypotheses {
                h.prior /= sum;
            }
        } else {
            for h in &mut self.hypotheses {
                h.prior = 0.0;
            }
            self.hypotheses[0].prior = 1.0;
        }
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let clutter = self.hypotheses.iter().filter(|h| h.is_clutter()).count();
        if clutter != 1 || !self.hypotheses[0].is_clutter() {
            return Err(Error::config(
                "hypotheses",
                format!("expected exactly one clutter hypothesis at index 0, found {clutter}"),
            ));
        }
        let sum = self.prior_sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::config("priors", format!("priors sum to {sum}")));
        }
        Ok(())
    }
}

/// Row-major `N x H` matrix of association weights `f(h|n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl AssociationMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged association rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, n: usize, h: usize) -> f64 {
        self.data[n * self.cols + h]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.cols..(n + 1) * self.cols]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.cols..(n + 1) * self.cols]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, h: usize) -> Vec<f64> {
        (0..self.rows).map(|n| self.get(n, h)).collect()
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.rows)
            .map(|n| (self.row(n).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// A validated, immutable measurement batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    measurements: Vec<Measurement>,
    bounds: MeasurementBounds,
    scan_times: Vec<(u32, f64)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn bounds(&self) -> &MeasurementBounds {
        &self.bounds
    }

    /// Distinct scans with the mean time of their returns, in scan order.
    pub fn scan_times(&self) -> &[(u32, f64)] {
        &self.scan_times
    }

    pub fn num_scans(&self) -> usize {
        self.scan_times.len()
    }

    pub fn duration(&self) -> f64 {
        match (self.scan_times.first(), self.scan_times.last()) {
            (Some(a), Some(b)) => b.1 - a.1,
            _ => 0.0,
        }
    }
}

/// Checks every measurement against `bounds` and the time ordering, then
/// freezes the batch.
pub fn validate_batch(measurements: Vec<Measurement>, bounds: &MeasurementBounds) -> Result<Batch> {
    bounds.validate()?;
    if measurements.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for (index, m) in measurements.iter().enumerate() {
        if !(m.t.is_finite() && m.t >= 0.0) {
            return Err(Error::InvalidTime {
                index,
                reason: format!("time {} must be finite and non-negative", m.t),
            });
        }
        for dim in Dim::ALL {
            let v = m.value(dim);
            let iv = bounds.get(dim);
            if !(v.is_finite() && iv.contains(v)) {
                return Err(Error::OutOfBounds {
                    index,
                    dim,
                    value: v,
                    min: iv.min,
                    max: iv.max,
                });
            }
        }
    }

    // (scan, min t, max t, sum t, count, first index seen)
    let mut per_scan: std::collections::BTreeMap<u32, (f64, f64, f64, usize, usize)> =
        Default::default();
    for (i, m) in measurements.iter().enumerate() {
        let e = per_scan
            .entry(m.scan)
            .or_insert((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0, i));
        e.0 = e.0.min(m.t);
        e.1 = e.1.max(m.t);
        e.2 += m.t;
        e.3 += 1;
    }
    let mut prev: Option<(u32, f64)> = None;
    for (&scan, &(lo, hi, _, _, first)) in &per_scan {
        if let Some((prev_scan, prev_hi)) = prev {
            if lo < prev_hi {
                return Err(Error::InvalidTime {
                    index: first,
                    reason: format!(
                        "scan {scan} has time {lo} earlier than scan {prev_scan} time {prev_hi}"
                    ),
                });
            }
        }
        prev = Some((scan, hi));
    }
    let scan_times = per_scan
        .iter()
        .map(|(&s, &(_, _, sum, count, _))| (s, sum / count as f64))
        .collect();

    Ok(Batch {
        measurements,
        bounds: *bounds,
        scan_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_bounds() -> MeasurementBounds {
        MeasurementBounds::new(
            Interval::new(0.0, 500.0),
            Interval::new(0.0, 500.0),
            Interval::new(0.0, 1.0),
            Interval::new(-10.0, 10.0),
        )
        .unwrap()
    }

    fn m(scan: u32, t: f64, x: f64, y: f64, a: f64, d: f64) -> Measurement {
        Measurement {
            scan,
            t,
            x,
            y,
            a,
            d,
        }
    }

    #[test]
    fn volume_examples() {
        assert_eq!(measurement_volume(&fig_bounds()).unwrap(), 5.0e6);
        let unit = Interval::new(0.0, 1.0);
        let b = MeasurementBounds::new(unit, unit, unit, unit).unwrap();
        assert_eq!(measurement_volume(&b).unwrap(), 1.0);

        let mut degenerate = fig_bounds();
        degenerate.d = Interval::new(5.0, 5.0);
        assert!(matches!(
            measurement_volume(&degenerate),
            Err(Error::InvalidBounds { dim: Dim::D, .. })
        ));
    }

    #[test]
    fn validate_rejects_out_of_bounds_amplitude() {
        let err = validate_batch(vec![m(0, 0.0, 1.0, 1.0, 1.5, 0.0)], &fig_bounds()).unwrap_err();
        match err {
            Error::OutOfBounds { index, dim, .. } => {
                assert_eq!(index, 0);
                assert_eq!(dim, Dim::A);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validate_single_and_empty() {
        let b = validate_batch(vec![m(0, 0.0, 1.0, 1.0, 0.5, 0.0)], &fig_bounds()).unwrap();
        assert_eq!(b.len(), 1);
        assert!(matches!(
            validate_batch(vec![], &fig_bounds()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn validate_rejects_time_going_backwards() {
        let ms = vec![m(0, 2.0, 1.0, 1.0, 0.5, 0.0), m(1, 1.0, 1.0, 1.0, 0.5, 0.0)];
        assert!(matches!(
            validate_batch(ms, &fig_bounds()),
            Err(Error::InvalidTime { .. })
        ));
        let neg = vec![m(0, -1.0, 1.0, 1.0, 0.5, 0.0)];
        assert!(matches!(
            validate_batch(neg, &fig_bounds()),
            Err(Error::InvalidTime { index: 0, .. })
        ));
    }

    #[test]
    fn validate_is_idempotent() {
        let ms = vec![
            m(1, 3.0, 10.0, 20.0, 0.5, 1.0),
            m(0, 0.0, 11.0, 21.0, 0.4, -1.0),
            m(1, 3.0, 12.0, 22.0, 0.3, 2.0),
        ];
        let once = validate_batch(ms, &fig_bounds()).unwrap();
        let twice = validate_batch(once.measurements().to_vec(), once.bounds()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.scan_times(), &[(0, 0.0), (1, 3.0)]);
    }

    #[test]
    fn hypothesis_set_removal_keeps_clutter() {
        let t = |id| {
            TrackHypothesis::track(
                id,
                Status::Active,
                TrackParams::new(0.0, 0.0, 0.0, 0.0, 0.5),
                Sigmas::splat(1.0),
                0.25,
            )
        };
        let mut hs = HypothesisSet::new(0.5, vec![t(1), t(2)]);
        hs.remove_indices(&[0, 1]);
        assert_eq!(hs.len(), 2);
        assert!(hs.hypotheses()[0].is_clutter());
        assert_eq!(hs.hypotheses()[1].id, 2);
        hs.renormalize();
        hs.check_invariants(1e-12).unwrap();
    }

    proptest::proptest! {
        #[test]
        fn volume_monotone_in_each_width(
            w in proptest::array::uniform4(0.1f64..100.0),
            dim in 0usize..4,
            grow in 0.01f64..10.0,
        ) {
            let mk = |w: [f64; 4]| MeasurementBounds {
                x: Interval::new(0.0, w[0]),
                y: Interval::new(0.0, w[1]),
                a: Interval::new(0.0, w[2]),
                d: Interval::new(0.0, w[3]),
            };
            let mut wider = w;
            wider[dim] += grow;
            proptest::prop_assert!(
                measurement_volume(&mk(wider)).unwrap() > measurement_volume(&mk(w)).unwrap()
            );
        }
    }
}
