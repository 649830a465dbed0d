//! CSV readers and writers for batches, truth, traces, detections, ROC
//! curves and complexity tables.
//!
//! Every written file starts with a `#` comment line carrying the config
//! hash and seed; readers skip `#` lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::IterationTrace;
use crate::error::{Error, Result};
use crate::evaluation::{ComplexityRow, RocPoint};
use crate::model::{
    validate_batch, AssociationMatrix, Batch, HypothesisSet, Measurement, MeasurementBounds, Status,
};
use crate::scenario::GroundTruth;
use crate::track_manager::DetectionReport;

/// Provenance stamped on the first line of every output file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputHeader {
    pub config_hash: u64,
    pub seed: u64,
}

impl OutputHeader {
    pub fn line(&self) -> String {
        format!("# config_hash={:016x} seed={}", self.config_hash, self.seed)
    }
}

/// 64-bit FNV-1a, used to fingerprint canonical config text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn writer(path: &Path, header: &OutputHeader) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.line())?;
    Ok(csv::Writer::from_writer(out))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn parse_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    let reason = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    Error::Parse {
        path: path.display().to_string(),
        row,
        reason,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchRow {
    scan: u32,
    t: f64,
    x: f64,
    y: f64,
    amplitude: f64,
    doppler: f64,
}

pub fn write_batch(path: &Path, batch: &Batch, header: &OutputHeader) -> Result<()> {
    let mut w = writer(path, header)?;
    for m in batch.measurements() {
        w.serialize(BatchRow {
            scan: m.scan,
            t: m.t,
            x: m.x,
            y: m.y,
            amplitude: m.a,
            doppler: m.d,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `scan,t,x,y,amplitude,doppler` rows and validates them against
/// `bounds`. Validation failures are reported with the file row.
pub fn read_batch(path: &Path, bounds: &MeasurementBounds) -> Result<Batch> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| parse_error(path, e))?.clone();
    let mut ms = Vec::new();
    let mut lines = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: BatchRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: line,
            reason: e.to_string(),
        })?;
        ms.push(Measurement {
            scan: row.scan,
            t: row.t,
            x: row.x,
            y: row.y,
            a: row.amplitude,
            d: row.doppler,
        });
        lines.push(line);
    }
    validate_batch(ms, bounds).map_err(|e| {
        let index = match &e {
            Error::OutOfBounds { index, .. } | Error::InvalidTime { index, .. } => Some(*index),
            _ => None,
        };
        match index {
            Some(i) => Error::Parse {
                path: path.display().to_string(),
                row: lines.get(i).copied().unwrap_or(0),
                reason: e.to_string(),
            },
            None => e,
        }
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TruthTargetRow {
    pub target_id: u32,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub a_mean: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TruthAssignmentRow {
    pub measurement_index: usize,
    pub target_id: u32,
}

/// Writes the target table and the measurement-to-target sidecar.
pub fn write_truth(
    targets_path: &Path,
    assignments_path: &Path,
    truth: &GroundTruth,
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(targets_path, header)?;
    for t in &truth.targets {
        w.serialize(TruthTargetRow {
            target_id: t.target_id,
            x0: t.spec.x0,
            y0: t.spec.y0,
            vx: t.spec.vx,
            vy: t.spec.vy,
            a_mean: t.spec.amplitude,
        })?;
    }
    w.flush()?;
    let mut w = writer(assignments_path, header)?;
    for (measurement_index, target_id) in truth.assignments() {
        w.serialize(TruthAssignmentRow {
            measurement_index,
            target_id,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_targets(path: &Path) -> Result<Vec<TruthTargetRow>> {
    let mut r = reader(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| parse_error(path, e)))
        .collect()
}

pub fn read_truth_assignments(path: &Path) -> Result<Vec<TruthAssignmentRow>> {
    let mut r = reader(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| parse_error(path, e)))
        .collect()
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Clutter => "clutter",
        Status::Active => "active",
        Status::Dormant => "dormant",
    }
}

/// One row per iteration: `iteration,loglik,num_active,num_dormant` plus
/// the clutter prior and roster-event counts.
pub fn write_trace(path: &Path, trace: &IterationTrace, header: &OutputHeader) -> Result<()> {
    let mut w = writer(path, header)?;
    w.write_record([
        "iteration",
        "loglik",
        "num_active",
        "num_dormant",
        "clutter_prior",
        "activated",
        "eliminated",
        "pruned",
        "spawned",
    ])?;
    for r in &trace.records {
        let clutter = r.hypotheses.first().map_or(f64::NAN, |h| h.prior);
        w.write_record([
            r.iteration.to_string(),
            format!("{:.17e}", r.loglik),
            r.num_active.to_string(),
            r.num_dormant.to_string(),
            format!("{:.17e}", clutter),
            r.events.activated.len().to_string(),
            r.events.eliminated.len().to_string(),
            r.events.pruned.len().to_string(),
            r.events.spawned.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format companion of the trace: one row per (iteration, clutter or
/// active hypothesis). Dormant models are summarized by the main trace.
pub fn write_trace_hypotheses(
    path: &Path,
    trace: &IterationTrace,
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(path, header)?;
    w.write_record([
        "iteration",
        "id",
        "status",
        "prior",
        "x0",
        "y0",
        "vx",
        "vy",
        "a",
        "d",
        "sigma_x",
        "sigma_y",
        "sigma_a",
        "sigma_d",
    ])?;
    for r in &trace.records {
        for h in r.hypotheses.iter().filter(|h| h.status != Status::Dormant) {
            let p = &h.params;
            let s = &h.sigma;
            w.write_record([
                r.iteration.to_string(),
                h.id.to_string(),
                status_name(h.status).to_string(),
                format!("{:.17e}", h.prior),
                p.x0.to_string(),
                p.y0.to_string(),
                p.vx.to_string(),
                p.vy.to_string(),
                p.a.to_string(),
                p.d.to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.a.to_string(),
                s.d.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Final hypothesis set, one row per hypothesis (clutter first).
pub fn write_hypotheses(path: &Path, hs: &HypothesisSet, header: &OutputHeader) -> Result<()> {
    let mut w = writer(path, header)?;
    w.write_record([
        "id", "status", "prior", "x0", "y0", "vx", "vy", "a", "d", "sigma_x", "sigma_y", "sigma_a",
        "sigma_d",
    ])?;
    for h in hs.hypotheses() {
        let (p, s) = (&h.params, &h.sigma);
        let mut rec = vec![
            h.id.to_string(),
            status_name(h.status).to_string(),
            format!("{:.17e}", h.prior),
        ];
        if h.is_clutter() {
            rec.extend(std::iter::repeat_n(String::new(), 10));
        } else {
            rec.extend(
                [p.x0, p.y0, p.vx, p.vy, p.a, p.d, s.x, s.y, s.a, s.d].map(|v| v.to_string()),
            );
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Association matrix with one column per hypothesis id.
pub fn write_associations(
    path: &Path,
    f: &AssociationMatrix,
    hs: &HypothesisSet,
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(path, header)?;
    let mut head = vec!["measurement_index".to_string()];
    head.extend(hs.hypotheses().iter().map(|h| format!("h{}", h.id)));
    w.write_record(&head)?;
    for n in 0..f.rows() {
        let mut rec = vec![n.to_string()];
        rec.extend(f.row(n).iter().map(|v| format!("{v:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DetectionRow {
    pub track_id: u32,
    pub llr: f64,
    pub gate_size: usize,
    pub detected: bool,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub a: f64,
    pub d: f64,
}

pub fn detection_rows(report: &DetectionReport) -> Vec<DetectionRow> {
    report
        .tracks
        .iter()
        .map(|t| DetectionRow {
            track_id: t.track_id,
            llr: t.llr,
            gate_size: t.gate.len(),
            detected: t.detected,
            x0: t.params.x0,
            y0: t.params.y0,
            vx: t.params.vx,
            vy: t.params.vy,
            a: t.params.a,
            d: t.params.d,
        })
        .collect()
}

pub fn write_detections(
    path: &Path,
    report: &DetectionReport,
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(path, header)?;
    let rows = detection_rows(report);
    if rows.is_empty() {
        w.write_record([
            "track_id",
            "llr",
            "gate_size",
            "detected",
            "x0",
            "y0",
            "vx",
            "vy",
            "a",
            "d",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut r = reader(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| parse_error(path, e)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RocRow {
    pub clutter_per_scan: usize,
    pub threshold: f64,
    pub pd: f64,
    pub pfa_per_batch: f64,
    pub pfa_per_area: f64,
    pub trials: usize,
}

pub fn roc_rows(clutter_per_scan: usize, curve: &[RocPoint]) -> Vec<RocRow> {
    curve
        .iter()
        .map(|p| RocRow {
            clutter_per_scan,
            threshold: p.llr_threshold,
            pd: p.pd,
            pfa_per_batch: p.pfa_per_batch,
            pfa_per_area: p.pfa_per_area,
            trials: p.trials,
        })
        .collect()
}

pub fn write_roc(
    path: &Path,
    clutter_per_scan: usize,
    curve: &[RocPoint],
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(path, header)?;
    for row in roc_rows(clutter_per_scan, curve) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_roc(path: &Path) -> Result<Vec<RocRow>> {
    let mut r = reader(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| parse_error(path, e)))
        .collect()
}

pub fn write_complexity<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a ComplexityRow>,
    header: &OutputHeader,
) -> Result<()> {
    let mut w = writer(path, header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_dl, DLConfig};
    use crate::scenario::{generate, ScenarioConfig};
    use crate::track_manager::declare_detections;

    const H: OutputHeader = OutputHeader {
        config_hash: 0xabc,
        seed: 7,
    };

    #[test]
    fn header_line_and_hash() {
        assert_eq!(H.line(), "# config_hash=0000000000000abc seed=7");
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn batch_and_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = generate(&ScenarioConfig::fig2(20)).unwrap();
        let p = dir.path().join("batch.csv");
        write_batch(&p, &sc.batch, &H).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash="));
        assert_eq!(read_batch(&p, sc.batch.bounds()).unwrap(), sc.batch);

        let (tp, ap) = (dir.path().join("t.csv"), dir.path().join("a.csv"));
        write_truth(&tp, &ap, &sc.truth, &H).unwrap();
        let t = read_truth_targets(&tp).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].vx, sc.truth.targets[0].spec.vx);
        let a = read_truth_assignments(&ap).unwrap();
        let pairs: Vec<(usize, u32)> = a
            .iter()
            .map(|r| (r.measurement_index, r.target_id))
            .collect();
        assert_eq!(pairs, sc.truth.assignments());
    }

    #[test]
    fn parse_errors_carry_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(
            &p,
            "scan,t,x,y,amplitude,doppler\n0,0,1,1,0.5,0\n0,0,1,1,abc,0\n",
        )
        .unwrap();
        let b = ScenarioConfig::fig2(0).bounds();
        match read_batch(&p, &b).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected {e}"),
        }
        std::fs::write(
            &p,
            "# c\nscan,t,x,y,amplitude,doppler\n0,0,1,1,0.5,0\n0,0,1,1,0.5,99\n",
        )
        .unwrap();
        match read_batch(&p, &b).unwrap_err() {
            Error::Parse { row, reason, .. } => {
                assert_eq!(row, 4);
                assert!(reason.contains("99"), "{reason}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn detections_trace_and_roc_files() {
        let dir = tempfile::tempdir().unwrap();
        let sc = generate(&ScenarioConfig::fig2(20)).unwrap();
        let out = run_dl(&sc.batch, &DLConfig::default()).unwrap();
        let rep = declare_detections(&out.hypotheses, &sc.batch, 0.0).unwrap();
        let p = dir.path().join("det.csv");
        write_detections(&p, &rep, &H).unwrap();
        assert_eq!(read_detections(&p).unwrap(), detection_rows(&rep));

        let empty = DetectionReport::default();
        write_detections(&p, &empty, &H).unwrap();
        assert!(read_detections(&p).unwrap().is_empty());
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .contains("track_id,llr,gate_size"));

        let tp = dir.path().join("trace.csv");
        write_trace(&tp, &out.trace, &H).unwrap();
        let lines = std::fs::read_to_string(&tp).unwrap().lines().count();
        assert_eq!(lines, 2 + out.trace.iterations());
        write_trace_hypotheses(&dir.path().join("h.csv"), &out.trace, &H).unwrap();

        let roc = vec![RocPoint {
            llr_threshold: 1.5,
            pd: 0.5,
            pfa_per_batch: 0.25,
            pfa_per_area: 6.25,
            trials: 4,
        }];
        let rp = dir.path().join("roc.csv");
        write_roc(&rp, 50, &roc, &H).unwrap();
        assert_eq!(read_roc(&rp).unwrap(), roc_rows(50, &roc));
        let text = std::fs::read_to_string(&rp).unwrap();
        assert!(
            text.lines().nth(1).unwrap()
                == "clutter_per_scan,threshold,pd,pfa_per_batch,pfa_per_area,trials"
        );

        let cp = dir.path().join("cx.csv");
        let row = ComplexityRow {
            n: 500,
            h: 4,
            iters: 5,
            ops_per_iter: 1.0,
            wall_ms: 2.0,
        };
        write_complexity(&cp, [&row], &H).unwrap();
        assert!(std::fs::read_to_string(&cp)
            .unwrap()
            .contains("N,H,iters,ops_per_iter,wall_ms"));
    }
}
