//! Brute-force reference computations for small instances.
//!
//! Nothing here calls into the likelihood or engine modules: densities are
//! re-derived from scratch and sums are accumulated in a different order, so
//! agreement between the two is meaningful.

use crate::error::{Error, Result};
use crate::model::{Batch, HypothesisSet, Status, TrackParams};

pub const MAX_EXHAUSTIVE_N: usize = 12;
pub const MAX_EXHAUSTIVE_H: usize = 3;
pub const MAX_EXHAUSTIVE_TERMS: u64 = 1_000_000;

/// Log of `Σ over assignments (h_1..h_N) of Π_n r(h_n)·pdf(n|h_n)`.
///
/// Enumerates all `H^N` assignment vectors explicitly.
pub fn exhaustive_association_likelihood(batch: &Batch, hs: &HypothesisSet) -> Result<f64> {
    let n = batch.len();
    let h = hs.len();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::SizeLimit {
            what: format!("N = {n} exceeds {MAX_EXHAUSTIVE_N}"),
        });
    }
    if h > MAX_EXHAUSTIVE_H {
        return Err(Error::SizeLimit {
            what: format!("H = {h} exceeds {MAX_EXHAUSTIVE_H}"),
        });
    }
    let terms = (h as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    if terms > MAX_EXHAUSTIVE_TERMS {
        return Err(Error::SizeLimit {
            what: format!("H^N = {h}^{n} exceeds {MAX_EXHAUSTIVE_TERMS}"),
        });
    }

    let b = batch.bounds();
    let volume =
        (b.x.max - b.x.min) * (b.y.max - b.y.min) * (b.a.max - b.a.min) * (b.d.max - b.d.min);
    // table[n][h] = ln r(h) + ln pdf(n|h)
    let mut table = vec![vec![0.0; h]; n];
    for (j, hyp) in hs.hypotheses().iter().enumerate() {
        let ln_r = hyp.prior.ln();
        for (i, m) in batch.measurements().iter().enumerate() {
            table[i][j] = ln_r
                + if hyp.status == Status::Clutter {
                    -volume.ln()
                } else {
                    dense_gaussian_log_pdf(
                        &[
                            m.x - (hyp.params.x0 + hyp.params.vx * m.t),
                            m.y - (hyp.params.y0 + hyp.params.vy * m.t),
                            m.a - hyp.params.a,
                            m.d - hyp.params.d,
                        ],
                        &diagonal(&hyp.sigma.to_array()),
                    )?
                };
        }
    }

    let mut values = Vec::with_capacity(terms as usize);
    let mut digits = vec![0usize; n];
    loop {
        values.push(
            digits
                .iter()
                .enumerate()
                .map(|(i, &d)| table[i][d])
                .sum::<f64>(),
        );
        // odometer increment, least significant digit last
        let mut k = n;
        loop {
            if k == 0 {
                let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    return Ok(top);
                }
                let s: f64 = values.iter().map(|v| (v - top).exp()).sum();
                return Ok(top + s.ln());
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < h {
                break;
            }
            digits[k] = 0;
        }
    }
}

fn diagonal(sigma: &[f64; 4]) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    for k in 0..4 {
        c[k][k] = sigma[k] * sigma[k];
    }
    c
}

/// Log-density of a zero-mean 4-D Gaussian with full covariance at `e`,
/// via a Cholesky factorization.
pub fn dense_gaussian_log_pdf(e: &[f64; 4], cov: &[[f64; 4]; 4]) -> Result<f64> {
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::OracleFailure(format!(
                        "covariance not positive definite at pivot {i}"
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // forward solve L z = e
    let mut z = [0.0; 4];
    for i in 0..4 {
        let mut s = e[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let maha: f64 = z.iter().map(|v| v * v).sum();
    let log_det: f64 = 2.0 * (0..4).map(|i| l[i][i].ln()).sum::<f64>();
    Ok(-0.5 * maha - 0.5 * log_det - 2.0 * (2.0 * std::f64::consts::PI).ln())
}

/// Negated M-step objective, scaled by the inverse support mass and by
/// `σx²` (so only the ratio `c = σx²/σd²` enters the x/Doppler block; the
/// y and amplitude blocks separate and carry unit weight):
///
/// `Σ f·[(x − x0 − vx·t)² + c·(D − vx)² + (y − y0 − vy·t)² + (a − a_h)²] / Σ f`
///
/// `p = [x0, y0, vx, vy, a_h]`.
pub fn mstep_objective(batch: &Batch, f: &[f64], c: f64, p: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, m) in f.iter().zip(batch.measurements()).rev() {
        let ex = m.x - p[0] - p[2] * m.t;
        let ey = m.y - p[1] - p[3] * m.t;
        let ed = m.d - p[2];
        let ea = m.a - p[4];
        num += w * (ex * ex + c * ed * ed + ey * ey + ea * ea);
        den += w;
    }
    num / den
}

/// Central-difference gradient of `objective` at `params`.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(
    objective: F,
    params: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + step;
            let up = objective(&p);
            p[k] = orig - step;
            let down = objective(&p);
            p[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes `g` along `x + s·dir` by bracketing then golden-section search.
fn line_minimize<G: Fn(&[f64]) -> f64>(g: &G, x: &[f64], dir: &[f64], tol: f64) -> Result<f64> {
    let at = |s: f64| {
        let p: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + s * d).collect();
        g(&p)
    };
    let f0 = at(0.0);
    let mut step = 1.0;
    // bracket [lo, hi] around a point lower than both ends
    let (mut lo, mut hi);
    if at(step) < f0 {
        lo = 0.0;
        let mut mid = step;
        let mut fm = at(mid);
        loop {
            step *= 2.0;
            let next = mid + step;
            let fnext = at(next);
            if fnext >= fm {
                hi = next;
                break;
            }
            lo = mid;
            mid = next;
            fm = fnext;
            if step > 1e12 {
                return Err(Error::OracleFailure(
                    "objective unbounded below along a search line".into(),
                ));
            }
        }
    } else if at(-step) < f0 {
        hi = 0.0;
        let mut mid = -step;
        let mut fm = at(mid);
        loop {
            step *= 2.0;
            let next = mid - step;
            let fnext = at(next);
            if fnext >= fm {
                lo = next;
                break;
            }
            hi = mid;
            mid = next;
            fm = fnext;
            if step > 1e12 {
                return Err(Error::OracleFailure(
                    "objective unbounded below along a search line".into(),
                ));
            }
        }
    } else {
        lo = -step;
        hi = step;
    }

    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = at(a);
    let mut fb = at(b);
    for _ in 0..400 {
        if (hi - lo).abs() <= tol {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = at(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = at(b);
        }
    }
    let s = 0.5 * (lo + hi);
    Ok(if at(s) <= f0 { s } else { 0.0 })
}

/// Numerically maximizes the weighted track log-likelihood over
/// `(x0, y0, vx, vy, a_h)` at fixed sigmas, with `d_h` tied to `vx`.
///
/// Golden-section line searches over a direction set that starts as the
/// coordinate axes; after each sweep the net displacement replaces the
/// direction that gained most (Powell), so strongly correlated
/// position/velocity pairs do not zig-zag. The set is reset to the axes
/// every few sweeps. Stops once a sweep moves no coordinate by more than
/// 1e-9 relative to its scale and the objective has stopped falling.
pub fn numeric_mstep(
    batch: &Batch,
    f: &[f64],
    c: f64,
    initial: &TrackParams,
) -> Result<TrackParams> {
    if f.len() != batch.len() {
        return Err(Error::OracleFailure(format!(
            "weight column has {} entries for {} measurements",
            f.len(),
            batch.len()
        )));
    }
    if batch.len() > 100 {
        return Err(Error::SizeLimit {
            what: format!("N = {} exceeds 100", batch.len()),
        });
    }
    if !(f.iter().sum::<f64>() > 0.0) {
        return Err(Error::OracleFailure("weights have no mass".into()));
    }
    let g = |p: &[f64]| mstep_objective(batch, f, c, p);
    let mut x = vec![initial.x0, initial.y0, initial.vx, initial.vy, initial.a];
    let axes = |x: &[f64]| -> Vec<Vec<f64>> {
        (0..5)
            .map(|k| {
                let mut d = vec![0.0; 5];
                d[k] = 1.0 + x[k].abs();
                d
            })
            .collect()
    };
    let mut dirs = axes(&x);
    let mut quiet = 0;
    for sweep in 0..20_000 {
        if sweep % 6 == 5 {
            dirs = axes(&x);
        }
        let start = x.clone();
        let f_start = g(&x);
        let mut gain = (0usize, 0.0f64);
        for (k, dir) in dirs.iter().enumerate() {
            let before = g(&x);
            let s = line_minimize(&g, &x, dir, 1e-13)?;
            for i in 0..5 {
                x[i] += s * dir[i];
            }
            let drop = before - g(&x);
            if drop > gain.1 {
                gain = (k, drop);
            }
        }
        let disp: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        if disp.iter().any(|d| *d != 0.0) {
            let s = line_minimize(&g, &x, &disp, 1e-13)?;
            for i in 0..5 {
                x[i] += s * disp[i];
            }
            dirs.remove(gain.0);
            dirs.push(disp);
        }
        let moved = x
            .iter()
            .zip(&start)
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()));
        let fell = f_start - g(&x) > 1e-15 * f_start.abs();
        quiet = if moved || fell { 0 } else { quiet + 1 };
        // two quiet sweeps in a row, so a reset to the axes gets its chance
        if quiet >= 2 {
            return Ok(TrackParams::new(x[0], x[1], x[2], x[3], x[4]));
        }
    }
    Err(Error::OracleFailure(
        "refinement did not settle within 20000 sweeps".into(),
    ))
}
