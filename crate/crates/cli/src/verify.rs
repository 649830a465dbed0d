//! Randomized oracle checks of the likelihood and the M-step.

use dltrack_core::engine::{update_amplitude, update_x_motion, update_y_motion};
use dltrack_core::likelihood::batch_log_likelihood;
use dltrack_core::oracle::{
    exhaustive_association_likelihood, finite_difference_gradient, mstep_objective, numeric_mstep,
};
use dltrack_core::{
    validate_batch, Batch, HypothesisSet, Interval, Measurement, MeasurementBounds, Sigmas, Status,
    TrackHypothesis, TrackParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Which check to corrupt when exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    Likelihood,
    Mstep,
    Gradient,
}

const LIKELIHOOD_TOL: f64 = 1e-10;
const MSTEP_TOL: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-4;
const MSTEP_N: usize = 12;

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    invariant: &'static str,
    instances: usize,
    worst: f64,
    tolerance: f64,
    pass: bool,
}

fn bounds() -> MeasurementBounds {
    MeasurementBounds::new(
        Interval::new(0.0, 50.0),
        Interval::new(0.0, 50.0),
        Interval::new(0.0, 1.0),
        Interval::new(-5.0, 5.0),
    )
    .expect("static bounds")
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let ms = (0..n)
        .map(|i| Measurement {
            scan: (i / 2) as u32,
            t: (i / 2) as f64,
            x: rng.gen_range(0.0..50.0),
            y: rng.gen_range(0.0..50.0),
            a: rng.gen_range(0.0..1.0),
            d: rng.gen_range(-5.0..5.0),
        })
        .collect();
    validate_batch(ms, &bounds()).expect("generated inside bounds")
}

fn random_set(rng: &mut ChaCha8Rng, h: usize) -> HypothesisSet {
    let tracks = (1..h)
        .map(|id| {
            TrackHypothesis::track(
                id as u32,
                Status::Active,
                TrackParams::new(
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.0..1.0),
                ),
                Sigmas::new(
                    rng.gen_range(1.0..25.0),
                    rng.gen_range(1.0..25.0),
                    rng.gen_range(0.02..0.5),
                    rng.gen_range(0.2..3.0),
                ),
                1.0,
            )
        })
        .collect();
    let mut hs = HypothesisSet::new(1.0, tracks);
    for hyp in hs.hypotheses_mut() {
        hyp.prior = rng.gen_range(0.05..1.0);
    }
    hs.renormalize();
    hs
}

pub fn run(cfg: &RunConfig, fault: Option<Fault>, json: bool) -> Result<(), CliError> {
    let v = &cfg.verify;
    if v.instances < 1 {
        return Err(CliError::Config(
            "verify.instances: must be at least 1".into(),
        ));
    }
    if v.h < 1 {
        return Err(CliError::Config("verify.h: must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.dl.rng_seed);

    let mut worst_ll = 0.0f64;
    for _ in 0..v.instances {
        let b = random_batch(&mut rng, v.n.max(1));
        let hs = random_set(&mut rng, v.h);
        let exact = exhaustive_association_likelihood(&b, &hs)?;
        let mut fast = batch_log_likelihood(&b, &hs)?;
        if fault == Some(Fault::Likelihood) {
            fast *= 1.0 + 1e-6;
        }
        worst_ll = worst_ll.max(((exact - fast) / exact.abs()).abs());
    }

    let mut worst_param = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..v.instances {
        let b = random_batch(&mut rng, MSTEP_N);
        let f: Vec<f64> = (0..MSTEP_N).map(|_| rng.gen_range(0.0..1.0)).collect();
        let c = rng.gen_range(0.0..20.0);
        let (y0, vy) = update_y_motion(&f, &b)?;
        let (mut x0, vx) = update_x_motion(&f, &b, c)?;
        let a = update_amplitude(&f, &b)?;
        let p = numeric_mstep(&b, &f, c, &TrackParams::new(25.0, 25.0, 0.0, 0.0, 0.5))?;
        if fault == Some(Fault::Mstep) {
            x0 += 1e-3;
        }
        for (got, want) in [(p.x0, x0), (p.y0, y0), (p.vx, vx), (p.vy, vy), (p.a, a)] {
            worst_param = worst_param.max((got - want).abs() / (1.0 + want.abs()));
        }
        let mut at = [x0, y0, vx, vy, a];
        if fault == Some(Fault::Gradient) {
            at[1] += 0.5;
        }
        let g = finite_difference_gradient(|q| mstep_objective(&b, &f, c, q), &at, 1e-5);
        worst_grad = worst_grad.max(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    let checks = [
        Check {
            name: "exhaustive_likelihood",
            invariant: "mixture log-likelihood equals the log of the H^N assignment enumeration",
            instances: v.instances,
            worst: worst_ll,
            tolerance: LIKELIHOOD_TOL,
            pass: worst_ll <= LIKELIHOOD_TOL,
        },
        Check {
            name: "mstep_optimality",
            invariant: "closed-form M-step equals the numeric maximizer",
            instances: v.instances,
            worst: worst_param,
            tolerance: MSTEP_TOL,
            pass: worst_param <= MSTEP_TOL,
        },
        Check {
            name: "mstep_gradient",
            invariant: "finite-difference gradient vanishes at the closed-form M-step",
            instances: v.instances,
            worst: worst_grad,
            tolerance: GRADIENT_TOL,
            pass: worst_grad <= GRADIENT_TOL,
        },
    ];
    if json {
        crate::emit(&(serde_json::to_string_pretty(&checks).expect("serializable") + "\n"));
    } else {
        for c in &checks {
            crate::emit(&format!(
                "{} {}: worst {:.3e} (tolerance {:.0e}) over {} instances\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.worst,
                c.tolerance,
                c.instances
            ));
        }
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} ({})", c.name, c.invariant))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join("; ")))
    }
}
