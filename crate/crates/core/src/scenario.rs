//! Synthetic multi-scan batches: uniform clutter plus constant-velocity
//! targets observed with sensor noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_batch, Batch, Interval, Measurement, MeasurementBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    /// Mean return amplitude.
    pub amplitude: f64,
}

/// Shape of the clutter amplitude and Doppler distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClutterShape {
    /// Uniform with the configured mean and standard deviation
    /// (half-width `√3·σ`).
    #[default]
    Uniform,
    /// Gaussian, clipped to the bounds.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanSigma {
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    pub x: f64,
    pub y: f64,
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area_width: f64,
    pub area_height: f64,
    pub num_scans: u32,
    pub revisit_interval: f64,
    pub clutter_per_scan: usize,
    pub targets: Vec<TargetSpec>,
    pub clutter_shape: ClutterShape,
    pub clutter_amplitude: MeanSigma,
    pub clutter_doppler: MeanSigma,
    pub target_amplitude_sigma: f64,
    pub sensor_noise: SensorNoise,
    pub amplitude_range: Interval,
    pub doppler_range: Interval,
    /// Probability that a target produces no return on a scan.
    pub miss_probability: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::fig1()
    }
}

impl ScenarioConfig {
    /// Three targets under heavy clutter: six scans of 500 returns over a
    /// 500 m x 500 m patch, amplitude S/C near -2 dB and Doppler near -3 dB.
    pub fn fig1() -> Self {
        Self {
            area_width: 500.0,
            area_height: 500.0,
            num_scans: 6,
            revisit_interval: 3.0,
            clutter_per_scan: 500,
            targets: vec![
                TargetSpec {
                    x0: 100.0,
                    y0: 120.0,
                    vx: 12.0,
                    vy: 6.0,
                    amplitude: 0.77,
                },
                TargetSpec {
                    x0: 380.0,
                    y0: 200.0,
                    vx: -13.5,
                    vy: 4.0,
                    amplitude: 0.77,
                },
                TargetSpec {
                    x0: 150.0,
                    y0: 400.0,
                    vx: 12.5,
                    vy: -7.0,
                    amplitude: 0.77,
                },
            ],
            clutter_shape: ClutterShape::Uniform,
            clutter_amplitude: MeanSigma {
                mean: 0.5,
                sigma: 0.5 / 3f64.sqrt(),
            },
            clutter_doppler: MeanSigma {
                mean: 0.0,
                sigma: 30.0 / 3f64.sqrt(),
            },
            target_amplitude_sigma: 0.05,
            sensor_noise: SensorNoise {
                x: 5.0,
                y: 5.0,
                doppler: 0.5,
            },
            amplitude_range: Interval::new(0.0, 1.0),
            doppler_range: Interval::new(-30.0, 30.0),
            miss_probability: 0.0,
            rng_seed: 1,
        }
    }

    /// One target over eight frames with the given clutter count per frame;
    /// amplitude S/C 1.7 and Doppler S/C 2.0.
    pub fn fig2(clutter_per_scan: usize) -> Self {
        Self {
            area_width: 200.0,
            area_height: 200.0,
            num_scans: 8,
            revisit_interval: 2.0,
            clutter_per_scan,
            targets: vec![TargetSpec {
                x0: 15.0,
                y0: 80.0,
                vx: 12.55,
                vy: 5.0,
                amplitude: 1.0415,
            }],
            clutter_shape: ClutterShape::Uniform,
            clutter_amplitude: MeanSigma {
                mean: 0.5,
                sigma: 0.5 / 3f64.sqrt(),
            },
            clutter_doppler: MeanSigma {
                mean: 0.0,
                sigma: 10.0 / 3f64.sqrt(),
            },
            target_amplitude_sigma: 0.03,
            sensor_noise: SensorNoise {
                x: 5.0,
                y: 5.0,
                doppler: 0.5,
            },
            amplitude_range: Interval::new(0.0, 1.3),
            doppler_range: Interval::new(-14.0, 14.0),
            miss_probability: 0.0,
            rng_seed: 1,
        }
    }

    pub fn bounds(&self) -> MeasurementBounds {
        MeasurementBounds {
            x: Interval::new(0.0, self.area_width),
            y: Interval::new(0.0, self.area_height),
            a: self.amplitude_range,
            d: self.doppler_range,
        }
    }

    pub fn scan_time(&self, scan: u32) -> f64 {
        scan as f64 * self.revisit_interval
    }

    pub fn duration(&self) -> f64 {
        self.scan_time(self.num_scans.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        positive("area_width", self.area_width)?;
        positive("area_height", self.area_height)?;
        positive("revisit_interval", self.revisit_interval)?;
        positive("clutter_amplitude.sigma", self.clutter_amplitude.sigma)?;
        positive("clutter_doppler.sigma", self.clutter_doppler.sigma)?;
        positive("target_amplitude_sigma", self.target_amplitude_sigma)?;
        positive("sensor_noise.x", self.sensor_noise.x)?;
        positive("sensor_noise.y", self.sensor_noise.y)?;
        positive("sensor_noise.doppler", self.sensor_noise.doppler)?;
        if self.num_scans < 1 {
            return Err(Error::config("num_scans", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.miss_probability) {
            return Err(Error::config("miss_probability", "must lie in [0, 1)"));
        }
        self.bounds()
            .validate()
            .map_err(|e| Error::config("bounds", e.to_string()))?;
        let area = self.bounds();
        for (i, tg) in self.targets.iter().enumerate() {
            for scan in 0..self.num_scans {
                let t = self.scan_time(scan);
                let (x, y) = (tg.x0 + tg.vx * t, tg.y0 + tg.vy * t);
                if !(area.x.contains(x) && area.y.contains(y)) {
                    return Err(Error::config(
                        format!("targets[{i}]"),
                        format!("leaves the area at scan {scan} (x={x:.1}, y={y:.1})"),
                    ));
                }
            }
            if !area.d.contains(tg.vx) {
                return Err(Error::config(
                    format!("targets[{i}].vx"),
                    "Doppler falls outside doppler_range",
                ));
            }
            if !area.a.contains(tg.amplitude) {
                return Err(Error::config(
                    format!("targets[{i}].amplitude"),
                    "falls outside amplitude_range",
                ));
            }
        }
        Ok(())
    }

    /// Same configuration with a seed derived from `(rng_seed, replica)`.
    pub fn replica(&self, replica: u64) -> Self {
        let mut c = self.clone();
        c.rng_seed = derive_seed(self.rng_seed, replica);
        c
    }
}

/// SplitMix64 mix of a base seed and a replica index.
pub fn derive_seed(base: u64, replica: u64) -> u64 {
    let mut z = base ^ replica.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetTruth {
    pub target_id: u32,
    pub spec: TargetSpec,
    /// Batch index of this target's return on each scan (`None` if missed).
    pub returns: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GroundTruth {
    pub targets: Vec<TargetTruth>,
}

impl GroundTruth {
    /// `(measurement_index, target_id)` pairs in index order.
    pub fn assignments(&self) -> Vec<(usize, u32)> {
        let mut v: Vec<(usize, u32)> = self
            .targets
            .iter()
            .flat_map(|t| t.returns.iter().flatten().map(move |&i| (i, t.target_id)))
            .collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub batch: Batch,
    pub truth: GroundTruth,
}

fn draw_feature<R: Rng>(rng: &mut R, shape: ClutterShape, ms: MeanSigma, range: Interval) -> f64 {
    let v = match shape {
        ClutterShape::Uniform => {
            let half = 3f64.sqrt() * ms.sigma;
            rng.gen_range(ms.mean - half..=ms.mean + half)
        }
        ClutterShape::Gaussian => Normal::new(ms.mean, ms.sigma)
            .expect("sigma validated")
            .sample(rng),
    };
    v.clamp(range.min, range.max)
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let bounds = cfg.bounds();
    let noise_x = Normal::new(0.0, cfg.sensor_noise.x).expect("validated");
    let noise_y = Normal::new(0.0, cfg.sensor_noise.y).expect("validated");
    let noise_d = Normal::new(0.0, cfg.sensor_noise.doppler).expect("validated");
    let noise_a = Normal::new(0.0, cfg.target_amplitude_sigma).expect("validated");

    let mut measurements = Vec::new();
    let mut returns = vec![vec![None; cfg.num_scans as usize]; cfg.targets.len()];
    // (measurement, Some(target index)) for one scan, shuffled before commit
    let mut scan_rows: Vec<(Measurement, Option<usize>)> = Vec::new();
    for scan in 0..cfg.num_scans {
        let t = cfg.scan_time(scan);
        scan_rows.clear();
        for _ in 0..cfg.clutter_per_scan {
            let m = Measurement {
                scan,
                t,
                x: rng.gen_range(bounds.x.min..=bounds.x.max),
                y: rng.gen_range(bounds.y.min..=bounds.y.max),
                a: draw_feature(&mut rng, cfg.clutter_shape, cfg.clutter_amplitude, bounds.a),
                d: draw_feature(&mut rng, cfg.clutter_shape, cfg.clutter_doppler, bounds.d),
            };
            scan_rows.push((m, None));
        }
        for (k, tg) in cfg.targets.iter().enumerate() {
            if cfg.miss_probability > 0.0 && rng.gen_bool(cfg.miss_probability) {
                continue;
            }
            let m = Measurement {
                scan,
                t,
                x: (tg.x0 + tg.vx * t + noise_x.sample(&mut rng)).clamp(bounds.x.min, bounds.x.max),
                y: (tg.y0 + tg.vy * t + noise_y.sample(&mut rng)).clamp(bounds.y.min, bounds.y.max),
                a: (tg.amplitude + noise_a.sample(&mut rng)).clamp(bounds.a.min, bounds.a.max),
                d: (tg.vx + noise_d.sample(&mut rng)).clamp(bounds.d.min, bounds.d.max),
            };
            scan_rows.push((m, Some(k)));
        }
        scan_rows.shuffle(&mut rng);
        for (m, owner) in scan_rows.drain(..) {
            if let Some(k) = owner {
                returns[k][scan as usize] = Some(measurements.len());
            }
            measurements.push(m);
        }
    }

    let truth = GroundTruth {
        targets: cfg
            .targets
            .iter()
            .zip(returns)
            .enumerate()
            .map(|(k, (spec, returns))| TargetTruth {
                target_id: k as u32 + 1,
                spec: *spec,
                returns,
            })
            .collect(),
    };
    let batch = validate_batch(measurements, &bounds)?;
    Ok(Scenario {
        config: cfg.clone(),
        batch,
        truth,
    })
}

/// Signal-to-clutter ratios: mean separation over the summed standard
/// deviations of clutter and target, per feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScrReport {
    pub amplitude: f64,
    pub doppler: f64,
    pub amplitude_db: f64,
    pub doppler_db: f64,
}

pub fn scr_report(cfg: &ScenarioConfig) -> ScrReport {
    let k = cfg.targets.len().max(1) as f64;
    let mean_amp = cfg.targets.iter().map(|t| t.amplitude).sum::<f64>() / k;
    let mean_dop = cfg
        .targets
        .iter()
        .map(|t| (t.vx - cfg.clutter_doppler.mean).abs())
        .sum::<f64>()
        / k;
    let amplitude = (mean_amp - cfg.clutter_amplitude.mean)
        / (cfg.clutter_amplitude.sigma + cfg.target_amplitude_sigma);
    let doppler = mean_dop / (cfg.clutter_doppler.sigma + cfg.sensor_noise.doppler);
    ScrReport {
        amplitude,
        doppler,
        amplitude_db: 20.0 * amplitude.abs().log10(),
        doppler_db: 20.0 * doppler.abs().log10(),
    }
}
