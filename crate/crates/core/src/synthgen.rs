//! Synthetic recorder data for a small fleet with a planted ageing law.
//!
//! Each flight is a trapezoidal climb / cruise / descent profile. The
//! recorded fuel flow is the physics baseline scaled by the planted
//! log-age coefficient, a per-airframe log-normal idiosyncrasy and
//! multiplicative Gaussian measurement noise.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, FlightSample, SAMPLE_PERIOD_S};
use crate::error::{Error, Result};
use crate::physics::{fuel_flow_baseline, isa_temperature, ParametricCoeffs};

const DAYS_PER_YEAR: f64 = 365.25;
const START_ALT_FT: f64 = 2000.0;
const CLIMB_RATE_FPM: f64 = 2000.0;
const DESCENT_RATE_FPM: f64 = -1800.0;
const LOW_SPEED_KT: f64 = 250.0;
const LOW_SPEED_CEILING_FT: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tails: usize,
    /// Years in service covered by the fleet, `[lo, hi]`.
    pub age_range: (f64, f64),
    pub flights_per_tail: usize,
    pub seed: u64,
    /// Planted deterioration slope `a` of `1 + a ln(age + 1)`.
    pub a_true: f64,
    /// Standard deviation of the log of the per-airframe factor.
    pub tail_bias_sd: f64,
    /// Relative measurement noise.
    pub noise_sd: f64,
    pub calendar_span_days: u32,
    pub coeffs: ParametricCoeffs,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tails: 9,
            age_range: (3.0, 14.0),
            flights_per_tail: 24,
            seed: 42,
            a_true: 0.0231,
            tail_bias_sd: 0.01,
            noise_sd: 0.02,
            calendar_span_days: 730,
            coeffs: ParametricCoeffs::default(),
        }
    }
}

impl SynthConfig {
    fn span_years(&self) -> f64 {
        self.calendar_span_days as f64 / DAYS_PER_YEAR
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_tails == 0 {
            return bad("n_tails must be at least 1".into());
        }
        if self.flights_per_tail == 0 {
            return bad("flights_per_tail must be at least 1".into());
        }
        if !(self.a_true >= 0.0) || !self.a_true.is_finite() {
            return bad(format!("a_true = {} must be finite and ≥ 0", self.a_true));
        }
        if !(self.noise_sd >= 0.0) || !(self.tail_bias_sd >= 0.0) {
            return bad("noise_sd and tail_bias_sd must be ≥ 0".into());
        }
        let (lo, hi) = self.age_range;
        if !(lo >= 0.0) || !(hi > lo) {
            return bad(format!("age range [{lo}, {hi}] invalid"));
        }
        if lo + self.span_years() > hi {
            return bad(format!(
                "calendar span of {} days does not fit in the age range [{lo}, {hi}]",
                self.calendar_span_days
            ));
        }
        self.coeffs.validate()
    }
}

fn smoothstep(x: f64) -> (f64, f64) {
    let x = x.clamp(0.0, 1.0);
    (x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x))
}

/// Per-flight profile parameters.
#[derive(Debug, Clone, Copy)]
struct Profile {
    cruise_alt: f64,
    cruise_tas: f64,
    cruise_s: f64,
    mass0: f64,
    isa_dev: f64,
}

impl Profile {
    fn climb_s(&self) -> f64 {
        (self.cruise_alt - START_ALT_FT) / CLIMB_RATE_FPM * 60.0
    }

    fn descent_s(&self) -> f64 {
        (self.cruise_alt - START_ALT_FT) / -DESCENT_RATE_FPM * 60.0
    }

    fn duration_s(&self) -> f64 {
        self.climb_s() + self.cruise_s + self.descent_s()
    }

    /// Altitude (ft) and vertical speed (ft/min) at time `t`.
    fn vertical(&self, t: f64) -> (f64, f64) {
        let tc = self.climb_s();
        let tl = tc + self.cruise_s;
        if t < tc {
            (START_ALT_FT + CLIMB_RATE_FPM * t / 60.0, CLIMB_RATE_FPM)
        } else if t < tl {
            (self.cruise_alt, 0.0)
        } else {
            let h = self.cruise_alt + DESCENT_RATE_FPM * (t - tl) / 60.0;
            (h.max(START_ALT_FT), DESCENT_RATE_FPM)
        }
    }

    /// True airspeed (kt) and its time derivative (kt/s) on the
    /// altitude-scheduled speed law.
    fn speed(&self, h: f64, vs_fpm: f64) -> (f64, f64) {
        if h <= LOW_SPEED_CEILING_FT {
            return (LOW_SPEED_KT, 0.0);
        }
        let span = self.cruise_alt - LOW_SPEED_CEILING_FT;
        let (s, ds) = smoothstep((h - LOW_SPEED_CEILING_FT) / span);
        let gain = self.cruise_tas - LOW_SPEED_KT;
        (LOW_SPEED_KT + gain * s, gain * ds / span * vs_fpm / 60.0)
    }
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date")
}

pub fn tail_name(index: usize) -> String {
    format!("TAIL{:02}", index + 1)
}

fn generate_tail(cfg: &SynthConfig, index: usize) -> Result<Vec<FlightSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (lo, hi) = cfg.age_range;
    let usable = hi - cfg.span_years() - lo;
    // stratified entry age so the fleet covers the whole range
    let age0 = lo + (index as f64 + rng.random::<f64>()) / cfg.n_tails as f64 * usable;
    let tail_bias = if cfg.tail_bias_sd > 0.0 {
        Normal::new(0.0, cfg.tail_bias_sd)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng)
            .exp()
    } else {
        1.0
    };
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let isa_dev = Normal::new(0.0, 3.0).expect("valid sd");
    let tail = tail_name(index);

    let mut out = Vec::new();
    for k in 0..cfg.flights_per_tail {
        let day = (k as u64 * cfg.calendar_span_days as u64 / cfg.flights_per_tail as u64) as i64;
        let date = base_date() + chrono::Duration::days(day);
        let age = age0 + day as f64 / DAYS_PER_YEAR;
        let coeff = 1.0 + cfg.a_true * (age + 1.0).ln();
        let profile = Profile {
            cruise_alt: 28_000.0 + 1000.0 * rng.random_range(0..=11) as f64,
            cruise_tas: rng.random_range(430.0..460.0),
            cruise_s: rng.random_range(20.0..80.0) * 60.0,
            mass0: rng.random_range(55_000.0..75_000.0),
            isa_dev: isa_dev.sample(&mut rng),
        };
        let flight_id = format!("{tail}-{k:04}");
        let n = (profile.duration_s() / SAMPLE_PERIOD_S).floor() as usize + 1;
        let mut mass = profile.mass0;
        for i in 0..n {
            let t = i as f64 * SAMPLE_PERIOD_S;
            let (h, vs) = profile.vertical(t);
            let (tas, dtas_dt) = profile.speed(h, vs);
            let mut s = FlightSample {
                tail_id: tail.clone(),
                flight_id: flight_id.clone(),
                date,
                t,
                pressure_alt: h,
                tas,
                dtas_dt: Some(dtas_dt),
                vertical_speed: vs,
                ground_speed: tas,
                mass,
                age,
                sat: isa_temperature(h) + profile.isa_dev,
                fuel_flow: None,
            };
            let baseline = fuel_flow_baseline(&s, &cfg.coeffs)?;
            let eps = if cfg.noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let recorded = (baseline * coeff * tail_bias * (1.0 + eps)).max(0.0);
            s.fuel_flow = Some(recorded);
            mass -= recorded * SAMPLE_PERIOD_S / 3600.0;
            out.push(s);
        }
    }
    Ok(out)
}

/// Deterministic for a fixed config; tails are generated in parallel on
/// independent random streams.
pub fn generate_fleet(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let tails: Vec<Result<Vec<FlightSample>>> = (0..cfg.n_tails)
        .into_par_iter()
        .map(|i| generate_tail(cfg, i))
        .collect();
    let mut samples = Vec::new();
    for t in tails {
        samples.extend(t?);
    }
    Ok(Dataset::new(
        samples,
        format!(
            "synthetic fleet: {} tails, seed {}, a_true {}",
            cfg.n_tails, cfg.seed, cfg.a_true
        ),
    ))
}
