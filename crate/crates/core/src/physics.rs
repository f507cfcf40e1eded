//! Open parametric fuel-flow baseline.
//!
//! Total-energy thrust balance over a parabolic drag polar, a speed-dependent
//! thrust-specific fuel consumption, maximum climb thrust while climbing and
//! idle fuel flow while descending. None of it knows about ageing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{classify_phase, FlightPhase, FlightSample};
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub const G0: f64 = 9.80665;
pub const R_AIR: f64 = 287.05287;
pub const KT_TO_MS: f64 = 0.514444;
pub const FPM_TO_MS: f64 = 0.00508;
pub const FT_TO_M: f64 = 0.3048;

const P0: f64 = 101_325.0;
const T0: f64 = 288.15;
const LAPSE: f64 = 0.0065;
const TROPOPAUSE_M: f64 = 11_000.0;
const T_TROPOPAUSE: f64 = T0 - LAPSE * TROPOPAUSE_M;
const MIN_TAS_KT: f64 = 60.0;

/// Coefficients of the parametric model. Units in field docs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricCoeffs {
    /// m²
    pub wing_area: f64,
    pub cd0: f64,
    pub k_induced: f64,
    /// kg/(min·kN)
    pub cf1: f64,
    /// kt
    pub cf2: f64,
    /// cruise SFC correction
    pub cfcr: f64,
    /// kg/min idle fuel at sea level
    pub cf3: f64,
    /// ft
    pub cf4: f64,
    /// kN
    pub ct1: f64,
    /// ft
    pub ct2: f64,
    /// 1/ft²
    pub ct3: f64,
}

impl Default for ParametricCoeffs {
    /// Engineering defaults for an A320-class twin: about 2350 kg/h in a
    /// 60 t cruise at FL350 and 450 kt.
    fn default() -> Self {
        ParametricCoeffs {
            wing_area: 122.6,
            cd0: 0.024,
            k_induced: 0.039,
            cf1: 0.70,
            cf2: 1000.0,
            cfcr: 0.95,
            cf3: 8.0,
            cf4: 100_000.0,
            ct1: 140.0,
            ct2: 50_000.0,
            ct3: 1.0e-10,
        }
    }
}

const COEFF_KEYS: [&str; 11] = [
    "wing_area", "cd0", "k_induced", "cf1", "cf2", "cfcr", "cf3", "cf4", "ct1", "ct2", "ct3",
];

impl ParametricCoeffs {
    fn values(&self) -> [f64; 11] {
        [
            self.wing_area,
            self.cd0,
            self.k_induced,
            self.cf1,
            self.cf2,
            self.cfcr,
            self.cf3,
            self.cf4,
            self.ct1,
            self.ct2,
            self.ct3,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in COEFF_KEYS.iter().zip(self.values()) {
            let ok = if *name == "ct3" { v >= 0.0 } else { v > 0.0 };
            if !v.is_finite() || !ok {
                return Err(Error::Config(format!("coefficient {name} = {v} out of range")));
            }
        }
        if self.cd0 >= 0.1 || self.k_induced >= 0.2 {
            return Err(Error::Config("cd0 must be < 0.1 and k_induced < 0.2".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        for key in kv.keys() {
            if !COEFF_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown coefficient `{key}`")));
            }
        }
        let c = ParametricCoeffs {
            wing_area: kv.require("wing_area")?,
            cd0: kv.require("cd0")?,
            k_induced: kv.require("k_induced")?,
            cf1: kv.require("cf1")?,
            cf2: kv.require("cf2")?,
            cfcr: kv.require("cfcr")?,
            cf3: kv.require("cf3")?,
            cf4: kv.require("cf4")?,
            ct1: kv.require("ct1")?,
            ct2: kv.require("ct2")?,
            ct3: kv.require("ct3")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        for (k, v) in COEFF_KEYS.iter().zip(self.values()) {
            kv.insert(*k, v);
        }
        kv
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }
}

/// Gas state at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atmosphere {
    /// Pa
    pub pressure: f64,
    /// kg/m³
    pub density: f64,
    /// K
    pub temperature: f64,
}

impl Atmosphere {
    pub fn at(pressure_alt_ft: f64, sat: f64) -> Result<Self> {
        let pressure = isa_pressure(pressure_alt_ft)?;
        Ok(Atmosphere {
            pressure,
            density: pressure / (R_AIR * sat),
            temperature: sat,
        })
    }
}

fn check_altitude(h_ft: f64) -> Result<()> {
    if (-1000.0..=45000.0).contains(&h_ft) {
        Ok(())
    } else {
        Err(Error::AltitudeOutOfRange(h_ft))
    }
}

/// ISA static pressure at a pressure altitude.
pub fn isa_pressure(pressure_alt_ft: f64) -> Result<f64> {
    check_altitude(pressure_alt_ft)?;
    let h = pressure_alt_ft * FT_TO_M;
    let expo = G0 / (R_AIR * LAPSE);
    if h <= TROPOPAUSE_M {
        Ok(P0 * (1.0 - LAPSE * h / T0).powf(expo))
    } else {
        let p_trop = P0 * (T_TROPOPAUSE / T0).powf(expo);
        Ok(p_trop * (-G0 / (R_AIR * T_TROPOPAUSE) * (h - TROPOPAUSE_M)).exp())
    }
}

/// ISA temperature at a pressure altitude, K.
pub fn isa_temperature(pressure_alt_ft: f64) -> f64 {
    let h = pressure_alt_ft * FT_TO_M;
    if h <= TROPOPAUSE_M {
        T0 - LAPSE * h
    } else {
        T_TROPOPAUSE
    }
}

pub fn air_density(pressure_alt_ft: f64, sat: f64) -> Result<f64> {
    Ok(isa_pressure(pressure_alt_ft)? / (R_AIR * sat))
}

/// Aerodynamic drag in N from the parabolic polar.
pub fn drag(mass: f64, tas_kt: f64, rho: f64, c: &ParametricCoeffs) -> Result<f64> {
    if tas_kt <= MIN_TAS_KT {
        return Err(Error::AirspeedTooLow(tas_kt));
    }
    let v = tas_kt * KT_TO_MS;
    let q = 0.5 * rho * v * v;
    let cl = mass * G0 / (q * c.wing_area);
    let cd = c.cd0 + c.k_induced * cl * cl;
    Ok(q * c.wing_area * cd)
}

/// Total-energy thrust balance in N.
pub fn thrust_required(
    mass: f64,
    tas_kt: f64,
    dtas_dt: f64,
    vertical_speed_fpm: f64,
    drag_n: f64,
) -> Result<f64> {
    if tas_kt <= MIN_TAS_KT {
        return Err(Error::AirspeedTooLow(tas_kt));
    }
    let v = tas_kt * KT_TO_MS;
    Ok(drag_n + mass * dtas_dt * KT_TO_MS + mass * G0 * vertical_speed_fpm * FPM_TO_MS / v)
}

/// Maximum climb thrust in N, clamped at zero.
pub fn max_climb_thrust(pressure_alt_ft: f64, c: &ParametricCoeffs) -> Result<f64> {
    check_altitude(pressure_alt_ft)?;
    let h = pressure_alt_ft;
    let t = c.ct1 * (1.0 - h / c.ct2 + c.ct3 * h * h) * 1000.0;
    if t < 0.0 {
        log::warn!("max climb thrust negative at {h} ft; clamped to 0");
        return Ok(0.0);
    }
    Ok(t)
}

/// Idle fuel flow in kg/h.
pub fn idle_fuel_flow(pressure_alt_ft: f64, c: &ParametricCoeffs) -> f64 {
    (c.cf3 * (1.0 - pressure_alt_ft / c.cf4)).max(0.0) * 60.0
}

/// Thrust-specific fuel consumption, kg/(min·kN).
pub fn tsfc(tas_kt: f64, c: &ParametricCoeffs) -> f64 {
    c.cf1 * (1.0 + tas_kt / c.cf2)
}

/// Baseline fuel flow in kg/h for a preprocessed sample.
pub fn fuel_flow_baseline(sample: &FlightSample, c: &ParametricCoeffs) -> Result<f64> {
    let h = sample.pressure_alt;
    let idle = idle_fuel_flow(h, c);
    let (thrust, cruise_factor) = match classify_phase(sample) {
        FlightPhase::Descent => {
            check_altitude(h)?;
            return Ok(idle);
        }
        FlightPhase::Climb => (max_climb_thrust(h, c)?, 1.0),
        FlightPhase::Level => {
            let dtas_dt = sample
                .dtas_dt
                .ok_or_else(|| Error::MissingFeature("dtas_dt".into()))?;
            let rho = air_density(h, sample.sat)?;
            let d = drag(sample.mass, sample.tas, rho, c)?;
            let t = thrust_required(sample.mass, sample.tas, dtas_dt, sample.vertical_speed, d)?;
            (t, c.cfcr)
        }
    };
    let ff = tsfc(sample.tas, c) * cruise_factor * (thrust / 1000.0) * 60.0;
    Ok(ff.max(idle))
}

/// Convenience wrapper holding the coefficient set.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhysicsBaseline {
    pub coeffs: ParametricCoeffs,
}

impl PhysicsBaseline {
    pub fn new(coeffs: ParametricCoeffs) -> Self {
        PhysicsBaseline { coeffs }
    }

    pub fn predict(&self, s: &FlightSample) -> Result<f64> {
        fuel_flow_baseline(s, &self.coeffs)
    }

    pub fn predict_all(&self, samples: &[FlightSample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }
}
