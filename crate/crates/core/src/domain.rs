//! Shared domain types: flight samples, datasets, feature selection,
//! normalization statistics and flight-phase classification.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Nominal spacing between consecutive recorder samples, seconds.
pub const SAMPLE_PERIOD_S: f64 = 4.0;

/// Floor applied to standard deviations of degenerate columns.
pub const STD_FLOOR: f64 = 1e-6;

/// Vertical-speed half-band (ft/min) inside which a sample counts as level.
pub const LEVEL_BAND_FPM: f64 = 300.0;

/// One 4-second recorder record.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightSample {
    pub tail_id: String,
    pub flight_id: String,
    /// Calendar day of the flight.
    pub date: NaiveDate,
    /// Seconds since flight start.
    pub t: f64,
    /// ft
    pub pressure_alt: f64,
    /// kt
    pub tas: f64,
    /// kt/s, filled by preprocessing.
    pub dtas_dt: Option<f64>,
    /// ft/min
    pub vertical_speed: f64,
    /// kt
    pub ground_speed: f64,
    /// kg
    pub mass: f64,
    /// years in service
    pub age: f64,
    /// static air temperature, K
    pub sat: f64,
    /// kg/h, absent at pure-prediction time.
    pub fuel_flow: Option<f64>,
}

impl FlightSample {
    /// Checks the physical range invariants and finiteness of every field.
    pub fn validate(&self) -> Result<()> {
        let numeric = [
            ("t_s", self.t),
            ("pressure_alt_ft", self.pressure_alt),
            ("tas_kt", self.tas),
            ("vertical_speed_fpm", self.vertical_speed),
            ("ground_speed_kt", self.ground_speed),
            ("mass_kg", self.mass),
            ("age_yr", self.age),
            ("sat_k", self.sat),
        ];
        for (name, v) in numeric {
            if !v.is_finite() {
                return Err(Error::Data(format!("{name} is not finite")));
            }
        }
        if let Some(a) = self.dtas_dt {
            if !a.is_finite() {
                return Err(Error::Data("dtas_dt is not finite".into()));
            }
        }
        let ranges = [
            ("pressure_alt_ft", self.pressure_alt, -1000.0, 45000.0),
            ("tas_kt", self.tas, 0.0, 600.0),
            ("mass_kg", self.mass, 30000.0, 80000.0),
            ("sat_k", self.sat, 180.0, 330.0),
        ];
        for (name, v, lo, hi) in ranges {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Data(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        if self.age < 0.0 {
            return Err(Error::Data(format!("age_yr = {} is negative", self.age)));
        }
        if let Some(ff) = self.fuel_flow {
            if !ff.is_finite() || ff < 0.0 {
                return Err(Error::Data(format!("fuel_flow_kgh = {ff} invalid")));
            }
        }
        Ok(())
    }

    /// Same sample with the age replaced.
    pub fn with_age(&self, age: f64) -> FlightSample {
        FlightSample {
            age,
            ..self.clone()
        }
    }
}

/// Identifies one flight of one airframe.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlightKey {
    pub tail_id: String,
    pub flight_id: String,
}

impl FlightKey {
    pub fn of(s: &FlightSample) -> Self {
        FlightKey {
            tail_id: s.tail_id.clone(),
            flight_id: s.flight_id.clone(),
        }
    }
}

/// Ordered collection of samples, grouped per flight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<FlightSample>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<FlightSample>, provenance: impl Into<String>) -> Self {
        Dataset {
            samples,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index ranges of consecutive samples sharing a flight key.
    ///
    /// Assumes the dataset is grouped, which ingestion and generation
    /// guarantee.
    pub fn flight_ranges(&self) -> Vec<(FlightKey, std::ops::Range<usize>)> {
        let mut out: Vec<(FlightKey, std::ops::Range<usize>)> = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            let boundary = i == self.samples.len()
                || self.samples[i].tail_id != self.samples[start].tail_id
                || self.samples[i].flight_id != self.samples[start].flight_id;
            if boundary {
                out.push((FlightKey::of(&self.samples[start]), start..i));
                start = i;
            }
        }
        out
    }

    /// Observed fuel flow of every sample; errors if any target is absent.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.fuel_flow
                    .ok_or_else(|| Error::Data(format!("sample {i} has no fuel_flow target")))
            })
            .collect()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.age).collect()
    }
}

/// Model input features drawn from a [`FlightSample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    PressureAlt,
    Tas,
    DtasDt,
    VerticalSpeed,
    GroundSpeed,
    Mass,
    Sat,
    Age,
}

impl Feature {
    /// Every recorder input except age, in canonical order.
    pub const FLIGHT_STATE: [Feature; 7] = [
        Feature::PressureAlt,
        Feature::Tas,
        Feature::DtasDt,
        Feature::VerticalSpeed,
        Feature::GroundSpeed,
        Feature::Mass,
        Feature::Sat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::PressureAlt => "pressure_alt",
            Feature::Tas => "tas",
            Feature::DtasDt => "dtas_dt",
            Feature::VerticalSpeed => "vertical_speed",
            Feature::GroundSpeed => "ground_speed",
            Feature::Mass => "mass",
            Feature::Sat => "sat",
            Feature::Age => "age",
        }
    }

    pub fn value(self, s: &FlightSample) -> Option<f64> {
        match self {
            Feature::PressureAlt => Some(s.pressure_alt),
            Feature::Tas => Some(s.tas),
            Feature::DtasDt => s.dtas_dt,
            Feature::VerticalSpeed => Some(s.vertical_speed),
            Feature::GroundSpeed => Some(s.ground_speed),
            Feature::Mass => Some(s.mass),
            Feature::Sat => Some(s.sat),
            Feature::Age => Some(s.age),
        }
    }

    pub fn require(self, s: &FlightSample) -> Result<f64> {
        self.value(s)
            .ok_or_else(|| Error::MissingFeature(self.name().to_string()))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean and standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    /// Population statistics of a column, std floored at [`STD_FLOOR`].
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        for v in values.clone() {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return None;
        }
        let mean = sum / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(ColumnStats {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Fixed normalization statistics for model inputs and the fuel-flow target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<Feature>,
    pub inputs: Vec<ColumnStats>,
    pub target: ColumnStats,
}

impl NormStats {
    pub fn stats_for(&self, feature: Feature) -> Option<&ColumnStats> {
        self.features
            .iter()
            .position(|&f| f == feature)
            .map(|i| &self.inputs[i])
    }
}

/// Per-feature and target statistics over the training set.
///
/// The target column is mandatory: every sample must carry `fuel_flow`.
pub fn compute_norm_stats(train: &Dataset, features: &[Feature]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut inputs = Vec::with_capacity(features.len());
    for &f in features {
        let column = train
            .samples
            .iter()
            .map(|s| f.require(s))
            .collect::<Result<Vec<f64>>>()?;
        inputs.push(ColumnStats::from_values(column.iter().copied()).expect("non-empty"));
    }
    let target = train.targets().map_err(|_| Error::MissingFeature("fuel_flow".into()))?;
    Ok(NormStats {
        features: features.to_vec(),
        inputs,
        target: ColumnStats::from_values(target.iter().copied()).expect("non-empty"),
    })
}

/// Flight regime decided from vertical speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlightPhase {
    Climb,
    Level,
    Descent,
}

/// Climb above +300 ft/min, descent below -300 ft/min, level otherwise
/// (both boundaries included in level).
pub fn classify_phase(sample: &FlightSample) -> FlightPhase {
    phase_of_vertical_speed(sample.vertical_speed)
}

pub fn phase_of_vertical_speed(vs_fpm: f64) -> FlightPhase {
    if vs_fpm > LEVEL_BAND_FPM {
        FlightPhase::Climb
    } else if vs_fpm < -LEVEL_BAND_FPM {
        FlightPhase::Descent
    } else {
        FlightPhase::Level
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::sample;
    use super::*;
    use proptest::prelude::*;

    fn with_mass(masses: &[f64]) -> Dataset {
        Dataset::new(
            masses
                .iter()
                .enumerate()
                .map(|(i, &m)| FlightSample {
                    mass: m,
                    ..sample("A", "1", i as f64 * 4.0)
                })
                .collect(),
            "test",
        )
    }

    #[test]
    fn degenerate_column_gets_floor() {
        let ns = compute_norm_stats(&with_mass(&[60000.0; 5]), &[Feature::Mass]).unwrap();
        assert_eq!(ns.inputs[0].mean, 60000.0);
        assert_eq!(ns.inputs[0].std, STD_FLOOR);
        // target is constant too
        assert_eq!(ns.target.std, STD_FLOOR);
    }

    #[test]
    fn two_point_population_std() {
        let ds = Dataset::new(
            vec![
                FlightSample {
                    pressure_alt: 0.0,
                    ..sample("A", "1", 0.0)
                },
                FlightSample {
                    pressure_alt: 2.0,
                    ..sample("A", "1", 4.0)
                },
            ],
            "t",
        );
        let ns = compute_norm_stats(&ds, &[Feature::PressureAlt]).unwrap();
        assert_eq!(ns.inputs[0].mean, 1.0);
        assert_eq!(ns.inputs[0].std, 1.0);
    }

    #[test]
    fn large_column_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let masses: Vec<f64> = (0..10_000).map(|_| rng.random_range(40000.0..80000.0)).collect();
        let ns = compute_norm_stats(&with_mass(&masses), &[Feature::Mass]).unwrap();
        // naive two-pass oracle, sequential summation
        let mut sum = 0.0;
        for m in &masses {
            sum += m;
        }
        let mean = sum / masses.len() as f64;
        let mut ss = 0.0;
        for m in &masses {
            ss += (m - mean).powi(2);
        }
        let std = (ss / masses.len() as f64).sqrt();
        assert!(((ns.inputs[0].mean - mean) / mean).abs() < 1e-9);
        assert!(((ns.inputs[0].std - std) / std).abs() < 1e-9);
    }

    #[test]
    fn norm_stats_errors() {
        assert!(matches!(
            compute_norm_stats(&Dataset::default(), &[Feature::Mass]),
            Err(Error::EmptyDataset)
        ));
        let mut ds = with_mass(&[1.0, 2.0]);
        ds.samples[1].dtas_dt = None;
        assert!(matches!(
            compute_norm_stats(&ds, &[Feature::DtasDt]),
            Err(Error::MissingFeature(f)) if f == "dtas_dt"
        ));
    }

    #[test]
    fn phase_thresholds() {
        let s = |vs| FlightSample {
            vertical_speed: vs,
            ..sample("A", "1", 0.0)
        };
        assert_eq!(classify_phase(&s(0.0)), FlightPhase::Level);
        assert_eq!(classify_phase(&s(2000.0)), FlightPhase::Climb);
        assert_eq!(classify_phase(&s(-300.0)), FlightPhase::Level);
        assert_eq!(classify_phase(&s(300.0)), FlightPhase::Level);
        assert_eq!(classify_phase(&s(-300.0001)), FlightPhase::Descent);
    }

    #[test]
    fn flight_ranges_group_consecutive() {
        let ds = Dataset::new(
            vec![
                sample("A", "1", 0.0),
                sample("A", "1", 4.0),
                sample("A", "2", 0.0),
                sample("B", "2", 0.0),
            ],
            "t",
        );
        let r = ds.flight_ranges();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].1, 0..2);
        assert_eq!(r[2].0.tail_id, "B");
    }

    proptest! {
        #[test]
        fn normalization_round_trip(xs in prop::collection::vec(-1e4f64..1e4, 2..50)) {
            let stats = ColumnStats::from_values(xs.iter().copied()).unwrap();
            prop_assume!(stats.std > STD_FLOOR);
            for &x in &xs {
                let back = stats.denormalize(stats.normalize(x));
                prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn norm_stats_permutation_invariant(
            xs in prop::collection::vec(30000.0f64..80000.0, 2..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = compute_norm_stats(&with_mass(&xs), &[Feature::Mass]).unwrap();
            let b = compute_norm_stats(&with_mass(&shuffled), &[Feature::Mass]).unwrap();
            prop_assert!((a.inputs[0].mean - b.inputs[0].mean).abs() <= 1e-9 * a.inputs[0].mean);
            prop_assert!((a.inputs[0].std - b.inputs[0].std).abs() <= 1e-6 * a.inputs[0].std.max(1.0));
        }

        #[test]
        fn phase_is_total_partition(vs in -1e5f64..1e5) {
            let p = phase_of_vertical_speed(vs);
            let expect = if vs > 300.0 { FlightPhase::Climb } else if vs < -300.0 { FlightPhase::Descent } else { FlightPhase::Level };
            prop_assert_eq!(p, expect);
        }
    }
}
