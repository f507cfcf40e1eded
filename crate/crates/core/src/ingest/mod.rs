//! Recorder CSV ingestion, signal preprocessing and the temporal split.

mod qar_csv;
mod savgol;
mod split;

pub use qar_csv::{
    parse_qar_csv, parse_qar_reader, write_qar_csv, write_qar_writer, ParsedCsv, ACCEL_COLUMN,
    QAR_COLUMNS,
};
pub use savgol::{derive_acceleration, savgol_smooth, SavGolConfig};
pub use split::{temporal_split, SplitConfig, SplitMode, SplitResult, SplitSide};

use rayon::prelude::*;

use crate::domain::{Dataset, FlightSample, SAMPLE_PERIOD_S};
use crate::error::{Error, Result};

/// Result of [`preprocess`].
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub dataset: Dataset,
    /// Flights shorter than the smoothing window, left out.
    pub dropped_flights: Vec<String>,
}

/// Smooths true airspeed and vertical speed per flight, then derives the
/// acceleration from the smoothed airspeed.
pub fn preprocess(ds: &Dataset, cfg: &SavGolConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let flights = ds.flight_ranges();
    let processed: Vec<Result<Option<Vec<FlightSample>>>> = flights
        .par_iter()
        .map(|(_, r)| {
            let flight = &ds.samples[r.clone()];
            if flight.len() < cfg.window_len.max(3) {
                return Ok(None);
            }
            let tas: Vec<f64> = flight.iter().map(|s| s.tas).collect();
            let vs: Vec<f64> = flight.iter().map(|s| s.vertical_speed).collect();
            let tas_s = savgol_smooth(&tas, cfg)?;
            let vs_s = savgol_smooth(&vs, cfg)?;
            let accel = derive_acceleration(&tas_s, SAMPLE_PERIOD_S)?;
            Ok(Some(
                flight
                    .iter()
                    .enumerate()
                    .map(|(i, s)| FlightSample {
                        tas: tas_s[i].max(0.0),
                        vertical_speed: vs_s[i],
                        dtas_dt: Some(accel[i]),
                        ..s.clone()
                    })
                    .collect(),
            ))
        })
        .collect();

    let mut samples = Vec::with_capacity(ds.len());
    let mut dropped_flights = Vec::new();
    for ((key, _), out) in flights.iter().zip(processed) {
        match out? {
            Some(f) => samples.extend(f),
            None => dropped_flights.push(format!("{}/{}", key.tail_id, key.flight_id)),
        }
    }
    if !dropped_flights.is_empty() {
        log::warn!(
            "dropped {} flights shorter than the {}-sample smoothing window",
            dropped_flights.len(),
            cfg.window_len
        );
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Preprocessed {
        dataset: Dataset::new(samples, format!("{} [prep]", ds.provenance)),
        dropped_flights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::testutil::sample;

    #[test]
    fn preprocess_fills_acceleration_and_drops_short_flights() {
        let mut samples: Vec<FlightSample> = (0..20)
            .map(|i| FlightSample {
                tas: 250.0 + 2.0 * i as f64,
                dtas_dt: None,
                ..sample("A", "long", i as f64 * 4.0)
            })
            .collect();
        samples.extend((0..4).map(|i| sample("A", "short", i as f64 * 4.0)));
        let out = preprocess(&Dataset::new(samples, "t"), &SavGolConfig::default()).unwrap();
        assert_eq!(out.dropped_flights, vec!["A/short".to_string()]);
        assert_eq!(out.dataset.len(), 20);
        for s in &out.dataset.samples {
            assert!((s.dtas_dt.unwrap() - 0.5).abs() < 1e-9);
        }
    }
}
