//! Per-airframe temporal train/test split.

use std::collections::BTreeMap;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, FlightKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByDateFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub split_mode: SplitMode,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            split_mode: SplitMode::ByDateFraction,
            train_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Train,
    Test,
}

/// Where each flight went, in dataset order.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Dataset,
    pub test: Dataset,
    pub assignment: Vec<(FlightKey, chrono::NaiveDate, SplitSide)>,
    /// Tails whose calendar span is zero; all their flights went to train.
    pub degenerate_tails: Vec<String>,
}

/// Flights starting in the first `train_fraction` of their tail's calendar
/// span go to train, the rest to test. Flights are never divided.
pub fn temporal_split(ds: &Dataset, cfg: &SplitConfig) -> Result<SplitResult> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} must lie in (0, 1)",
            cfg.train_fraction
        )));
    }
    let flights = ds.flight_ranges();
    let start_of = |r: &std::ops::Range<usize>| {
        let s = &ds.samples[r.start];
        s.date.num_days_from_ce() as f64 + s.t / 86_400.0
    };

    let mut span: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (key, r) in &flights {
        let start = start_of(r);
        span.entry(key.tail_id.clone())
            .and_modify(|(lo, hi)| {
                *lo = lo.min(start);
                *hi = hi.max(start);
            })
            .or_insert((start, start));
    }
    let degenerate_tails: Vec<String> = span
        .iter()
        .filter(|(_, (lo, hi))| hi <= lo)
        .map(|(t, _)| t.to_string())
        .collect();
    for tail in &degenerate_tails {
        log::warn!("tail {tail} spans a single start date; all its flights go to train");
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut assignment = Vec::with_capacity(flights.len());
    for (key, r) in flights {
        let (lo, hi) = span[&key.tail_id];
        let side = if hi <= lo || start_of(&r) - lo < cfg.train_fraction * (hi - lo) {
            SplitSide::Train
        } else {
            SplitSide::Test
        };
        let date = ds.samples[r.start].date;
        match side {
            SplitSide::Train => train.extend_from_slice(&ds.samples[r]),
            SplitSide::Test => test.extend_from_slice(&ds.samples[r]),
        }
        assignment.push((key, date, side));
    }
    Ok(SplitResult {
        train: Dataset::new(train, format!("{} [train]", ds.provenance)),
        test: Dataset::new(test, format!("{} [test]", ds.provenance)),
        assignment,
        degenerate_tails,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::testutil::sample;
    use crate::domain::FlightSample;
    use chrono::NaiveDate;

    fn flight(tail: &str, id: &str, day: i64) -> Vec<FlightSample> {
        let date = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap() + chrono::Duration::days(day);
        (0..3)
            .map(|i| FlightSample {
                date,
                ..sample(tail, id, i as f64 * 4.0)
            })
            .collect()
    }

    #[test]
    fn three_days_two_thirds() {
        let samples = [flight("A", "d0", 0), flight("A", "d1", 1), flight("A", "d2", 2)].concat();
        let r = temporal_split(&Dataset::new(samples, "t"), &SplitConfig::default()).unwrap();
        let train: Vec<_> = r.train.flight_ranges().into_iter().map(|(k, _)| k.flight_id).collect();
        let test: Vec<_> = r.test.flight_ranges().into_iter().map(|(k, _)| k.flight_id).collect();
        assert_eq!(train, vec!["d0", "d1"]);
        assert_eq!(test, vec!["d2"]);
        assert!(r.degenerate_tails.is_empty());
    }

    #[test]
    fn single_flight_tails_go_to_train() {
        let samples = [flight("A", "1", 0), flight("B", "1", 5)].concat();
        let r = temporal_split(&Dataset::new(samples, "t"), &SplitConfig::default()).unwrap();
        assert!(r.test.is_empty());
        assert_eq!(r.train.len(), 6);
        assert_eq!(r.degenerate_tails, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn rejects_bad_fraction() {
        let cfg = SplitConfig {
            train_fraction: 1.0,
            ..Default::default()
        };
        assert!(temporal_split(&Dataset::default(), &cfg).is_err());
    }

    #[test]
    fn partitions_flights() {
        let mut samples = Vec::new();
        for (i, day) in [3, 0, 9, 4, 7, 7, 1].iter().enumerate() {
            samples.extend(flight(if i % 2 == 0 { "A" } else { "B" }, &format!("f{i}"), *day));
        }
        let ds = Dataset::new(samples, "t");
        let r = temporal_split(&ds, &SplitConfig::default()).unwrap();
        assert_eq!(r.train.len() + r.test.len(), ds.len());
        let mut keys: Vec<_> = r.train.flight_ranges().into_iter().map(|(k, _)| k).collect();
        let test_keys: Vec<_> = r.test.flight_ranges().into_iter().map(|(k, _)| k).collect();
        for k in &test_keys {
            assert!(!keys.contains(k));
        }
        keys.extend(test_keys);
        assert_eq!(keys.len(), 7);
    }
}
