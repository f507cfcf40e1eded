//! Error metrics, age-binned reporting and integrated fuel consumption.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, FlightSample, SAMPLE_PERIOD_S};
use crate::error::{Error, Result};

/// Targets at or below this fuel flow (kg/h) are left out of MAPE.
pub const MAPE_FLOOR_KGH: f64 = 1.0;

/// Bins with fewer samples are flagged as low confidence.
pub const LOW_CONFIDENCE_MIN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    /// Fraction; `None` when every target fell under the floor.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub me: f64,
    pub mse: f64,
    pub bias_ratio: f64,
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

pub fn metrics(preds: &[f64], targets: &[f64]) -> Result<Metrics> {
    check_lengths(preds.len(), targets.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = preds.len() as f64;
    let (mut abs, mut signed, mut sq, mut pct) = (0.0, 0.0, 0.0, 0.0);
    let mut excluded = 0usize;
    for (&p, &y) in preds.iter().zip(targets) {
        let e = p - y;
        abs += e.abs();
        signed += e;
        sq += e * e;
        if y > MAPE_FLOOR_KGH {
            pct += e.abs() / y;
        } else {
            excluded += 1;
        }
    }
    let me = signed / n;
    let mse = sq / n;
    let kept = preds.len() - excluded;
    Ok(Metrics {
        n: preds.len(),
        mae: abs / n,
        mape: (kept > 0).then(|| pct / kept as f64),
        mape_excluded: excluded,
        me,
        mse,
        // rounding can push ME² a hair above MSE
        bias_ratio: if mse > 0.0 { (me * me / mse).min(1.0) } else { 0.0 },
    })
}

/// Metrics for samples whose age falls in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    pub bin: i64,
    pub lo: f64,
    pub hi: f64,
    pub low_confidence: bool,
    pub metrics: Metrics,
}

pub fn metrics_by_age(preds: &[f64], samples: &[FlightSample], bin_width: f64) -> Result<Vec<AgeBin>> {
    check_lengths(preds.len(), samples.len())?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(bin_width > 0.0) {
        return Err(Error::Config(format!("bin width {bin_width} must be positive")));
    }
    let mut bins: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (&p, s) in preds.iter().zip(samples) {
        let y = s.fuel_flow.ok_or_else(|| Error::Data("sample without fuel flow".into()))?;
        let entry = bins.entry((s.age / bin_width).floor() as i64).or_default();
        entry.0.push(p);
        entry.1.push(y);
    }
    bins.into_iter()
        .map(|(bin, (p, y))| {
            Ok(AgeBin {
                bin,
                lo: bin as f64 * bin_width,
                hi: (bin + 1) as f64 * bin_width,
                low_confidence: p.len() < LOW_CONFIDENCE_MIN,
                metrics: metrics(&p, &y)?,
            })
        })
        .collect()
}

/// Left-rectangle integral of a fuel-flow series, in tonnes.
pub fn total_consumption(samples: &[FlightSample], ff: &[f64], dt: f64) -> Result<f64> {
    check_lengths(samples.len(), ff.len())?;
    Ok(ff.iter().map(|f| f * dt / 3600.0).sum::<f64>() / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionRow {
    pub model: String,
    pub consumption_t: f64,
    pub difference_t: f64,
    /// `difference_t / truth`, a fraction.
    pub difference_ratio: f64,
}

/// Name of the recorded-fuel row in consumption tables.
pub const GROUND_TRUTH: &str = "ground_truth";

/// Total consumption per model against the recorded fuel, truth first.
pub fn consumption_table(models: &[(String, Vec<f64>)], test: &Dataset) -> Result<Vec<ConsumptionRow>> {
    let truth = total_consumption(&test.samples, &test.targets()?, SAMPLE_PERIOD_S)?;
    let mut rows = vec![ConsumptionRow {
        model: GROUND_TRUTH.into(),
        consumption_t: truth,
        difference_t: 0.0,
        difference_ratio: 0.0,
    }];
    for (name, preds) in models {
        let total = total_consumption(&test.samples, preds, SAMPLE_PERIOD_S)?;
        let diff = total - truth;
        rows.push(ConsumptionRow {
            model: name.clone(),
            consumption_t: total,
            difference_t: diff,
            difference_ratio: if truth > 0.0 { diff / truth } else { 0.0 },
        });
    }
    Ok(rows)
}

pub fn write_consumption_csv(path: &Path, rows: &[ConsumptionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_path_error(path, e))?;
    w.write_record(["model", "consumption_t", "difference_t", "difference_ratio"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.consumption_t.to_string(),
            r.difference_t.to_string(),
            r.difference_ratio.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_path_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_samples: usize,
    pub overall: Metrics,
    pub per_age_bin: Vec<AgeBin>,
    pub total_consumption_pred: f64,
    pub total_consumption_true: f64,
    pub diff: f64,
    pub diff_ratio: f64,
}

pub fn evaluate(model: &str, preds: &[f64], test: &Dataset) -> Result<EvalReport> {
    let targets = test.targets()?;
    let overall = metrics(preds, &targets)?;
    let per_age_bin = metrics_by_age(preds, &test.samples, 1.0)?;
    let pred_t = total_consumption(&test.samples, preds, SAMPLE_PERIOD_S)?;
    let true_t = total_consumption(&test.samples, &targets, SAMPLE_PERIOD_S)?;
    let diff = pred_t - true_t;
    Ok(EvalReport {
        model: model.to_string(),
        n_samples: preds.len(),
        overall,
        per_age_bin,
        total_consumption_pred: pred_t,
        total_consumption_true: true_t,
        diff,
        diff_ratio: if true_t > 0.0 { diff / true_t } else { 0.0 },
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per age bin followed by an `overall` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_path_error(path, e))?;
        w.write_record([
            "bin", "age_lo", "age_hi", "n", "mae", "mape", "me", "mse", "bias_ratio",
            "mape_excluded", "low_confidence",
        ])?;
        let row = |label: String, lo: String, hi: String, m: &Metrics, low: bool| {
            vec![
                label,
                lo,
                hi,
                m.n.to_string(),
                m.mae.to_string(),
                m.mape.map(|v| v.to_string()).unwrap_or_default(),
                m.me.to_string(),
                m.mse.to_string(),
                m.bias_ratio.to_string(),
                m.mape_excluded.to_string(),
                low.to_string(),
            ]
        };
        for b in &self.per_age_bin {
            w.write_record(row(
                b.bin.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                &b.metrics,
                b.low_confidence,
            ))?;
        }
        w.write_record(row(
            "overall".into(),
            String::new(),
            String::new(),
            &self.overall,
            self.overall.n < LOW_CONFIDENCE_MIN,
        ))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
