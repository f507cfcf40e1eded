//! Cumulative fuel projection for a constant fleet under different ageing
//! curves.

use std::path::Path;

use crate::age::{AgeCoeffModel, AgeCurve};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::plot::{line_chart, Series};

#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    /// Tail ages at the start of the horizon, years.
    pub ages: Vec<f64>,
    /// Tonnes per aircraft per year at age zero.
    pub annual_base_fuel: f64,
    pub horizon: usize,
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            ages: vec![3.0, 4.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 14.0],
            annual_base_fuel: 2575.0,
            horizon: 15,
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ages.is_empty() || self.ages.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("fleet ages must be non-empty and ≥ 0".into()));
        }
        if !(self.annual_base_fuel > 0.0 && self.annual_base_fuel.is_finite()) {
            return Err(Error::Config("annual_base_fuel must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be ≥ 1 year".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut spec = FleetSpec::default();
        for (k, v) in kv.iter() {
            match k {
                "ages" => {
                    spec.ages = v
                        .split(',')
                        .map(|a| {
                            a.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::Config(format!("bad fleet age `{a}`")))
                        })
                        .collect::<Result<_>>()?;
                }
                "annual_base_fuel" => spec.annual_base_fuel = kv.require(k)?,
                "horizon" => spec.horizon = kv.require(k)?,
                other => return Err(Error::Config(format!("unknown fleet key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        let ages: Vec<String> = self.ages.iter().map(f64::to_string).collect();
        kv.insert("ages", ages.join(","));
        kv.insert("annual_base_fuel", self.annual_base_fuel);
        kv.insert("horizon", self.horizon);
        kv
    }
}

/// Reference deterioration law `1 + a_ref ln(age + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCurve {
    pub a_ref: f64,
}

impl Default for ReferenceCurve {
    fn default() -> Self {
        ReferenceCurve { a_ref: 0.0231 }
    }
}

impl ReferenceCurve {
    pub fn new(a_ref: f64) -> Result<Self> {
        if !(a_ref >= 0.0 && a_ref.is_finite()) {
            return Err(Error::Config(format!("a_ref {a_ref} must be ≥ 0")));
        }
        Ok(ReferenceCurve { a_ref })
    }

    pub fn model(&self) -> AgeCoeffModel {
        AgeCoeffModel::new(self.a_ref)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionRow {
    pub year: usize,
    pub cumulative_model_t: f64,
    pub cumulative_ref_t: f64,
    /// Reference minus model.
    pub diff_t: f64,
    /// Some age needed this year lay outside the model curve's grid.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub model_name: String,
    pub rows: Vec<ProjectionRow>,
}

/// Accumulates yearly fleet fuel under the model and reference curves; in
/// year `k` every tail is `k` years older than at the start.
pub fn project(fleet: &FleetSpec, model: &dyn AgeCurve, reference: &ReferenceCurve) -> Result<Vec<ProjectionRow>> {
    fleet.validate()?;
    let reference = reference.model();
    let mut rows = Vec::with_capacity(fleet.horizon);
    let (mut cum_model, mut cum_ref) = (0.0, 0.0);
    let mut warned = false;
    for year in 1..=fleet.horizon {
        let mut extrapolated = false;
        for &age0 in &fleet.ages {
            let age = age0 + year as f64;
            let m = model.coeff_at(age)?;
            extrapolated |= m.extrapolated;
            cum_model += fleet.annual_base_fuel * m.value;
            cum_ref += fleet.annual_base_fuel * reference.coeff(age);
        }
        if extrapolated && !warned {
            log::warn!("model curve extrapolated beyond its age grid from year {year} on");
            warned = true;
        }
        rows.push(ProjectionRow {
            year,
            cumulative_model_t: cum_model,
            cumulative_ref_t: cum_ref,
            diff_t: cum_ref - cum_model,
            extrapolated,
        });
    }
    Ok(rows)
}

pub fn write_projection_csv(path: &Path, results: &[Projection]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Config("no projections to report".into()));
    }
    let mut out = String::from("year,model_name,cumulative_model_t,cumulative_ref_t,diff_t\n");
    for p in results {
        for r in &p.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.year, p.model_name, r.cumulative_model_t, r.cumulative_ref_t, r.diff_t
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn projection_svg(results: &[Projection]) -> String {
    let series: Vec<Series> = results
        .iter()
        .map(|p| Series {
            name: p.model_name.clone(),
            points: p.rows.iter().map(|r| (r.year as f64, r.diff_t)).collect(),
        })
        .collect();
    line_chart(
        "Projected cumulative fuel difference",
        "years",
        "reference minus model (t)",
        &series,
    )
}

/// CSV at `csv_path` plus an optional SVG chart of the differences.
pub fn projection_report(results: &[Projection], csv_path: &Path, svg_path: Option<&Path>) -> Result<()> {
    write_projection_csv(csv_path, results)?;
    if let Some(p) = svg_path {
        std::fs::write(p, projection_svg(results)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
