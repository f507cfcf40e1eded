//! Multiplicative ageing corrections on top of an age-blind predictor.
//!
//! All corrections are logarithmic in years of service (natural log):
//! the literature closed form `100 / (100 - 1.28 ln(age + 1))` and the
//! one-parameter family `1 + a ln(age + 1)` whose slope is fitted to data.

use std::path::Path;

use crate::domain::FlightSample;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::physics::PhysicsBaseline;

/// Literature deterioration coefficient.
pub fn seymour_coeff(age: f64) -> Result<f64> {
    if !(age >= 0.0) {
        return Err(Error::Data(format!("age {age} must be non-negative")));
    }
    let denom = 100.0 - 1.28 * (age + 1.0).ln();
    if denom <= 0.0 {
        return Err(Error::Numeric(format!(
            "deterioration coefficient undefined at age {age}"
        )));
    }
    Ok(100.0 / denom)
}

/// `Coeff(age) = 1 + a ln(age + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeCoeffModel {
    pub a: f64,
}

impl AgeCoeffModel {
    pub fn new(a: f64) -> Self {
        AgeCoeffModel { a }
    }

    pub fn coeff(&self, age: f64) -> f64 {
        1.0 + self.a * (age + 1.0).ln()
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("model", "log_coeff");
        kv.insert("a", self.a);
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        match kv.get("model") {
            Some("log_coeff") => {}
            other => {
                return Err(Error::Config(format!(
                    "expected `model = log_coeff`, found {other:?}"
                )))
            }
        }
        let a: f64 = kv.require("a")?;
        if !a.is_finite() {
            return Err(Error::Config(format!("coefficient a = {a} is not finite")));
        }
        Ok(AgeCoeffModel { a })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}

/// Scales a baseline fuel flow by the age coefficient, clamped at zero.
pub fn apply_coeff(ff_baseline: f64, age: f64, m: &AgeCoeffModel) -> f64 {
    (ff_baseline * m.coeff(age)).max(0.0)
}

/// Least-squares slope of `observed ≈ (1 + a L) baseline`, `L = ln(age + 1)`.
///
/// Returns `a = 0` with a warning when every age is zero.
pub fn fit_log_coeff(observed: &[f64], baseline_pred: &[f64], ages: &[f64]) -> Result<AgeCoeffModel> {
    if observed.len() != baseline_pred.len() {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: baseline_pred.len(),
        });
    }
    if observed.len() != ages.len() {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: ages.len(),
        });
    }
    if observed.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: observed.len(),
            required: 2,
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, ((&y, &b), &age)) in observed.iter().zip(baseline_pred).zip(ages).enumerate() {
        if !(b > 0.0) {
            return Err(Error::NonPositiveBaseline { index: i, value: b });
        }
        if !(age >= 0.0) || !y.is_finite() {
            return Err(Error::Data(format!("sample {i}: invalid age {age} or observation {y}")));
        }
        let lb = (age + 1.0).ln() * b;
        num += lb * (y - b);
        den += lb * lb;
    }
    if den == 0.0 {
        log::warn!("all ages are zero; age coefficient is unidentifiable, returning a = 0");
        return Ok(AgeCoeffModel { a: 0.0 });
    }
    let a = num / den;
    if !(0.0..=0.1).contains(&a) {
        log::warn!("fitted age coefficient a = {a:.5} is outside the usual [0, 0.1] range");
    }
    Ok(AgeCoeffModel { a })
}

/// Predictor whose age input can be overridden.
pub trait AgePredictor {
    fn predict_at_age(&self, sample: &FlightSample, age: f64) -> Result<f64>;
}

impl<F> AgePredictor for F
where
    F: Fn(&FlightSample, f64) -> Result<f64>,
{
    fn predict_at_age(&self, sample: &FlightSample, age: f64) -> Result<f64> {
        self(sample, age)
    }
}

impl AgePredictor for PhysicsBaseline {
    fn predict_at_age(&self, sample: &FlightSample, _age: f64) -> Result<f64> {
        self.predict(sample)
    }
}

/// Physics baseline scaled by a log-age coefficient.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedBaseline {
    pub baseline: PhysicsBaseline,
    pub model: AgeCoeffModel,
}

impl AgePredictor for CorrectedBaseline {
    fn predict_at_age(&self, sample: &FlightSample, age: f64) -> Result<f64> {
        Ok(apply_coeff(self.baseline.predict(sample)?, age, &self.model))
    }
}

/// Physics baseline scaled by the literature coefficient.
#[derive(Debug, Clone, Copy)]
pub struct SeymourBaseline {
    pub baseline: PhysicsBaseline,
}

impl AgePredictor for SeymourBaseline {
    fn predict_at_age(&self, sample: &FlightSample, age: f64) -> Result<f64> {
        Ok(self.baseline.predict(sample)? * seymour_coeff(age)?)
    }
}

/// Correction coefficient sampled on an age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffCurve {
    pub ages: Vec<f64>,
    pub coeffs: Vec<f64>,
}

/// One evaluation of an age curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub value: f64,
    /// The age lay outside the curve's sampled range.
    pub extrapolated: bool,
}

impl CoeffCurve {
    pub fn new(ages: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        if ages.len() != coeffs.len() {
            return Err(Error::LengthMismatch {
                left: ages.len(),
                right: coeffs.len(),
            });
        }
        if ages.len() < 2 {
            return Err(Error::SeriesTooShort {
                len: ages.len(),
                required: 2,
            });
        }
        if ages.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("curve ages must be strictly increasing".into()));
        }
        if coeffs.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Data("curve coefficients must be positive".into()));
        }
        Ok(CoeffCurve { ages, coeffs })
    }

    /// Piecewise-linear interpolation; outside the grid the end segment is
    /// extended and the point flagged.
    pub fn eval(&self, age: f64) -> CurvePoint {
        let n = self.ages.len();
        let extrapolated = age < self.ages[0] || age > self.ages[n - 1];
        let seg = match self.ages.iter().position(|&g| g > age) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        }
        .min(n - 2);
        let (x0, x1) = (self.ages[seg], self.ages[seg + 1]);
        let (y0, y1) = (self.coeffs[seg], self.coeffs[seg + 1]);
        CurvePoint {
            value: y0 + (y1 - y0) * (age - x0) / (x1 - x0),
            extrapolated,
        }
    }
}

/// Anything that maps an age to a correction coefficient.
pub trait AgeCurve {
    fn coeff_at(&self, age: f64) -> Result<CurvePoint>;
}

impl AgeCurve for AgeCoeffModel {
    fn coeff_at(&self, age: f64) -> Result<CurvePoint> {
        Ok(CurvePoint {
            value: self.coeff(age),
            extrapolated: false,
        })
    }
}

impl AgeCurve for CoeffCurve {
    fn coeff_at(&self, age: f64) -> Result<CurvePoint> {
        Ok(self.eval(age))
    }
}

/// Literature coefficient as a curve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeymourCurve;

impl AgeCurve for SeymourCurve {
    fn coeff_at(&self, age: f64) -> Result<CurvePoint> {
        Ok(CurvePoint {
            value: seymour_coeff(age)?,
            extrapolated: false,
        })
    }
}

/// Integer ages 0 to 25 inclusive.
pub fn default_age_grid() -> Vec<f64> {
    (0..=25).map(f64::from).collect()
}

/// Mean ratio of the prediction at each grid age to the prediction at
/// age zero, over the probe samples.
///
/// Probes predicting zero (or less) at age zero are excluded with a
/// warning.
pub fn extract_model_coeff_curve(
    predictor: &dyn AgePredictor,
    probes: &[FlightSample],
    age_grid: &[f64],
) -> Result<CoeffCurve> {
    if probes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if age_grid.len() < 2 || age_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("age grid must be strictly increasing with ≥ 2 points".into()));
    }
    if age_grid[0] > 0.0 || age_grid[age_grid.len() - 1] < 25.0 || age_grid[0] < 0.0 {
        return Err(Error::Config("age grid must span [0, 25] years".into()));
    }
    let mut sums = vec![0.0; age_grid.len()];
    let mut used = 0usize;
    let mut excluded = 0usize;
    for s in probes {
        let at_zero = predictor.predict_at_age(s, 0.0)?;
        if !(at_zero > 0.0) {
            excluded += 1;
            continue;
        }
        for (acc, &g) in sums.iter_mut().zip(age_grid) {
            *acc += predictor.predict_at_age(s, g)? / at_zero;
        }
        used += 1;
    }
    if excluded > 0 {
        log::warn!("{excluded} probe samples predicted zero fuel flow at age 0 and were excluded");
    }
    if used == 0 {
        return Err(Error::Numeric("every probe predicted zero fuel flow at age 0".into()));
    }
    CoeffCurve::new(
        age_grid.to_vec(),
        sums.into_iter().map(|s| s / used as f64).collect(),
    )
}
