//! Savitzky–Golay smoothing and finite-difference acceleration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window length (odd, in samples) and polynomial order of the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavGolConfig {
    pub window_len: usize,
    pub poly_order: usize,
}

impl Default for SavGolConfig {
    /// 9 samples (36 s at 4 s spacing), quadratic.
    fn default() -> Self {
        SavGolConfig {
            window_len: 9,
            poly_order: 2,
        }
    }
}

impl SavGolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len % 2 == 0 {
            return Err(Error::Config(format!(
                "savgol window {} must be odd",
                self.window_len
            )));
        }
        if self.window_len < self.poly_order + 2 {
            return Err(Error::Config(format!(
                "savgol window {} must be at least poly_order + 2 = {}",
                self.window_len,
                self.poly_order + 2
            )));
        }
        Ok(())
    }
}

/// Weights that map the window samples `lo..=hi` to the value at `at` of
/// their least-squares polynomial fit.
fn fit_weights(lo: usize, hi: usize, at: usize, order: usize) -> Vec<f64> {
    let scale = ((hi - lo) as f64 / 2.0).max(1.0);
    let xs: Vec<f64> = (lo..=hi).map(|j| (j as f64 - at as f64) / scale).collect();
    let m = order + 1;
    // Gram matrix of the Vandermonde basis.
    let mut gram = vec![vec![0.0; m]; m];
    for &x in &xs {
        let mut pow = vec![1.0; 2 * m - 1];
        for k in 1..pow.len() {
            pow[k] = pow[k - 1] * x;
        }
        for (r, row) in gram.iter_mut().enumerate() {
            for (c, g) in row.iter_mut().enumerate() {
                *g += pow[r + c];
            }
        }
    }
    let mut e0 = vec![0.0; m];
    e0[0] = 1.0;
    let z = solve_dense(gram, e0).expect("window has more points than the polynomial order");
    xs.iter()
        .map(|&x| {
            let mut acc = 0.0;
            let mut p = 1.0;
            for zk in &z {
                acc += zk * p;
                p *= x;
            }
            acc
        })
        .collect()
}

/// Gaussian elimination with partial pivoting. `None` when singular.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Window bounds for output index `i`: centred where it fits, otherwise
/// truncated at the series edge and widened inwards to at least
/// `order + 1` points.
fn window_bounds(i: usize, n: usize, half: usize, order: usize) -> (usize, usize) {
    let mut lo = i.saturating_sub(half);
    let mut hi = (i + half).min(n - 1);
    while hi - lo < order {
        if hi < n - 1 {
            hi += 1;
        } else {
            lo -= 1;
        }
    }
    (lo, hi)
}

pub fn savgol_smooth(series: &[f64], cfg: &SavGolConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = series.len();
    if n < cfg.window_len {
        return Err(Error::SeriesTooShort {
            len: n,
            required: cfg.window_len,
        });
    }
    let half = cfg.window_len / 2;
    let interior = fit_weights(0, 2 * half, half, cfg.poly_order);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i >= half && i + half < n {
            let window = &series[i - half..=i + half];
            out.push(window.iter().zip(&interior).map(|(x, w)| x * w).sum());
        } else {
            let (lo, hi) = window_bounds(i, n, half, cfg.poly_order);
            let w = fit_weights(lo, hi, i, cfg.poly_order);
            out.push(series[lo..=hi].iter().zip(&w).map(|(x, w)| x * w).sum());
        }
    }
    Ok(out)
}

/// Central differences inside, one-sided differences at both ends.
pub fn derive_acceleration(tas_smoothed: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = tas_smoothed.len();
    if n < 3 {
        return Err(Error::SeriesTooShort { len: n, required: 3 });
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    let x = tas_smoothed;
    let mut out = Vec::with_capacity(n);
    out.push((x[1] - x[0]) / dt);
    for i in 1..n - 1 {
        out.push((x[i + 1] - x[i - 1]) / (2.0 * dt));
    }
    out.push((x[n - 1] - x[n - 2]) / dt);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Direct least-squares polynomial fit of one window via SVD, evaluated
    /// at the output position.
    fn oracle_point(series: &[f64], lo: usize, hi: usize, at: usize, order: usize) -> f64 {
        let rows = hi - lo + 1;
        let v = DMatrix::from_fn(rows, order + 1, |r, c| {
            ((lo + r) as f64 - at as f64).powi(c as i32)
        });
        let y = DVector::from_iterator(rows, series[lo..=hi].iter().copied());
        let coef = v.svd(true, true).solve(&y, 1e-14).unwrap();
        coef[0]
    }

    #[test]
    fn constant_series_unchanged() {
        let s = vec![3.25; 20];
        let out = savgol_smooth(&s, &SavGolConfig::default()).unwrap();
        for v in out {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_ramp_unchanged() {
        let s: Vec<f64> = (0..30).map(|i| 250.0 + 1.5 * i as f64).collect();
        let cfg = SavGolConfig {
            window_len: 7,
            poly_order: 1,
        };
        let out = savgol_smooth(&s, &cfg).unwrap();
        for (a, b) in out.iter().zip(&s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn random_series_matches_per_window_fit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        for cfg in [
            SavGolConfig::default(),
            SavGolConfig {
                window_len: 5,
                poly_order: 3,
            },
            SavGolConfig {
                window_len: 11,
                poly_order: 4,
            },
        ] {
            let out = savgol_smooth(&s, &cfg).unwrap();
            let half = cfg.window_len / 2;
            for i in 0..s.len() {
                let (lo, hi) = window_bounds(i, s.len(), half, cfg.poly_order);
                let expect = oracle_point(&s, lo, hi, i, cfg.poly_order);
                assert!((out[i] - expect).abs() < 1e-9, "i={i} {} vs {expect}", out[i]);
            }
        }
    }

    #[test]
    fn edge_windows_keep_polynomial_order() {
        // window 5, order 3: truncated edge windows must still hold 4 points
        assert_eq!(window_bounds(0, 10, 2, 3), (0, 3));
        assert_eq!(window_bounds(9, 10, 2, 3), (6, 9));
        assert_eq!(window_bounds(0, 10, 4, 2), (0, 4));
    }

    #[test]
    fn config_and_length_errors() {
        let bad = SavGolConfig {
            window_len: 8,
            poly_order: 2,
        };
        assert!(matches!(savgol_smooth(&[0.0; 20], &bad), Err(Error::Config(_))));
        let tight = SavGolConfig {
            window_len: 3,
            poly_order: 2,
        };
        assert!(tight.validate().is_err());
        assert!(matches!(
            savgol_smooth(&[0.0; 5], &SavGolConfig::default()),
            Err(Error::SeriesTooShort { len: 5, required: 9 })
        ));
    }

    #[test]
    fn acceleration_cases() {
        assert_eq!(derive_acceleration(&[250.0; 5], 4.0).unwrap(), vec![0.0; 5]);
        let ramp: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        for a in derive_acceleration(&ramp, 4.0).unwrap() {
            assert!((a - 0.5).abs() < 1e-12);
        }
        assert!(matches!(
            derive_acceleration(&[1.0, 2.0], 4.0),
            Err(Error::SeriesTooShort { len: 2, required: 3 })
        ));
    }

    #[test]
    fn quadratic_profile_matches_analytic_derivative() {
        // v(t) = 200 + 0.3 t + 0.002 t^2, dv/dt = 0.3 + 0.004 t
        let dt = 4.0;
        let v: Vec<f64> = (0..40)
            .map(|i| {
                let t = i as f64 * dt;
                200.0 + 0.3 * t + 0.002 * t * t
            })
            .collect();
        let a = derive_acceleration(&v, dt).unwrap();
        for i in 1..v.len() - 1 {
            let t = i as f64 * dt;
            let exact = 0.3 + 0.004 * t;
            // central difference is exact for quadratics up to rounding
            assert!((a[i] - exact).abs() < 1e-9);
        }
        // one-sided ends carry the O(dt) error 0.002 * dt
        assert!((a[0] - 0.3).abs() <= 0.002 * dt + 1e-12);
    }

    proptest! {
        #[test]
        fn quadratics_are_fixed_points_inside(c0 in -100.0f64..100.0, c1 in -5.0f64..5.0, c2 in -0.1f64..0.1, n in 9usize..60) {
            let s: Vec<f64> = (0..n).map(|i| { let x = i as f64; c0 + c1 * x + c2 * x * x }).collect();
            let out = savgol_smooth(&s, &SavGolConfig::default()).unwrap();
            for i in 4..n - 4 {
                prop_assert!((out[i] - s[i]).abs() < 1e-9 * s[i].abs().max(1.0));
            }
        }

        #[test]
        fn reversed_series_negates_acceleration(xs in prop::collection::vec(-500.0f64..500.0, 3..40)) {
            let fwd = derive_acceleration(&xs, 4.0).unwrap();
            let rev: Vec<f64> = xs.iter().rev().copied().collect();
            let back = derive_acceleration(&rev, 4.0).unwrap();
            let n = xs.len();
            for i in 1..n - 1 {
                prop_assert!((back[n - 1 - i] + fwd[i]).abs() < 1e-9);
            }
        }
    }
}
