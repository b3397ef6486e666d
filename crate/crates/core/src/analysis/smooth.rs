//! Savitzky-Golay smoothing.

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 51;
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub values: Vec<f64>,
    /// False when the series was shorter than the window and is returned
    /// as is.
    pub filtered: bool,
}

/// Least-squares polynomial smoothing over a sliding window.
///
/// Interior points take the value of the order-`order` fit centred on
/// them; the first and last `window / 2` points are evaluated on the fit
/// of the first or last full window.
pub fn savgol_smooth(series: &[f64], window: usize, order: usize) -> Result<Smoothed> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::config("smooth.window", "must be odd"));
    }
    if order >= window {
        return Err(Error::config("smooth.order", "must be below the window length"));
    }
    if series.len() < window {
        return Ok(Smoothed { values: series.to_vec(), filtered: false });
    }
    let half = window / 2;
    let n = series.len();
    // projection[r] maps a window to the fitted value at offset r.
    let projection = fit_rows(window, order);
    let apply = |row: &[f64], start: usize| -> f64 {
        row.iter().zip(&series[start..start + window]).map(|(c, y)| c * y).sum()
    };
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate() {
        *v = if i < half {
            apply(&projection[i], 0)
        } else if i + half >= n {
            apply(&projection[window - (n - i)], n - window)
        } else {
            apply(&projection[half], i - half)
        };
    }
    Ok(Smoothed { values, filtered: true })
}

/// Rows of the hat matrix `A (AᵀA)⁻¹ Aᵀ` for the polynomial design over
/// abscissae scaled to [-1, 1].
fn fit_rows(window: usize, order: usize) -> Vec<Vec<f64>> {
    let half = (window / 2) as f64;
    let k = order + 1;
    let xs: Vec<f64> = (0..window).map(|i| (i as f64 - half) / half.max(1.0)).collect();
    let design: Vec<Vec<f64>> = xs.iter().map(|&x| (0..k).map(|j| x.powi(j as i32)).collect()).collect();
    let mut gram = vec![vec![0.0; k]; k];
    for row in &design {
        for a in 0..k {
            for b in 0..k {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    let inv = invert(gram);
    // coef = inv * Aᵀ, so fitted value at r is design[r] . inv . Aᵀ
    design
        .iter()
        .map(|dr| {
            let w: Vec<f64> = (0..k).map(|b| (0..k).map(|a| dr[a] * inv[a][b]).sum()).collect();
            design.iter().map(|dc| w.iter().zip(dc).map(|(x, y)| x * y).sum()).collect()
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting of a small SPD matrix.
fn invert(mut m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let k = m.len();
    let mut inv: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        for j in 0..k {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..k {
            if r != col {
                let f = m[r][col];
                for j in 0..k {
                    m[r][j] -= f * m[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_is_unchanged() {
        let s = vec![2.5; 120];
        let out = savgol_smooth(&s, 51, 3).unwrap();
        assert!(out.filtered);
        for v in out.values {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn short_series_is_flagged() {
        let s = vec![1.0, 2.0, 3.0];
        let out = savgol_smooth(&s, 51, 3).unwrap();
        assert!(!out.filtered);
        assert_eq!(out.values, s);
    }

    #[test]
    fn bad_parameters() {
        assert!(savgol_smooth(&[0.0; 10], 4, 2).is_err());
        assert!(savgol_smooth(&[0.0; 10], 5, 5).is_err());
    }

    #[test]
    fn matches_tabulated_five_point_quadratic() {
        // Classic 5-point quadratic smoothing weights (-3, 12, 17, 12, -3) / 35.
        let rows = fit_rows(5, 2);
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in rows[2].iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn noisy_step_keeps_mean_and_loses_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..400).map(|i| if i < 200 { 1.0 } else { 3.0 } + rng.random_range(-0.5..0.5)).collect();
        let out = savgol_smooth(&s, 51, 3).unwrap().values;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let (a, b) = (&s[50..150], &out[50..150]);
        assert!(var(b) < var(a) / 5.0);
        assert!((mean(b) - mean(a)).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn cubics_are_reproduced(c0 in -5.0f64..5.0, c1 in -1.0f64..1.0, c2 in -0.05f64..0.05, c3 in -1e-3f64..1e-3, n in 51usize..160) {
            let s: Vec<f64> = (0..n).map(|i| {
                let x = i as f64;
                c0 + c1 * x + c2 * x * x + c3 * x * x * x
            }).collect();
            let out = savgol_smooth(&s, 51, 3).unwrap().values;
            for (a, b) in out.iter().zip(&s) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
