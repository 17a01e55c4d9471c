//! Γ–σ correlation and oscillation analysis.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::output::CsvColumns;

/// Centered moving-average window used for detrending.
pub const DETREND_WINDOW: usize = 5;
/// Only χ strictly above this enters the correlation.
pub const CORRELATE_FROM: f64 = 15.0;
/// Minimum share of variance a sinusoid must explain to count as an
/// oscillation.
pub const MIN_EXPLAINED: f64 = 0.5;
/// Minimum sinusoid amplitude relative to the mean.
pub const MIN_RELATIVE_AMPLITUDE: f64 = 0.05;

const GRID_TOLERANCE: f64 = 1e-9;

/// Values on a χ grid; `None` marks a failed point.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub chi: Vec<f64>,
    pub values: Vec<Option<f64>>,
}

impl Series {
    pub fn new(chi: Vec<f64>, values: Vec<Option<f64>>) -> Self {
        assert_eq!(chi.len(), values.len());
        Self { chi, values }
    }

    pub fn complete(chi: Vec<f64>, values: Vec<f64>) -> Self {
        Self::new(chi, values.into_iter().map(Some).collect())
    }

    /// Column `column` of a CSV with a `chi` column.
    pub fn read(path: &Path, column: &str) -> Result<Self> {
        let cols = CsvColumns::read(path)?;
        let chi = cols
            .floats("chi", path)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| HarnessError::Input { path: path.to_path_buf(), message: format!("row {}: empty chi", i + 2) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(chi, cols.floats(column, path)?))
    }

    /// Points whose χ passes `keep` and that carry a value.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> (Vec<f64>, Vec<f64>) {
        self.chi
            .iter()
            .zip(&self.values)
            .filter(|(c, v)| keep(**c) && v.is_some())
            .map(|(c, v)| (*c, v.unwrap()))
            .unzip()
    }
}

/// `x_i` minus the mean of `x_{i-h..=i+h}`; `None` where the window would
/// leave the series or touch a missing value.
pub fn detrend(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let h = window / 2;
    (0..values.len())
        .map(|i| {
            if i < h || i + h >= values.len() {
                return None;
            }
            let span = &values[i - h..=i + h];
            let sum = span.iter().copied().sum::<Option<f64>>()?;
            Some(values[i]? - sum / span.len() as f64)
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Best single sinusoid through a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillation {
    pub period: f64,
    pub amplitude: f64,
    /// Amplitude over the mean of the series.
    pub relative_amplitude: f64,
    /// Share of the variance about the mean explained by the sinusoid.
    pub explained: f64,
}

impl Oscillation {
    pub fn is_significant(&self) -> bool {
        self.explained >= MIN_EXPLAINED && self.relative_amplitude >= MIN_RELATIVE_AMPLITUDE
    }
}

/// Least-squares periodogram peak. Periods from twice the grid spacing to
/// twice the span are scanned on a fine frequency grid; at each frequency
/// an offset plus `a cos + b sin` is fitted by least squares.
pub fn dominant_oscillation(chi: &[f64], values: &[f64]) -> Option<Oscillation> {
    if chi.len() < 5 || chi.len() != values.len() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let x: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let total: f64 = x.iter().map(|v| v * v).sum();
    if !(total > 0.0) {
        return None;
    }
    let span = chi[chi.len() - 1] - chi[0];
    let spacing = span / (chi.len() - 1) as f64;
    let (f_lo, f_hi) = (1.0 / (2.0 * span), 1.0 / (2.0 * spacing));
    let steps = 20_000;
    let mut best: Option<(f64, f64, f64)> = None;
    for s in 0..=steps {
        let f = f_lo + (f_hi - f_lo) * s as f64 / steps as f64;
        let Some((a, b, explained)) = fit_sinusoid(chi, &x, f) else { continue };
        if best.is_none_or(|(_, _, e)| explained > e) {
            best = Some((f, (a * a + b * b).sqrt(), explained));
        }
    }
    let (f, amplitude, explained) = best?;
    Some(Oscillation {
        period: 1.0 / f,
        amplitude,
        relative_amplitude: if mean != 0.0 { amplitude / mean.abs() } else { f64::INFINITY },
        explained: explained / total,
    })
}

/// `(a, b, explained sum of squares)` of `c + a cos 2πfχ + b sin 2πfχ`
/// fitted to mean-free `x`.
fn fit_sinusoid(chi: &[f64], x: &[f64], f: f64) -> Option<(f64, f64, f64)> {
    let n = chi.len() as f64;
    let basis: Vec<(f64, f64)> = chi.iter().map(|c| (std::f64::consts::TAU * f * c).sin_cos()).collect();
    let ms = basis.iter().map(|b| b.0).sum::<f64>() / n;
    let mc = basis.iter().map(|b| b.1).sum::<f64>() / n;
    let (mut cc, mut ss, mut cs, mut xc, mut xs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((s, co), v) in basis.iter().zip(x) {
        let (s, co) = (s - ms, co - mc);
        cc += co * co;
        ss += s * s;
        cs += co * s;
        xc += v * co;
        xs += v * s;
    }
    let det = cc * ss - cs * cs;
    if det.abs() < 1e-12 * (cc * ss).max(1e-300) {
        return None;
    }
    let a = (xc * ss - xs * cs) / det;
    let b = (xs * cc - xc * cs) / det;
    Some((a, b, a * xc + b * xs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    /// Pearson correlation of the detrended series over `χ > 15`.
    pub pearson: Option<f64>,
    pub n_points: usize,
    /// Dominant oscillation of σ over `χ > 15`.
    pub sigma_oscillation: Option<Oscillation>,
}

impl CorrelationReport {
    /// `key=value` lines for the terminal.
    pub fn render(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "none".into());
        let mut out = format!("pearson={}\nn_points={}\n", opt(self.pearson), self.n_points);
        match &self.sigma_oscillation {
            Some(o) => out.push_str(&format!(
                "sigma_period={:.4}\nsigma_relative_amplitude={:.4}\nsigma_explained_variance={:.4}\noscillation_significant={}\n",
                o.period,
                o.relative_amplitude,
                o.explained,
                o.is_significant()
            )),
            None => out.push_str("sigma_period=none\noscillation_significant=false\n"),
        }
        out
    }
}

pub fn check_grids(a: &Series, b: &Series) -> Result<()> {
    if a.chi.len() != b.chi.len() {
        return Err(HarnessError::GridMismatch(format!("{} points vs {}", a.chi.len(), b.chi.len())));
    }
    if let Some((x, y)) = a.chi.iter().zip(&b.chi).find(|(x, y)| (*x - *y).abs() > GRID_TOLERANCE) {
        return Err(HarnessError::GridMismatch(format!("chi {x} vs {y}")));
    }
    Ok(())
}

pub fn correlate_series(sigma: &Series, gamma: &Series) -> Result<CorrelationReport> {
    check_grids(sigma, gamma)?;
    let ds = detrend(&sigma.values, DETREND_WINDOW);
    let dg = detrend(&gamma.values, DETREND_WINDOW);
    let (a, b): (Vec<f64>, Vec<f64>) = sigma
        .chi
        .iter()
        .zip(ds.iter().zip(&dg))
        .filter(|(c, _)| **c > CORRELATE_FROM)
        .filter_map(|(_, (s, g))| Some(((*s)?, (*g)?)))
        .unzip();
    let (chi, values) = sigma.select(|c| c > CORRELATE_FROM);
    Ok(CorrelationReport {
        pearson: pearson(&a, &b),
        n_points: a.len(),
        sigma_oscillation: dominant_oscillation(&chi, &values),
    })
}

/// Correlate the `sigma` column of one CSV with the `gamma` column of another.
pub fn correlate(sigma_file: &Path, gamma_file: &Path) -> Result<CorrelationReport> {
    correlate_series(&Series::read(sigma_file, "sigma")?, &Series::read(gamma_file, "gamma")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn grid() -> Vec<f64> {
        (0..=60).map(|i| i as f64).collect()
    }

    #[test]
    fn detrend_removes_linear_trends_and_marks_edges() {
        let v: Vec<Option<f64>> = (0..10).map(|i| Some(3.0 + 0.5 * i as f64)).collect();
        let d = detrend(&v, 5);
        assert_eq!(d[..2], [None, None]);
        assert_eq!(d[8..], [None, None]);
        assert!(d[2..8].iter().all(|x| x.unwrap().abs() < 1e-12));
        let mut gap = v.clone();
        gap[4] = None;
        let d = detrend(&gap, 5);
        assert!(d[2..=6].iter().all(Option::is_none));
        assert!(d[7].is_some());
    }

    #[test]
    fn pearson_limits() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 4]), None);
    }

    #[test]
    fn recovers_a_known_period() {
        let chi: Vec<f64> = (20..=60).map(|i| i as f64).collect();
        let v: Vec<f64> = chi.iter().map(|c| 2.0 + 0.3 * (TAU * c / 27.0 + 0.4).sin()).collect();
        let o = dominant_oscillation(&chi, &v).unwrap();
        assert!((o.period - 27.0).abs() < 0.05, "{o:?}");
        assert!((o.amplitude - 0.3).abs() < 1e-3);
        assert!(o.is_significant());
    }

    #[test]
    fn flat_noise_is_not_significant() {
        let chi = grid();
        let v: Vec<f64> = chi.iter().map(|c| 2.2 + 0.01 * ((c * 12.9898).sin() * 43758.5453).fract()).collect();
        let o = dominant_oscillation(&chi, &v).unwrap();
        assert!(!o.is_significant(), "{o:?}");
    }

    #[test]
    fn shared_wiggles_correlate_after_detrending() {
        let chi = grid();
        let wiggle = |c: f64| (TAU * c / 6.0).sin();
        let s = Series::complete(chi.clone(), chi.iter().map(|&c| 1.0 + 0.02 * c + 0.1 * wiggle(c)).collect());
        let g = Series::complete(chi.clone(), chi.iter().map(|&c| 0.5 + 0.2 * wiggle(c)).collect());
        let r = correlate_series(&s, &g).unwrap();
        assert!(r.pearson.unwrap() > 0.99);
        // points 16..=58 keep a full detrending window
        assert_eq!(r.n_points, 43);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let s = Series::complete(vec![0.0, 1.0, 2.0], vec![1.0; 3]);
        let g = Series::complete(vec![0.0, 1.0, 2.5], vec![1.0; 3]);
        assert!(matches!(correlate_series(&s, &g), Err(HarnessError::GridMismatch(_))));
        let short = Series::complete(vec![0.0, 1.0], vec![1.0; 2]);
        assert!(matches!(correlate_series(&s, &short), Err(HarnessError::GridMismatch(_))));
    }
}
