//! Losses and agreement metrics.

use crate::analytic::Spectrum;
use crate::error::{Error, Result};

/// Default peak-picking threshold as a fraction of the spectrum maximum.
pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.05;

pub fn mean_squared(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Parameter loss plus a weighted loss on the forward-modelled signals:
/// `MSE(p - p_hat) + weight * MSE(F(p) - F(p_hat))`.
pub fn model_consistency_loss<F>(p_hat: &[f64], p: &[f64], forward: F, weight: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("weight {weight} must be non-negative")));
    }
    let param = mean_squared(p, p_hat)?;
    if weight == 0.0 {
        return Ok(param);
    }
    let model = mean_squared(&forward(p)?, &forward(p_hat)?)?;
    Ok(param + weight * model)
}

/// Pearson correlation coefficient, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!(
            "need two equal series of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let denom = (sxx * syy).sqrt();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("constant series has no correlation".into()));
    }
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// Full width at half maximum of the peak at the global maximum, in bins,
/// with linear interpolation between the bracketing samples. `None` when
/// the peak does not fall below half maximum on both sides.
pub fn fwhm(values: &[f64]) -> Option<f64> {
    let (k, &max) = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(max > 0.0) {
        return None;
    }
    let half = max / 2.0;
    let crossing = |idx: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = k;
        for i in idx {
            if values[i] < half {
                let frac = (values[prev] - half) / (values[prev] - values[i]);
                return Some(prev as f64 + frac * (i as f64 - prev as f64));
            }
            prev = i;
        }
        None
    };
    let right = crossing(&mut (k + 1..values.len()))?;
    let left = crossing(&mut (0..k).rev())?;
    Some(right - left)
}

/// Bins that are local maxima of `mag` above `threshold * max(mag)`.
pub fn detect_peaks(mag: &[f64], threshold: f64) -> Vec<usize> {
    let max = mag.iter().copied().fold(0.0, f64::max);
    let floor = threshold * max;
    (0..mag.len())
        .filter(|&k| {
            let v = mag[k];
            let left = k == 0 || v > mag[k - 1];
            let right = k + 1 == mag.len() || v >= mag[k + 1];
            v > floor && left && right
        })
        .collect()
}

/// Pearson correlation of the magnitudes of two spectra at the peaks of the
/// reference.
pub fn peak_correlation(reference: &Spectrum, test: &Spectrum, threshold: f64) -> Result<f64> {
    if reference.n_points() != test.n_points() {
        return Err(Error::Shape(format!(
            "spectra have {} and {} points",
            reference.n_points(),
            test.n_points()
        )));
    }
    let rm = reference.magnitudes();
    let tm = test.magnitudes();
    let peaks = detect_peaks(&rm, threshold);
    if peaks.len() < 2 {
        return Err(Error::InsufficientPeaks { found: peaks.len() });
    }
    let x: Vec<f64> = peaks.iter().map(|&k| rm[k]).collect();
    let y: Vec<f64> = peaks.iter().map(|&k| tm[k]).collect();
    pearson(&x, &y)
}
