//! Acquisition-realism operators: noise, undersampling, receive coils and
//! parameter distributions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::rng::{stream, Purpose};

/// Noise standard deviation for a peak-normalized SNR in dB:
/// `max|s| / 10^(snr/20)`. Infinite SNR gives zero.
pub fn noise_sigma(peak: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        peak / 10f64.powf(snr_db / 20.0)
    }
}

/// Adds circularly symmetric complex Gaussian noise. The complex noise has
/// standard deviation [`noise_sigma`], split evenly over the real and
/// imaginary parts. `snr_db = inf` returns the input unchanged.
pub fn add_noise(signal: &[Complex64], snr_db: f64, seed: u64) -> Vec<Complex64> {
    if snr_db == f64::INFINITY || signal.is_empty() {
        return signal.to_vec();
    }
    let mut rng = stream(seed, 0, Purpose::Noise);
    add_noise_with(signal, snr_db, &mut rng)
}

pub(crate) fn add_noise_with(signal: &[Complex64], snr_db: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    if snr_db == f64::INFINITY {
        return signal.to_vec();
    }
    let peak = signal.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let sd = noise_sigma(peak, snr_db) / 2f64.sqrt();
    signal
        .iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(re * sd, im * sd)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub length: usize,
    pub kept: Vec<bool>,
    /// Achieved sampling fraction.
    pub rate: f64,
}

impl SamplingMask {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

/// Uniform random undersampling without replacement that always keeps the
/// first point. Keeps exactly `floor(rate * len)` samples and zeroes the
/// rest.
pub fn undersample(signal: &[Complex64], rate: f64, seed: u64) -> Result<(SamplingMask, Vec<Complex64>)> {
    let mut rng = stream(seed, 0, Purpose::Mask);
    undersample_with(signal, rate, &mut rng)
}

pub(crate) fn undersample_with(
    signal: &[Complex64],
    rate: f64,
    rng: &mut impl Rng,
) -> Result<(SamplingMask, Vec<Complex64>)> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("sampling rate {rate} outside (0, 1]")));
    }
    let len = signal.len();
    let keep = (rate * len as f64).floor() as usize;
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "rate {rate} keeps no samples of a {len}-point signal"
        )));
    }
    let mut kept = vec![false; len];
    kept[0] = true;
    for i in rand::seq::index::sample(rng, len - 1, keep - 1) {
        kept[i + 1] = true;
    }
    let out = signal
        .iter()
        .zip(&kept)
        .map(|(&s, &k)| if k { s } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok((
        SamplingMask {
            length: len,
            kept,
            rate: keep as f64 / len as f64,
        },
        out,
    ))
}

/// Receive-coil sensitivity maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    pub maps: Vec<Grid2<Complex64>>,
}

impl CoilSet {
    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    /// Root-sum-of-squares of the maps per voxel.
    pub fn rss(&self) -> Vec<f64> {
        let n = self.maps.first().map_or(0, Grid2::len);
        (0..n)
            .map(|i| self.maps.iter().map(|m| m.data[i].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }
}

/// Multiplies the image by every coil map.
pub fn apply_coils(image: &Grid2<Complex64>, coils: &CoilSet) -> Result<Vec<Grid2<Complex64>>> {
    if coils.maps.is_empty() {
        return Err(Error::InvalidArgument("coil set is empty".into()));
    }
    coils
        .maps
        .iter()
        .map(|map| {
            map.ensure_dims(image.width, image.height, "coil map")?;
            let data = image.data.iter().zip(&map.data).map(|(a, b)| a * b).collect();
            Grid2::from_vec(image.width, image.height, data)
        })
        .collect()
}

/// RSS of the channels divided by the RSS of the maps; recovers `|image|`
/// wherever the maps do not vanish.
pub fn rss_combine(channels: &[Grid2<Complex64>], coils: &CoilSet) -> Result<Grid2<f64>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
    if channels.len() != coils.n_coils() {
        return Err(Error::Shape(format!(
            "{} channels for {} coils",
            channels.len(),
            coils.n_coils()
        )));
    }
    let norm = coils.rss();
    let data = (0..first.len())
        .map(|i| {
            let s = channels.iter().map(|c| c.data[i].norm_sqr()).sum::<f64>().sqrt();
            if norm[i] > 0.0 {
                s / norm[i]
            } else {
                0.0
            }
        })
        .collect();
    Grid2::from_vec(first.width, first.height, data)
}

/// Smooth synthetic coil maps: Gaussian magnitude bumps centred on the grid
/// boundary at equal angular spacing, each with a random linear phase ramp.
pub fn synthesize_coils(width: usize, height: usize, n_coils: usize, seed: u64) -> Result<CoilSet> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("need at least one coil".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidSize(format!("coil grid {width}x{height}")));
    }
    let mut rng = stream(seed, 0, Purpose::Coils);
    let (w, h) = (width as f64, height as f64);
    let extent = w.max(h);
    let start: f64 = rng.random::<f64>() * 2.0 * PI;
    let maps = (0..n_coils)
        .map(|c| {
            let theta = start + 2.0 * PI * c as f64 / n_coils as f64;
            let (cx, cy) = (w / 2.0 * (1.0 + theta.cos()), h / 2.0 * (1.0 + theta.sin()));
            let sigma = extent * (0.5 + 0.3 * rng.random::<f64>());
            let gx = (rng.random::<f64>() * 2.0 - 1.0) * PI / extent;
            let gy = (rng.random::<f64>() * 2.0 - 1.0) * PI / extent;
            Grid2::from_fn(width, height, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                Complex64::from_polar(mag, gx * (px - w / 2.0) + gy * (py - h / 2.0))
            })
        })
        .collect();
    Ok(CoilSet { maps })
}

/// Distribution of a generated parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform { lo: f64, hi: f64 },
    Histogram { bin_edges: Vec<f64>, weights: Vec<f64> },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

fn check_weights(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || !(sum > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid weights {weights:?}")));
    }
    Ok(())
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidArgument(format!("uniform range [{lo}, {hi}]")));
                }
            }
            DistributionSpec::Histogram { bin_edges, weights } => {
                if bin_edges.len() < 2 || weights.len() + 1 != bin_edges.len() {
                    return Err(Error::InvalidArgument("histogram needs n+1 edges for n weights".into()));
                }
                if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument("bin edges must be strictly increasing".into()));
                }
                check_weights(weights)?;
            }
            DistributionSpec::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::InvalidArgument(
                        "discrete spec needs one weight per value".into(),
                    ));
                }
                check_weights(weights)?;
            }
        }
        Ok(())
    }

    /// Support of the distribution as `[min, max]`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            DistributionSpec::Uniform { lo, hi } => (*lo, *hi),
            DistributionSpec::Histogram { bin_edges, .. } => (bin_edges[0], bin_edges[bin_edges.len() - 1]),
            DistributionSpec::Discrete { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        }
    }

    /// One draw. The spec must already be validated.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            DistributionSpec::Uniform { lo, hi } => uniform_in(rng, *lo, *hi),
            DistributionSpec::Histogram { bin_edges, weights } => {
                let bin = WeightedIndex::new(weights).expect("validated weights").sample(rng);
                uniform_in(rng, bin_edges[bin], bin_edges[bin + 1])
            }
            DistributionSpec::Discrete { values, weights } => {
                values[WeightedIndex::new(weights).expect("validated weights").sample(rng)]
            }
        }
    }
}

fn uniform_in(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo + (hi - lo) * rng.random::<f64>()).clamp(lo, hi)
}

/// `n` independent draws from `spec`.
pub fn sample_params(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = stream(seed, 0, Purpose::Params);
    Ok((0..n).map(|_| spec.sample(&mut rng)).collect())
}
