//! MR spectroscopy signal synthesis.
//!
//! Ex-vivo signals are sums of damped complex exponentials (Lorentzian
//! lines). In-vivo signals combine measured molecule basis FIDs, each with
//! its own concentration and modulation, plus a broad baseline defined by
//! Gaussian lines in the frequency domain.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::unitary_fft;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub amplitude: f64,
    /// Fraction of the spectral width, in [0, 1).
    pub frequency: f64,
    /// Radians.
    pub phase: f64,
    /// Seconds; infinity disables damping.
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn new(peaks: Vec<Peak>) -> Self {
        PeakSet { peaks }
    }

    pub fn union(&self, other: &PeakSet) -> PeakSet {
        PeakSet {
            peaks: self.peaks.iter().chain(&other.peaks).copied().collect(),
        }
    }
}

/// `S(n dt) = sum_j a_j e^{i phi_j} e^{i 2 pi f_j n} e^{-n dt / T2_j}`.
pub fn mrs_fid(peaks: &PeakSet, n_points: usize, dwell: f64) -> Result<Vec<Complex64>> {
    if peaks.peaks.is_empty() {
        return Err(Error::InvalidArgument("empty peak set".into()));
    }
    if n_points < 2 || !(dwell > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need n_points >= 2 and dwell > 0, got {n_points}, {dwell}"
        )));
    }
    for p in &peaks.peaks {
        if !(p.amplitude > 0.0 && p.t2 > 0.0 && p.frequency.is_finite() && p.phase.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid peak {p:?}")));
        }
    }
    let mut fid = vec![Complex64::new(0.0, 0.0); n_points];
    for p in &peaks.peaks {
        let c0 = Complex64::from_polar(p.amplitude, p.phase);
        for (n, s) in fid.iter_mut().enumerate() {
            let t = n as f64 * dwell;
            let osc = Complex64::cis(2.0 * PI * p.frequency * n as f64);
            *s += c0 * osc * (-t / p.t2).exp();
        }
    }
    Ok(fid)
}

/// Modulation `e(t) = e^{i 2 pi df t} e^{-t/t2p} e^{-(pi g t)^2}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Modulation {
    /// Frequency shift in Hz.
    pub df: f64,
    /// Extra Lorentzian damping time in s; `None` disables it.
    pub t2p: Option<f64>,
    /// Gaussian damping in Hz.
    pub g: f64,
}

impl Modulation {
    pub fn at(&self, t: f64) -> Complex64 {
        let lorentz = self.t2p.map_or(1.0, |t2p| (-t / t2p).exp());
        let gauss = (-(PI * self.g * t).powi(2)).exp();
        Complex64::cis(2.0 * PI * self.df * t) * (lorentz * gauss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub name: String,
    pub fid: Vec<Complex64>,
    pub concentration: f64,
    pub modulation: Modulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeBasis {
    /// Dwell time shared by every basis FID, in s.
    pub dwell: f64,
    pub molecules: Vec<Molecule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLine {
    pub amplitude: f64,
    /// Fraction of the spectral width.
    pub center: f64,
    /// Full width at half maximum, fraction of the spectral width.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub components: Vec<GaussianLine>,
}

impl BaselineSpec {
    /// Unitary spectrum of the baseline on an `n_points` grid. Distances
    /// wrap around the spectral width.
    pub fn spectrum(&self, n_points: usize) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); n_points];
        for c in &self.components {
            if !(c.width > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "baseline width {} must be positive",
                    c.width
                )));
            }
            let sigma = c.width / (2.0 * (2.0 * 2f64.ln()).sqrt());
            for (k, v) in out.iter_mut().enumerate() {
                let mut d = k as f64 / n_points as f64 - c.center;
                d -= d.round();
                v.re += c.amplitude * (-d * d / (2.0 * sigma * sigma)).exp();
            }
        }
        Ok(out)
    }
}

/// `S = sum_m c_m v_m(t) e_m(t) + b(t)`.
pub fn invivo_mrs(
    basis: &MoleculeBasis,
    baseline: &BaselineSpec,
    n_points: usize,
    dwell: f64,
) -> Result<Vec<Complex64>> {
    if basis.dwell != dwell {
        return Err(Error::Shape(format!(
            "basis dwell {} does not match requested {dwell}",
            basis.dwell
        )));
    }
    if let Some(m) = basis.molecules.iter().find(|m| m.fid.len() != n_points) {
        return Err(Error::Shape(format!(
            "basis FID '{}' has {} points, expected {n_points}",
            m.name,
            m.fid.len()
        )));
    }
    let mut out = baseline.spectrum(n_points)?;
    unitary_fft(&mut out, true);
    for m in &basis.molecules {
        if !(m.concentration >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative concentration for '{}'",
                m.name
            )));
        }
        if m.concentration == 0.0 {
            continue;
        }
        for (n, (s, v)) in out.iter_mut().zip(&m.fid).enumerate() {
            *s += m.concentration * v * m.modulation.at(n as f64 * dwell);
        }
    }
    Ok(out)
}
