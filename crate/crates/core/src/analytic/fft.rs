//! Unitary discrete Fourier transforms and the FID/spectrum pair.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized transform; `inverse` selects `exp(+i...)`.
pub fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    if data.is_empty() {
        return;
    }
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(data.len())
        } else {
            p.plan_fft_forward(data.len())
        }
    });
    plan.process(data);
}

/// In-place unitary transform (`1/sqrt(N)` both ways).
pub fn unitary_fft(data: &mut [Complex64], inverse: bool) {
    fft_in_place(data, inverse);
    let scale = 1.0 / (data.len() as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= scale);
}

/// Strided 1D transforms along every axis of a row-major 3D array.
pub fn fft3_in_place(data: &mut [Complex64], dims: (usize, usize, usize), inverse: bool) {
    let (nx, ny, nz) = dims;
    assert_eq!(data.len(), nx * ny * nz);
    for line in data.chunks_mut(nx) {
        fft_in_place(line, inverse);
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); ny.max(nz)];
    if ny > 1 {
        for z in 0..nz {
            for x in 0..nx {
                let idx = |y: usize| (z * ny + y) * nx + x;
                for y in 0..ny {
                    buf[y] = data[idx(y)];
                }
                fft_in_place(&mut buf[..ny], inverse);
                for y in 0..ny {
                    data[idx(y)] = buf[y];
                }
            }
        }
    }
    if nz > 1 {
        for y in 0..ny {
            for x in 0..nx {
                let idx = |z: usize| (z * ny + y) * nx + x;
                for z in 0..nz {
                    buf[z] = data[idx(z)];
                }
                fft_in_place(&mut buf[..nz], inverse);
                for z in 0..nz {
                    data[idx(z)] = buf[z];
                }
            }
        }
    }
}

/// Frequency-domain view of a FID. Bin `k` sits at `k / len` of the
/// spectral width (no centring shift).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<Complex64>,
    /// Length of the FID before zero-filling.
    pub source_len: usize,
    pub zero_fill_factor: usize,
}

impl Spectrum {
    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

pub fn fid_to_spectrum(fid: &[Complex64], zero_fill_factor: usize) -> Result<Spectrum> {
    if fid.is_empty() {
        return Err(Error::InvalidArgument("empty FID".into()));
    }
    if zero_fill_factor == 0 {
        return Err(Error::InvalidArgument("zero-fill factor must be at least 1".into()));
    }
    let mut values = fid.to_vec();
    values.resize(fid.len() * zero_fill_factor, Complex64::new(0.0, 0.0));
    unitary_fft(&mut values, false);
    Ok(Spectrum {
        values,
        source_len: fid.len(),
        zero_fill_factor,
    })
}

/// Inverse of [`fid_to_spectrum`]: returns the zero-filled FID.
pub fn spectrum_to_fid(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut values = spectrum.values.clone();
    unitary_fft(&mut values, true);
    values
}
