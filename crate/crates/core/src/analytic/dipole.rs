//! Susceptibility-to-field forward model.
//!
//! The field perturbation is the circular convolution of the susceptibility
//! map with the unit dipole response, evaluated in k-space with
//! `D(k) = 1/3 - kz^2 / |k|^2` and `D(0) = 0`. Voxels are assumed isotropic
//! and B0 points along z.

use num_complex::Complex64;

use super::fft::fft3_in_place;
use crate::error::{Error, Result};
use crate::grid::Volume;

/// Signed integer frequency of bin `i` in an `n`-point transform, divided
/// by `n`. For even `n` the Nyquist bin maps to -1/2.
fn fftfreq(i: usize, n: usize) -> f64 {
    let k = if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    };
    k / n as f64
}

/// k-space dipole kernel in unshifted FFT order.
pub fn dipole_kernel(nx: usize, ny: usize, nz: usize) -> Volume<f64> {
    let mut out = Volume::filled(nx, ny, nz, 0.0);
    for z in 0..nz {
        let kz = fftfreq(z, nz);
        for y in 0..ny {
            let ky = fftfreq(y, ny);
            for x in 0..nx {
                let kx = fftfreq(x, nx);
                let k2 = kx * kx + ky * ky + kz * kz;
                let i = out.index(x, y, z);
                out.data[i] = if k2 == 0.0 { 0.0 } else { 1.0 / 3.0 - kz * kz / k2 };
            }
        }
    }
    out
}

/// Field perturbation relative to B0, in ppm.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDeviation {
    pub ppm: Volume<f64>,
    /// Main field in T.
    pub b0: f64,
}

impl FieldDeviation {
    /// Converts to an off-resonance map in Hz for a gyromagnetic ratio in
    /// MHz/T.
    pub fn to_hz(&self, gamma: f64) -> Volume<f64> {
        let scale = gamma * self.b0;
        Volume {
            nx: self.ppm.nx,
            ny: self.ppm.ny,
            nz: self.ppm.nz,
            data: self.ppm.data.iter().map(|v| v * scale).collect(),
        }
    }
}

/// Applies the dipole forward model to a susceptibility volume in ppm.
///
/// Every dimension must be even; a single slice (`nz == 1`) is accepted as a
/// 2D map embedded at unit thickness.
pub fn dipole_field(chi: &Volume<f64>, b0: f64) -> Result<FieldDeviation> {
    let (nx, ny, nz) = chi.dims();
    let even = |n: usize| n > 0 && n.is_multiple_of(2);
    if !(even(nx) && even(ny) && (even(nz) || nz == 1)) {
        return Err(Error::InvalidSize(format!(
            "dipole model needs even dimensions, got {nx}x{ny}x{nz}"
        )));
    }
    if !(b0 > 0.0 && b0.is_finite()) {
        return Err(Error::InvalidArgument(format!("B0 {b0} must be positive")));
    }
    let kernel = dipole_kernel(nx, ny, nz);
    let mut buf: Vec<Complex64> = chi.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3_in_place(&mut buf, (nx, ny, nz), false);
    for (v, d) in buf.iter_mut().zip(&kernel.data) {
        *v *= d;
    }
    fft3_in_place(&mut buf, (nx, ny, nz), true);
    let scale = 1.0 / chi.len() as f64;
    Ok(FieldDeviation {
        ppm: Volume {
            nx,
            ny,
            nz,
            data: buf.iter().map(|v| v.re * scale).collect(),
        },
        b0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_chi_gives_no_field() {
        let chi = Volume::filled(8, 8, 8, 0.5);
        let f = dipole_field(&chi, 3.0).unwrap();
        assert!(f.ppm.data.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn odd_dimensions_rejected() {
        let chi = Volume::filled(8, 7, 8, 0.0);
        assert!(matches!(dipole_field(&chi, 3.0), Err(Error::InvalidSize(_))));
        let slice = Volume::filled(8, 8, 1, 0.1);
        assert!(dipole_field(&slice, 3.0).is_ok());
    }

    #[test]
    fn linear_and_shift_equivariant() {
        let (nx, ny, nz) = (8, 6, 4);
        let data: Vec<f64> = (0..nx * ny * nz)
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
            .collect();
        let chi = Volume::from_vec(nx, ny, nz, data).unwrap();
        let a = dipole_field(&chi, 3.0).unwrap();
        let doubled = Volume {
            data: chi.data.iter().map(|v| 2.0 * v).collect(),
            ..chi.clone()
        };
        let b = dipole_field(&doubled, 3.0).unwrap();
        for (x, y) in a.ppm.data.iter().zip(&b.ppm.data) {
            assert!((2.0 * x - y).abs() <= 1e-14);
        }
        // circular shift by one voxel along x
        let mut shifted = chi.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = shifted.index((x + 1) % nx, y, z);
                    shifted.data[i] = chi.data[chi.index(x, y, z)];
                }
            }
        }
        let s = dipole_field(&shifted, 3.0).unwrap();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let want = a.ppm.data[a.ppm.index(x, y, z)];
                    let got = s.ppm.data[s.ppm.index((x + 1) % nx, y, z)];
                    assert!((want - got).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn hz_conversion() {
        let chi = Volume::from_vec(2, 2, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let f = dipole_field(&chi, 3.0).unwrap();
        let hz = f.to_hz(42.6);
        assert!((hz.data[0] - f.ppm.data[0] * 127.8).abs() < 1e-12);
    }
}
