//! Closed-form signal generators: spin-echo contrast, the dipole
//! susceptibility forward model and MR spectroscopy synthesis.

pub mod dipole;
pub mod fft;
pub mod mrs;

pub use dipole::{dipole_field, dipole_kernel, FieldDeviation};
pub use fft::{fid_to_spectrum, spectrum_to_fid, Spectrum};
pub use mrs::{invivo_mrs, mrs_fid, BaselineSpec, GaussianLine, Modulation, Molecule, MoleculeBasis, Peak, PeakSet};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::phantoms::PhantomMap;

/// Spin-echo signal `S = pd (1 - exp(-TR/T1)) exp(-TE/T2)` per voxel.
/// Voxels with the `t2 = 0` sentinel are exactly zero.
pub fn spin_echo_contrast(phantom: &PhantomMap, te: f64, tr: f64) -> Result<Grid2<f64>> {
    if !(te >= 0.0 && te.is_finite()) || !(tr > 0.0) {
        return Err(Error::InvalidTiming(format!("te={te}, tr={tr}")));
    }
    let data = (0..phantom.len())
        .map(|i| spin_echo_signal(phantom.pd[i], phantom.t1[i], phantom.t2[i], te, tr))
        .collect();
    Grid2::from_vec(phantom.width, phantom.height, data)
}

/// Single-voxel form of [`spin_echo_contrast`].
pub fn spin_echo_signal(pd: f64, t1: f64, t2: f64, te: f64, tr: f64) -> f64 {
    if t2 == 0.0 {
        return 0.0;
    }
    pd * (1.0 - (-tr / t1).exp()) * (-te / t2).exp()
}
