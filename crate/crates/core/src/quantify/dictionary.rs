//! Fingerprint-style dictionary matching over a (T1, T2) grid.

use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bloch::{run_sequence, Constants, SimulationSettings};
use crate::error::{Error, Result};
use crate::phantoms::PhantomMap;
use crate::sequences::{serialize_sequence, Sequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// Unit-norm magnitude atoms, one per grid entry.
    pub atoms: Vec<Vec<f64>>,
    /// `(t1, t2)` in ms per entry, row-major over (t1, t2).
    pub grid: Vec<(f64, f64)>,
    pub t1_grid: Vec<f64>,
    pub t2_grid: Vec<f64>,
    /// Sequence name plus a digest of its serialized form.
    pub sequence_id: String,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&v| !(v > 0.0 && v.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "{name} grid must be non-empty, positive and strictly increasing"
        )));
    }
    Ok(())
}

/// Normalized magnitude signal of a unit-pd voxel.
pub fn simulate_atom(t1: f64, t2: f64, seq: &Sequence, constants: &Constants) -> Result<Vec<f64>> {
    let voxel = PhantomMap::single_voxel(1.0, t1, t2)?;
    let record = run_sequence(&voxel, seq, None, constants, &SimulationSettings::default())?;
    let mut mags = record.magnitudes();
    let norm = mags.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument(format!("zero signal for t1={t1}, t2={t2}")));
    }
    mags.iter_mut().for_each(|v| *v /= norm);
    Ok(mags)
}

pub fn build_dictionary(t1_grid: &[f64], t2_grid: &[f64], seq: &Sequence, constants: &Constants) -> Result<Dictionary> {
    check_grid("t1", t1_grid)?;
    check_grid("t2", t2_grid)?;
    if seq.adc_count() == 0 {
        return Err(Error::InvalidArgument("sequence has no ADC event".into()));
    }
    let grid: Vec<(f64, f64)> = t1_grid
        .iter()
        .flat_map(|&t1| t2_grid.iter().map(move |&t2| (t1, t2)))
        .collect();
    let atoms = grid
        .par_iter()
        .map(|&(t1, t2)| simulate_atom(t1, t2, seq, constants))
        .collect::<Result<Vec<_>>>()?;
    let digest = Sha256::digest(serialize_sequence(seq).as_bytes());
    Ok(Dictionary {
        atoms,
        grid,
        t1_grid: t1_grid.to_vec(),
        t2_grid: t2_grid.to_vec(),
        sequence_id: format!("{}:{}", seq.name, &hex::encode(digest)[..16]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub index: usize,
    pub t1: f64,
    pub t2: f64,
    /// `|<signal, atom>| / ||signal||`.
    pub correlation: f64,
}

/// Best-correlated atom for a magnitude signal; ties go to the lowest index.
pub fn dictionary_match(signal: &[f64], dict: &Dictionary) -> Result<MatchResult> {
    if signal.len() != dict.signal_len() {
        return Err(Error::Shape(format!(
            "signal has {} samples, atoms have {}",
            signal.len(),
            dict.signal_len()
        )));
    }
    let norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("cannot match a zero signal".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, atom) in dict.atoms.iter().enumerate() {
        let c = signal.iter().zip(atom).map(|(a, b)| a * b).sum::<f64>().abs();
        if c > best.1 {
            best = (i, c);
        }
    }
    let (t1, t2) = dict.grid[best.0];
    Ok(MatchResult {
        index: best.0,
        t1,
        t2,
        correlation: best.1 / norm,
    })
}

/// Matches the magnitude of a complex signal.
pub fn dictionary_match_complex(signal: &[Complex64], dict: &Dictionary) -> Result<MatchResult> {
    let mags: Vec<f64> = signal.iter().map(|v| v.norm()).collect();
    dictionary_match(&mags, dict)
}
