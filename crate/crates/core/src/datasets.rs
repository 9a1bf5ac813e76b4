//! Paired training datasets and their bit-exact on-disk form.
//!
//! A bundle directory holds `manifest.json` plus one headerless payload file
//! per array, named `<sample_id>.<field>.raw`. Payloads are little-endian
//! IEEE-754 float32 in row-major order; complex arrays interleave (re, im).
//! The manifest's `content_hash` is the SHA-256 of every payload byte in
//! sample order (inputs, then labels, each in declared order).

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{fid_to_spectrum, mrs_fid, Peak, PeakSet};
use crate::bloch::{run_sequence, AcquisitionMode, Constants, SimulationSettings};
use crate::degrade::{add_noise_with, undersample_with, DistributionSpec};
use crate::error::{Error, Result};
use crate::phantoms::{random_polynomial_field, random_shapes_phantom, FieldUnits, ParamRanges, Range};
use crate::rng::{derive_seed, stream, Purpose};
use crate::sequences::Sequence;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HASH_ALGORITHM: &str = "sha256";
pub const BYTE_ORDER: &str = "little-endian";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    /// Two interleaved float32 values per element.
    Complex64,
}

impl DType {
    pub fn floats_per_element(self) -> usize {
        match self {
            DType::Float32 => 1,
            DType::Complex64 => 2,
        }
    }
}

/// A single payload array in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn real(shape: Vec<usize>, values: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Array {
            dtype: DType::Float32,
            shape,
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn complex(shape: Vec<usize>, values: &[Complex64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Array {
            dtype: DType::Complex64,
            shape,
            data: values.iter().flat_map(|v| [v.re as f32, v.im as f32]).collect(),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.n_elements() * self.dtype.floats_per_element() * 4
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        match self.dtype {
            DType::Complex64 => self
                .data
                .chunks_exact(2)
                .map(|c| Complex64::new(f64::from(c[0]), f64::from(c[1])))
                .collect(),
            DType::Float32 => self.data.iter().map(|&v| Complex64::new(f64::from(v), 0.0)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(dtype: DType, shape: Vec<usize>, bytes: &[u8]) -> Self {
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Array { dtype, shape, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub inputs: Vec<(String, Array)>,
    pub labels: Vec<(String, Array)>,
}

impl Sample {
    pub fn input(&self, field: &str) -> Option<&Array> {
        self.inputs.iter().find(|(f, _)| f == field).map(|(_, a)| a)
    }

    pub fn label(&self, field: &str) -> Option<&Array> {
        self.labels.iter().find(|(f, _)| f == field).map(|(_, a)| a)
    }

    fn arrays(&self) -> impl Iterator<Item = &(String, Array)> {
        self.inputs.iter().chain(&self.labels)
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub field: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub inputs: Vec<FieldEntry>,
    pub labels: Vec<FieldEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub generator_config: serde_json::Value,
    pub byte_order: String,
    pub hash_algorithm: String,
    pub samples: Vec<SampleEntry>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

fn entries(id: &str, arrays: &[(String, Array)]) -> Vec<FieldEntry> {
    arrays
        .iter()
        .map(|(field, a)| FieldEntry {
            field: field.clone(),
            file: format!("{id}.{field}.raw"),
            shape: a.shape.clone(),
            dtype: a.dtype,
        })
        .collect()
}

/// SHA-256 over every payload byte, in sample order.
pub fn content_hash(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        for (_, a) in s.arrays() {
            h.update(a.to_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl DatasetBundle {
    pub fn new(seed: u64, generator_config: serde_json::Value, samples: Vec<Sample>) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            seed,
            generator_config,
            byte_order: BYTE_ORDER.into(),
            hash_algorithm: HASH_ALGORITHM.into(),
            samples: samples
                .iter()
                .map(|s| SampleEntry {
                    id: s.id.clone(),
                    inputs: entries(&s.id, &s.inputs),
                    labels: entries(&s.id, &s.labels),
                })
                .collect(),
            content_hash: content_hash(&samples),
        };
        DatasetBundle { manifest, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Writes payload files first and the manifest last.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (sample, entry) in bundle.samples.iter().zip(&bundle.manifest.samples) {
        let files = entry.inputs.iter().chain(&entry.labels);
        for ((_, array), fe) in sample.arrays().zip(files) {
            fs::write(dir.join(&fe.file), array.to_bytes())?;
        }
    }
    let mut text = serde_json::to_vec_pretty(&bundle.manifest)?;
    text.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Reads and fully verifies a bundle: version, file presence, sizes and
/// the content hash.
pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|e| Error::Integrity {
        file: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let value: serde_json::Value = serde_json::from_slice(&text)?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Integrity {
            file: manifest_path.clone(),
            message: "missing format_version".into(),
        })?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    if manifest.hash_algorithm != HASH_ALGORITHM || manifest.byte_order != BYTE_ORDER {
        return Err(Error::Integrity {
            file: manifest_path,
            message: format!(
                "unsupported encoding {} / {}",
                manifest.hash_algorithm, manifest.byte_order
            ),
        });
    }

    let read_fields = |fields: &[FieldEntry]| -> Result<Vec<(String, Array)>> {
        fields
            .iter()
            .map(|fe| {
                let path = dir.join(&fe.file);
                let bytes = fs::read(&path).map_err(|e| Error::Integrity {
                    file: path.clone(),
                    message: e.to_string(),
                })?;
                let expected = fe.shape.iter().product::<usize>() * fe.dtype.floats_per_element() * 4;
                if bytes.len() != expected {
                    return Err(Error::Corruption {
                        file: path,
                        message: format!("{} bytes, expected {expected}", bytes.len()),
                    });
                }
                Ok((fe.field.clone(), Array::from_bytes(fe.dtype, fe.shape.clone(), &bytes)))
            })
            .collect()
    };
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            Ok(Sample {
                id: e.id.clone(),
                inputs: read_fields(&e.inputs)?,
                labels: read_fields(&e.labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = content_hash(&samples);
    if hash != manifest.content_hash {
        return Err(Error::Corruption {
            file: manifest_path,
            message: format!("content hash {hash} does not match {}", manifest.content_hash),
        });
    }
    Ok(DatasetBundle { manifest, samples })
}

/// Recipe for undersampled-FID / full-spectrum pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrsPairsConfig {
    pub n_pairs: usize,
    /// Inclusive peak-count range.
    pub peak_count_range: (u32, u32),
    pub amp_range: Range,
    /// Fraction of the spectral width.
    pub freq_range: Range,
    /// Radians.
    pub phase_range: Range,
    /// Seconds.
    pub t2_range: Range,
    pub n_points: usize,
    /// Seconds.
    pub dwell: f64,
    pub rate: f64,
    /// `None` means noise-free input.
    pub snr_db: Option<f64>,
}

impl Default for MrsPairsConfig {
    fn default() -> Self {
        MrsPairsConfig {
            n_pairs: 40_000,
            peak_count_range: (1, 10),
            amp_range: (0.05, 1.0),
            freq_range: (0.01, 0.99),
            phase_range: (0.0, 0.0),
            t2_range: (0.02, 0.2),
            n_points: 256,
            dwell: 1e-3,
            rate: 0.25,
            snr_db: None,
        }
    }
}

impl MrsPairsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        let ordered = |(lo, hi): Range| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1");
        }
        let (pc_lo, pc_hi) = self.peak_count_range;
        if pc_lo < 1 || pc_lo > pc_hi {
            return bad("peak count range must satisfy 1 <= lo <= hi");
        }
        if !ordered(self.amp_range) || self.amp_range.0 <= 0.0 {
            return bad("amplitude range must be positive and ordered");
        }
        if !ordered(self.freq_range) || self.freq_range.0 < 0.0 || self.freq_range.1 >= 1.0 {
            return bad("frequency range must lie in [0, 1)");
        }
        if !ordered(self.phase_range) {
            return bad("phase range must be ordered");
        }
        if !ordered(self.t2_range) || self.t2_range.0 <= 0.0 {
            return bad("t2 range must be positive and ordered");
        }
        if self.n_points < 2 || !(self.dwell > 0.0) {
            return bad("need n_points >= 2 and dwell > 0");
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) || self.rate * (self.n_points as f64) < 1.0 {
            return bad("rate must be in (0, 1] and keep at least one point");
        }
        if self.snr_db.is_some_and(f64::is_nan) {
            return bad("snr must be a number");
        }
        Ok(())
    }
}

fn uniform(range: Range) -> DistributionSpec {
    DistributionSpec::Uniform {
        lo: range.0,
        hi: range.1,
    }
}

/// Draws the peak set of sample `index`.
pub fn mrs_sample_peaks(cfg: &MrsPairsConfig, seed: u64, index: usize) -> PeakSet {
    let mut rng = stream(seed, index as u64, Purpose::Params);
    let (lo, hi) = cfg.peak_count_range;
    let count = rng.random_range(lo..=hi);
    let (amp, freq, phase, t2) = (
        uniform(cfg.amp_range),
        uniform(cfg.freq_range),
        uniform(cfg.phase_range),
        uniform(cfg.t2_range),
    );
    let peaks = (0..count)
        .map(|_| Peak {
            amplitude: amp.sample(&mut rng),
            frequency: freq.sample(&mut rng),
            phase: phase.sample(&mut rng),
            t2: t2.sample(&mut rng),
        })
        .collect();
    PeakSet::new(peaks)
}

/// Regenerates sample `index` of an MRS pair bundle.
///
/// Inputs: `fid` (undersampled, zero-filled, optionally noisy) and `mask`.
/// Labels: `spectrum` (noise-free, fully sampled) and `peaks` (one row of
/// amplitude, frequency, phase, t2 per peak).
pub fn mrs_pair(cfg: &MrsPairsConfig, seed: u64, index: usize) -> Result<Sample> {
    let peaks = mrs_sample_peaks(cfg, seed, index);
    let fid = mrs_fid(&peaks, cfg.n_points, cfg.dwell)?;
    let label = fid_to_spectrum(&fid, 1)?;

    let noisy = match cfg.snr_db {
        Some(snr) => add_noise_with(&fid, snr, &mut stream(seed, index as u64, Purpose::Noise)),
        None => fid,
    };
    let (mask, input) = undersample_with(&noisy, cfg.rate, &mut stream(seed, index as u64, Purpose::Mask))?;
    let mask_values: Vec<f64> = mask.kept.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    let peak_rows: Vec<f64> = peaks
        .peaks
        .iter()
        .flat_map(|p| [p.amplitude, p.frequency, p.phase, p.t2])
        .collect();

    let n = cfg.n_points;
    Ok(Sample {
        id: sample_id(index),
        inputs: vec![
            ("fid".into(), Array::complex(vec![n], &input)),
            ("mask".into(), Array::real(vec![n], &mask_values)),
        ],
        labels: vec![
            ("spectrum".into(), Array::complex(vec![n], &label.values)),
            ("peaks".into(), Array::real(vec![peaks.peaks.len(), 4], &peak_rows)),
        ],
    })
}

pub fn make_mrs_pairs(cfg: &MrsPairsConfig, seed: u64) -> Result<DatasetBundle> {
    cfg.validate()?;
    let samples = (0..cfg.n_pairs)
        .into_par_iter()
        .map(|i| mrs_pair(cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let config = serde_json::json!({ "kind": "mrs_pairs", "config": cfg });
    Ok(DatasetBundle::new(seed, config, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct B1Config {
    pub degree: i64,
    pub range: Range,
    /// Append the B1 map as an extra input channel.
    pub as_input: bool,
}

impl Default for B1Config {
    fn default() -> Self {
        B1Config {
            degree: 3,
            range: (0.8, 1.2),
            as_input: true,
        }
    }
}

/// Recipe for echo-image / parameter-map pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub n_phantoms: usize,
    pub width: usize,
    pub height: usize,
    pub n_shapes: usize,
    pub ranges: ParamRanges,
    pub b1: Option<B1Config>,
    pub snr_db: Option<f64>,
    pub constants: Constants,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            n_phantoms: 8,
            width: 64,
            height: 64,
            n_shapes: 100,
            ranges: ParamRanges::default(),
            b1: Some(B1Config::default()),
            snr_db: None,
            constants: Constants::default(),
        }
    }
}

/// Regenerates phantom `index` of a mapping bundle.
///
/// Inputs: `echoes` (`[n_echo, height, width]` magnitudes) and, when
/// configured, `b1`. Labels: `t2` and `pd` maps, taken from the phantom
/// before any degradation.
pub fn mapping_pair(cfg: &MappingConfig, seq: &Sequence, seed: u64, index: usize) -> Result<Sample> {
    let phantom_seed = derive_seed(seed, index as u64);
    let phantom = random_shapes_phantom(cfg.width, cfg.height, cfg.n_shapes, &cfg.ranges, phantom_seed)?;
    let b1 = cfg
        .b1
        .map(|b| {
            random_polynomial_field(
                cfg.width,
                cfg.height,
                b.degree,
                b.range,
                FieldUnits::Unitless,
                phantom_seed,
            )
        })
        .transpose()?;
    let settings = SimulationSettings {
        mode: AcquisitionMode::Voxelwise,
        ..SimulationSettings::default()
    };
    let record = run_sequence(&phantom, seq, b1.as_ref(), &cfg.constants, &settings)?;

    let n_vox = cfg.width * cfg.height;
    let mut stacked: Vec<Complex64> = record.images.concat();
    if let Some(snr) = cfg.snr_db {
        stacked = add_noise_with(&stacked, snr, &mut stream(seed, index as u64, Purpose::Noise));
    }
    let magnitudes: Vec<f64> = stacked.iter().map(|v| v.norm()).collect();
    let n_echo = record.images.len();

    let dims = vec![cfg.height, cfg.width];
    let mut inputs = vec![(
        "echoes".to_string(),
        Array::real(vec![n_echo, cfg.height, cfg.width], &magnitudes),
    )];
    if let (Some(b), Some(map)) = (cfg.b1, b1.as_ref()) {
        if b.as_input {
            inputs.push(("b1".into(), Array::real(dims.clone(), &map.values)));
        }
    }
    debug_assert_eq!(magnitudes.len(), n_echo * n_vox);
    Ok(Sample {
        id: sample_id(index),
        inputs,
        labels: vec![
            ("t2".into(), Array::real(dims.clone(), &phantom.t2)),
            ("pd".into(), Array::real(dims, &phantom.pd)),
        ],
    })
}

pub fn make_mapping_pairs(cfg: &MappingConfig, seq: &Sequence, seed: u64) -> Result<DatasetBundle> {
    if seq.adc_count() == 0 {
        return Err(Error::InvalidArgument("sequence has no ADC event".into()));
    }
    if cfg.n_phantoms == 0 {
        return Err(Error::InvalidArgument("n_phantoms must be at least 1".into()));
    }
    if cfg.snr_db.is_some_and(f64::is_nan) {
        return Err(Error::InvalidArgument("snr must be a number".into()));
    }
    cfg.ranges.validate()?;
    let samples = (0..cfg.n_phantoms)
        .into_par_iter()
        .map(|i| mapping_pair(cfg, seq, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let config = serde_json::json!({ "kind": "mapping_pairs", "config": cfg, "sequence": seq });
    Ok(DatasetBundle::new(seed, config, samples))
}
