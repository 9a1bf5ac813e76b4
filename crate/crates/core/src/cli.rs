//! Command-line front end.
//!
//! Every command resolves its parameters from defaults, an optional JSON
//! config file (`{"seed": .., "params": {..}}`) and explicit flags, in that
//! order of precedence. Outputs are assembled in a temporary sibling
//! directory and renamed into place, together with the resolved
//! `run_config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analytic::dipole_field;
use crate::bloch::{run_sequence, AcquisitionMode, Constants, SimulationSettings};
use crate::datasets::{
    make_mapping_pairs, make_mrs_pairs, read_bundle, sample_id, write_bundle, Array, DatasetBundle, MappingConfig,
    MrsPairsConfig, Sample,
};
use crate::error::Error;
use crate::grid::Volume;
use crate::phantoms::{random_shapes_phantom, ParamRanges, PhantomMap, Range};
use crate::quantify::{
    build_dictionary, dictionary_match, mlp_train, write_model, MlpModel, TrainConfig, TrainingPair,
};
use crate::rng::derive_seed;
use crate::sequences::{build_multi_echo, build_spin_echo, parse_sequence, Sequence};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.json";

/// Echo times of the default multi-echo protocol, in ms.
pub const DEFAULT_ECHO_TIMES: [f64; 4] = [22.0, 52.0, 82.0, 110.0];
pub const DEFAULT_MAPPING_TR: f64 = 2000.0;

#[derive(Debug, Parser)]
#[command(name = "mrsynth", version, about = "Physics-driven synthetic MR data generator")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (output does not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Random-shapes parametric phantom.
    Phantom(PhantomArgs),
    /// Bloch simulation of a sequence over a random phantom.
    Simulate(SimulateArgs),
    /// Undersampled-FID / full-spectrum training pairs.
    Mrs(MrsArgs),
    /// Dipole field of a random susceptibility volume.
    QsmForward(QsmArgs),
    /// Multi-echo image / parameter-map training pairs.
    Dataset(DatasetArgs),
    /// Dictionary matching of echo images from a dataset bundle.
    DictMatch(DictMatchArgs),
    /// Train a per-voxel T2 regressor on a dataset bundle.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// Grid width in voxels.
    #[arg(long)]
    width: Option<usize>,
    /// Grid height in voxels.
    #[arg(long)]
    height: Option<usize>,
    /// Number of random shapes.
    #[arg(long)]
    shapes: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Grid width in voxels.
    #[arg(long)]
    width: Option<usize>,
    /// Grid height in voxels.
    #[arg(long)]
    height: Option<usize>,
    /// Number of random shapes.
    #[arg(long)]
    shapes: Option<usize>,
    /// Sequence JSON file; replaces the spin-echo builder flags.
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Echo time in ms.
    #[arg(long)]
    te: Option<f64>,
    /// Repetition time in ms.
    #[arg(long)]
    tr: Option<f64>,
    /// Number of sequence repetitions.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Sum voxels into a single signal instead of per-voxel images.
    #[arg(long)]
    kspace: bool,
}

#[derive(Debug, Args)]
struct MrsArgs {
    /// Number of training pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// FID length in points.
    #[arg(long)]
    points: Option<usize>,
    /// Fraction of FID points kept.
    #[arg(long)]
    rate: Option<f64>,
    /// Input SNR in dB; omitted means noise-free.
    #[arg(long)]
    snr: Option<f64>,
    /// Dwell time in s.
    #[arg(long)]
    dwell: Option<f64>,
    /// Fewest peaks per spectrum.
    #[arg(long)]
    min_peaks: Option<u32>,
    /// Most peaks per spectrum.
    #[arg(long)]
    max_peaks: Option<u32>,
}

#[derive(Debug, Args)]
struct QsmArgs {
    /// Volume size along x.
    #[arg(long)]
    nx: Option<usize>,
    /// Volume size along y.
    #[arg(long)]
    ny: Option<usize>,
    /// Volume size along z (1 for a single slice).
    #[arg(long)]
    nz: Option<usize>,
    /// Main field in T.
    #[arg(long)]
    b0: Option<f64>,
    /// Number of random shapes.
    #[arg(long)]
    shapes: Option<usize>,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Number of phantoms.
    #[arg(long)]
    phantoms: Option<usize>,
    /// Grid width in voxels.
    #[arg(long)]
    width: Option<usize>,
    /// Grid height in voxels.
    #[arg(long)]
    height: Option<usize>,
    /// Number of random shapes.
    #[arg(long)]
    shapes: Option<usize>,
    /// Comma-separated echo times in ms.
    #[arg(long, value_delimiter = ',')]
    echo_times: Option<Vec<f64>>,
    /// Repetition time in ms.
    #[arg(long)]
    tr: Option<f64>,
    /// Input SNR in dB; omitted means noise-free.
    #[arg(long)]
    snr: Option<f64>,
    /// Simulate with a perfect transmit field and omit the B1 input.
    #[arg(long)]
    no_b1: bool,
}

#[derive(Debug, Args)]
struct DictMatchArgs {
    /// Dataset bundle to match.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input field holding `[n_echo, height, width]` magnitudes.
    #[arg(long)]
    field: Option<String>,
    /// T1 grid in ms, `start:step:stop` or a comma list.
    #[arg(long, value_parser = parse_grid_arg)]
    t1_grid: Option<GridArg>,
    /// T2 grid in ms, `start:step:stop` or a comma list.
    #[arg(long, value_parser = parse_grid_arg)]
    t2_grid: Option<GridArg>,
    /// Comma-separated echo times in ms.
    #[arg(long, value_delimiter = ',')]
    echo_times: Option<Vec<f64>>,
    /// Repetition time in ms.
    #[arg(long)]
    tr: Option<f64>,
    /// Sequence JSON file; replaces the echo-time flags.
    #[arg(long)]
    sequence: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset bundle with `echoes` inputs and `t2` labels.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Targets are T2 / scale, in ms.
    #[arg(long)]
    t2_scale: Option<f64>,
}

#[derive(Debug, Clone)]
struct GridArg(Vec<f64>);

fn parse_grid_arg(text: &str) -> std::result::Result<GridArg, String> {
    parse_grid(text).map(GridArg)
}

/// Inclusive `start:step:stop` range or comma-separated list.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    let nums = |sep: char| -> std::result::Result<Vec<f64>, String> {
        text.split(sep)
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect()
    };
    if text.contains(':') {
        let parts = nums(':')?;
        let [start, step, stop] = parts[..] else {
            return Err("range must be start:step:stop".into());
        };
        if !(step > 0.0) || stop < start {
            return Err("range needs step > 0 and stop >= start".into());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        nums(',')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub n_shapes: usize,
    pub ranges: ParamRanges,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            width: 64,
            height: 64,
            n_shapes: 100,
            ranges: ParamRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub phantom: PhantomParams,
    pub te: f64,
    pub tr: f64,
    pub n_repetitions: usize,
    /// Explicit sequence; overrides `te`, `tr` and `n_repetitions`.
    pub sequence: Option<Sequence>,
    pub kspace: bool,
    pub constants: Constants,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            phantom: PhantomParams {
                width: 32,
                height: 32,
                n_shapes: 20,
                ranges: ParamRanges::default(),
            },
            te: 80.0,
            tr: 2000.0,
            n_repetitions: 1,
            sequence: None,
            kspace: false,
            constants: Constants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QsmParams {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub n_shapes: usize,
    /// Susceptibility range in ppm.
    pub chi_range: Range,
    pub b0: f64,
}

impl Default for QsmParams {
    fn default() -> Self {
        QsmParams {
            nx: 32,
            ny: 32,
            nz: 16,
            n_shapes: 10,
            chi_range: (-0.1, 0.1),
            b0: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub mapping: MappingConfig,
    pub echo_times: Vec<f64>,
    pub tr: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            mapping: MappingConfig::default(),
            echo_times: DEFAULT_ECHO_TIMES.to_vec(),
            tr: DEFAULT_MAPPING_TR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictMatchParams {
    pub input: Option<PathBuf>,
    pub field: String,
    pub t1_grid: Vec<f64>,
    pub t2_grid: Vec<f64>,
    pub echo_times: Vec<f64>,
    pub tr: f64,
    pub sequence: Option<Sequence>,
    pub constants: Constants,
}

impl Default for DictMatchParams {
    fn default() -> Self {
        DictMatchParams {
            input: None,
            field: "echoes".into(),
            t1_grid: (1..=25).map(|k| f64::from(k) * 100.0).collect(),
            t2_grid: (1..=35).map(|k| f64::from(k) * 20.0).collect(),
            echo_times: DEFAULT_ECHO_TIMES.to_vec(),
            tr: DEFAULT_MAPPING_TR,
            sequence: None,
            constants: Constants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub input: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub t2_scale: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            input: None,
            hidden: vec![32, 32],
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            t2_scale: 700.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    params: Value,
}

#[derive(Debug, Serialize)]
struct RunConfig<'a, P: Serialize> {
    command: &'a str,
    seed: u64,
    params: &'a P,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// What a command leaves in its staging directory.
enum Output {
    Bundle(DatasetBundle),
    Model { model: MlpModel, loss_trace: Vec<f64> },
}

struct Resolved {
    command: &'static str,
    seed: u64,
    params: Value,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_params<P: DeserializeOwned + Default>(command: &str, config: Option<&ConfigFile>) -> Outcome<P> {
    let Some(cfg) = config else {
        return Ok(P::default());
    };
    if let Some(c) = &cfg.command {
        if c != command {
            return Err(Failure::Usage(format!("config is for '{c}', not '{command}'")));
        }
    }
    if cfg.params.is_null() {
        return Ok(P::default());
    }
    serde_json::from_value(cfg.params.clone()).map_err(|e| Failure::Usage(format!("config params: {e}")))
}

fn read_sequence(path: &Path) -> Outcome<Sequence> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(parse_sequence(&text)?)
}

fn to_value<P: Serialize>(p: &P) -> Value {
    serde_json::to_value(p).unwrap_or(Value::Null)
}

fn resolve(command: &Command, config: Option<&ConfigFile>) -> Outcome<(&'static str, Value)> {
    Ok(match command {
        Command::Phantom(a) => {
            let mut p: PhantomParams = load_params("phantom", config)?;
            set(&mut p.width, a.width);
            set(&mut p.height, a.height);
            set(&mut p.n_shapes, a.shapes);
            ("phantom", to_value(&p))
        }
        Command::Simulate(a) => {
            let mut p: SimulateParams = load_params("simulate", config)?;
            set(&mut p.phantom.width, a.width);
            set(&mut p.phantom.height, a.height);
            set(&mut p.phantom.n_shapes, a.shapes);
            set(&mut p.te, a.te);
            set(&mut p.tr, a.tr);
            set(&mut p.n_repetitions, a.repetitions);
            if let Some(path) = &a.sequence {
                p.sequence = Some(read_sequence(path)?);
            }
            p.kspace |= a.kspace;
            ("simulate", to_value(&p))
        }
        Command::Mrs(a) => {
            let mut p: MrsPairsConfig = load_params("mrs", config)?;
            set(&mut p.n_pairs, a.pairs);
            set(&mut p.n_points, a.points);
            set(&mut p.rate, a.rate);
            set(&mut p.dwell, a.dwell);
            set(&mut p.peak_count_range.0, a.min_peaks);
            set(&mut p.peak_count_range.1, a.max_peaks);
            if a.snr.is_some() {
                p.snr_db = a.snr;
            }
            ("mrs", to_value(&p))
        }
        Command::QsmForward(a) => {
            let mut p: QsmParams = load_params("qsm-forward", config)?;
            set(&mut p.nx, a.nx);
            set(&mut p.ny, a.ny);
            set(&mut p.nz, a.nz);
            set(&mut p.b0, a.b0);
            set(&mut p.n_shapes, a.shapes);
            ("qsm-forward", to_value(&p))
        }
        Command::Dataset(a) => {
            let mut p: DatasetParams = load_params("dataset", config)?;
            set(&mut p.mapping.n_phantoms, a.phantoms);
            set(&mut p.mapping.width, a.width);
            set(&mut p.mapping.height, a.height);
            set(&mut p.mapping.n_shapes, a.shapes);
            set(&mut p.echo_times, a.echo_times.clone());
            set(&mut p.tr, a.tr);
            if a.snr.is_some() {
                p.mapping.snr_db = a.snr;
            }
            if a.no_b1 {
                p.mapping.b1 = None;
            }
            ("dataset", to_value(&p))
        }
        Command::DictMatch(a) => {
            let mut p: DictMatchParams = load_params("dict-match", config)?;
            if a.input.is_some() {
                p.input = a.input.clone();
            }
            set(&mut p.field, a.field.clone());
            set(&mut p.t1_grid, a.t1_grid.clone().map(|g| g.0));
            set(&mut p.t2_grid, a.t2_grid.clone().map(|g| g.0));
            set(&mut p.echo_times, a.echo_times.clone());
            set(&mut p.tr, a.tr);
            if let Some(path) = &a.sequence {
                p.sequence = Some(read_sequence(path)?);
            }
            ("dict-match", to_value(&p))
        }
        Command::Train(a) => {
            let mut p: TrainParams = load_params("train", config)?;
            if a.input.is_some() {
                p.input = a.input.clone();
            }
            set(&mut p.hidden, a.hidden.clone());
            set(&mut p.learning_rate, a.lr);
            set(&mut p.epochs, a.epochs);
            set(&mut p.batch_size, a.batch);
            set(&mut p.t2_scale, a.t2_scale);
            ("train", to_value(&p))
        }
    })
}

fn params<P: DeserializeOwned>(r: &Resolved) -> P {
    serde_json::from_value(r.params.clone()).expect("resolved params round-trip")
}

fn phantom_labels(phantom: &PhantomMap) -> Vec<(String, Array)> {
    let dims = vec![phantom.height, phantom.width];
    let labels: Vec<f64> = phantom.region_label.iter().map(|&l| f64::from(l)).collect();
    vec![
        ("pd".into(), Array::real(dims.clone(), &phantom.pd)),
        ("t1".into(), Array::real(dims.clone(), &phantom.t1)),
        ("t2".into(), Array::real(dims.clone(), &phantom.t2)),
        (
            "off_resonance".into(),
            Array::real(dims.clone(), &phantom.off_resonance),
        ),
        ("region_label".into(), Array::real(dims, &labels)),
    ]
}

fn run_phantom(r: &Resolved) -> Outcome<Output> {
    let p: PhantomParams = params(r);
    let phantom = random_shapes_phantom(p.width, p.height, p.n_shapes, &p.ranges, r.seed)?;
    let sample = Sample {
        id: sample_id(0),
        inputs: vec![],
        labels: phantom_labels(&phantom),
    };
    Ok(Output::Bundle(DatasetBundle::new(r.seed, cfg_value(r), vec![sample])))
}

fn cfg_value(r: &Resolved) -> Value {
    json!({ "kind": r.command, "config": r.params })
}

fn run_simulate(r: &Resolved) -> Outcome<Output> {
    let p: SimulateParams = params(r);
    let phantom = random_shapes_phantom(
        p.phantom.width,
        p.phantom.height,
        p.phantom.n_shapes,
        &p.phantom.ranges,
        r.seed,
    )?;
    let seq = match p.sequence {
        Some(s) => s,
        None => build_spin_echo(p.te, p.tr, p.n_repetitions)?,
    };
    let settings = if p.kspace {
        SimulationSettings::kspace()
    } else {
        SimulationSettings::default()
    };
    let record = run_sequence(&phantom, &seq, None, &p.constants, &settings)?;
    let signal = match record.mode {
        AcquisitionMode::Voxelwise => Array::complex(
            vec![record.images.len(), phantom.height, phantom.width],
            &record.images.concat(),
        ),
        AcquisitionMode::Kspace => Array::complex(vec![record.samples.len()], &record.samples),
    };
    let sample = Sample {
        id: sample_id(0),
        inputs: vec![("signal".into(), signal)],
        labels: phantom_labels(&phantom),
    };
    Ok(Output::Bundle(DatasetBundle::new(r.seed, cfg_value(r), vec![sample])))
}

fn run_mrs(r: &Resolved) -> Outcome<Output> {
    let p: MrsPairsConfig = params(r);
    p.validate()?;
    Ok(Output::Bundle(make_mrs_pairs(&p, r.seed)?))
}

fn run_qsm(r: &Resolved) -> Outcome<Output> {
    let p: QsmParams = params(r);
    let ranges = ParamRanges {
        chi: Some(p.chi_range),
        ..ParamRanges::default()
    };
    let slices = (0..p.nz)
        .into_par_iter()
        .map(|z| random_shapes_phantom(p.nx, p.ny, p.n_shapes, &ranges, derive_seed(r.seed, z as u64)))
        .collect::<crate::Result<Vec<_>>>()?;
    let chi: Vec<f64> = slices
        .iter()
        .flat_map(|s| s.chi.clone().unwrap_or_else(|| vec![0.0; s.len()]))
        .collect();
    let chi = Volume::from_vec(p.nx, p.ny, p.nz, chi)?;
    let field = dipole_field(&chi, p.b0)?;
    let dims = vec![p.nz, p.ny, p.nx];
    let sample = Sample {
        id: sample_id(0),
        inputs: vec![("chi".into(), Array::real(dims.clone(), &chi.data))],
        labels: vec![("field_ppm".into(), Array::real(dims, &field.ppm.data))],
    };
    Ok(Output::Bundle(DatasetBundle::new(r.seed, cfg_value(r), vec![sample])))
}

fn run_dataset(r: &Resolved) -> Outcome<Output> {
    let p: DatasetParams = params(r);
    let seq = build_multi_echo(&p.echo_times, p.tr)?;
    Ok(Output::Bundle(make_mapping_pairs(&p.mapping, &seq, r.seed)?))
}

fn require_input(input: &Option<PathBuf>) -> Outcome<&Path> {
    input
        .as_deref()
        .ok_or_else(|| Failure::Usage("--input is required".into()))
}

/// Per-voxel echo vectors of an `[n_echo, height, width]` field.
fn voxel_signals(array: &Array, field: &str) -> crate::Result<(usize, usize, Vec<Vec<f64>>)> {
    let [n_echo, h, w] = array.shape[..] else {
        return Err(Error::Shape(format!(
            "field '{field}' has shape {:?}, expected [n_echo, height, width]",
            array.shape
        )));
    };
    let values = array.to_f64();
    let signals = (0..h * w)
        .map(|v| (0..n_echo).map(|e| values[e * h * w + v]).collect())
        .collect();
    Ok((h, w, signals))
}

fn run_dict_match(r: &Resolved) -> Outcome<Output> {
    let p: DictMatchParams = params(r);
    let input = read_bundle(require_input(&p.input)?)?;
    let seq = match p.sequence {
        Some(s) => s,
        None => build_multi_echo(&p.echo_times, p.tr)?,
    };
    let dict = build_dictionary(&p.t1_grid, &p.t2_grid, &seq, &p.constants)?;
    let samples = input
        .samples
        .iter()
        .map(|s| {
            let array = s
                .input(&p.field)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no input '{}'", s.id, p.field)))?;
            let (h, w, signals) = voxel_signals(array, &p.field)?;
            let matches = signals
                .par_iter()
                .map(|sig| {
                    if sig.iter().all(|&v| v == 0.0) {
                        Ok((0.0, 0.0, 0.0))
                    } else {
                        dictionary_match(sig, &dict).map(|m| (m.t1, m.t2, m.correlation))
                    }
                })
                .collect::<crate::Result<Vec<_>>>()?;
            let dims = vec![h, w];
            let col = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<f64> { matches.iter().map(f).collect() };
            Ok(Sample {
                id: s.id.clone(),
                inputs: vec![],
                labels: vec![
                    ("t1".into(), Array::real(dims.clone(), &col(|m| m.0))),
                    ("t2".into(), Array::real(dims.clone(), &col(|m| m.1))),
                    ("correlation".into(), Array::real(dims, &col(|m| m.2))),
                ],
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let config = json!({
        "kind": r.command,
        "config": r.params,
        "sequence_id": dict.sequence_id,
        "source_content_hash": input.manifest.content_hash,
    });
    Ok(Output::Bundle(DatasetBundle::new(r.seed, config, samples)))
}

/// Echo magnitudes divided by the first echo; `None` for empty voxels.
pub fn echo_features(echoes: &[f64]) -> Option<Vec<f64>> {
    let first = *echoes.first()?;
    (first > 0.0).then(|| echoes.iter().map(|v| v / first).collect())
}

fn run_train(r: &Resolved) -> Outcome<Output> {
    let p: TrainParams = params(r);
    if !(p.t2_scale > 0.0) {
        return Err(Error::InvalidArgument("t2_scale must be positive".into()).into());
    }
    let input = read_bundle(require_input(&p.input)?)?;
    let mut pairs = Vec::new();
    for s in &input.samples {
        let echoes = s
            .input("echoes")
            .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no 'echoes' input", s.id)))?;
        let t2 = s
            .label("t2")
            .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no 't2' label", s.id)))?
            .to_f64();
        let (_, _, signals) = voxel_signals(echoes, "echoes")?;
        if signals.len() != t2.len() {
            return Err(Error::Shape(format!("sample {}: echoes and t2 map differ in size", s.id)).into());
        }
        for (sig, &t) in signals.iter().zip(&t2) {
            if t > 0.0 {
                if let Some(features) = echo_features(sig) {
                    pairs.push(TrainingPair {
                        input: features,
                        target: vec![t / p.t2_scale],
                    });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no foreground voxels to train on".into()).into());
    }
    let mut layer_sizes = vec![pairs[0].input.len()];
    layer_sizes.extend(&p.hidden);
    layer_sizes.push(1);
    let report = mlp_train(
        &pairs,
        &TrainConfig {
            layer_sizes,
            learning_rate: p.learning_rate,
            epochs: p.epochs,
            batch_size: p.batch_size,
            seed: r.seed,
        },
    )?;
    Ok(Output::Model {
        model: report.model,
        loss_trace: report.loss_trace,
    })
}

fn execute(r: &Resolved) -> Outcome<Output> {
    match r.command {
        "phantom" => run_phantom(r),
        "simulate" => run_simulate(r),
        "mrs" => run_mrs(r),
        "qsm-forward" => run_qsm(r),
        "dataset" => run_dataset(r),
        "dict-match" => run_dict_match(r),
        "train" => run_train(r),
        other => Err(Failure::Usage(format!("unknown command {other}"))),
    }
}

/// SHA-256 over the listed files, in order.
fn hash_files(dir: &Path, names: &[String]) -> crate::Result<String> {
    let mut h = Sha256::new();
    for n in names {
        h.update(fs::read(dir.join(n))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes the output into `staging` and returns `(item count, content hash)`.
fn write_output(output: &Output, r: &Resolved, staging: &Path) -> crate::Result<(usize, String)> {
    fs::create_dir_all(staging)?;
    let summary = match output {
        Output::Bundle(bundle) => {
            write_bundle(bundle, staging)?;
            (bundle.len(), bundle.manifest.content_hash.clone())
        }
        Output::Model { model, loss_trace } => {
            write_model(model, staging)?;
            let mut text = serde_json::to_vec_pretty(loss_trace)?;
            text.push(b'\n');
            fs::write(staging.join(LOSS_TRACE_FILE), text)?;
            let mut names = vec![crate::quantify::mlp::MODEL_MANIFEST_FILE.to_string()];
            for i in 0..model.layers.len() {
                names.push(format!("layer{i}.weights.raw"));
                names.push(format!("layer{i}.biases.raw"));
            }
            (model.n_parameters(), hash_files(staging, &names)?)
        }
    };
    let run_config = RunConfig {
        command: r.command,
        seed: r.seed,
        params: &r.params,
    };
    let mut text = serde_json::to_vec_pretty(&run_config)?;
    text.push(b'\n');
    fs::write(staging.join(RUN_CONFIG_FILE), text)?;
    Ok(summary)
}

/// Renames `staging` onto `out`, replacing any previous output.
fn commit(staging: &Path, out: &Path) -> crate::Result<()> {
    if out.exists() {
        let old = sibling(out, "old");
        fs::rename(out, &old)?;
        fs::rename(staging, out)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(staging, out)?;
    }
    Ok(())
}

fn sibling(out: &Path, tag: &str) -> PathBuf {
    let name = out
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parent.join(format!(".{name}.{tag}-{}", std::process::id()))
}

fn run(cli: Cli) -> Outcome<String> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            Some(
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Failure::Usage("--out is required".into()))?;
    let (command, params) = resolve(&cli.command, config.as_ref())?;
    let seed = cli.seed.or(config.as_ref().and_then(|c| c.seed)).unwrap_or(0);
    let resolved = Resolved { command, seed, params };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    let output = pool.install(|| execute(&resolved))?;

    let staging = sibling(&out, "tmp");
    let written = write_output(&output, &resolved, &staging).and_then(|s| commit(&staging, &out).map(|()| s));
    let (count, hash) = match written {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e.into());
        }
    };
    let unit = if matches!(output, Output::Model { .. }) {
        "parameters"
    } else {
        "samples"
    };
    Ok(format!(
        "{command}: {count} {unit} -> {} content_hash={hash}",
        out.display()
    ))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error[{}]: {e}", e.name());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(
            parse_grid("100:100:500").unwrap(),
            vec![100.0, 200.0, 300.0, 400.0, 500.0]
        );
        assert_eq!(parse_grid("20:20:700").unwrap().len(), 35);
        assert_eq!(parse_grid("1, 2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert!(parse_grid("1:0:4").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn features_normalize_by_first_echo() {
        assert_eq!(echo_features(&[2.0, 1.0, 0.5]), Some(vec![1.0, 0.5, 0.25]));
        assert_eq!(echo_features(&[0.0, 0.0]), None);
        assert_eq!(echo_features(&[]), None);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["mrsynth", "mrs", "--bogus"]), 2);
        assert_eq!(dispatch(["mrsynth", "mrs"]), 2);
        assert_eq!(dispatch(["mrsynth", "--help"]), 0);
    }

    #[test]
    fn flags_override_config() {
        let cfg: ConfigFile = serde_json::from_value(json!({
            "command": "mrs",
            "seed": 3,
            "params": { "n_pairs": 5, "n_points": 64 }
        }))
        .unwrap();
        let cli = Cli::try_parse_from(["mrsynth", "mrs", "--points", "128"]).unwrap();
        let (_, v) = resolve(&cli.command, Some(&cfg)).unwrap();
        let p: MrsPairsConfig = serde_json::from_value(v).unwrap();
        assert_eq!(p.n_pairs, 5);
        assert_eq!(p.n_points, 128);
        assert_eq!(p.rate, 0.25);
    }

    #[test]
    fn mismatched_config_command_is_usage_error() {
        let cfg: ConfigFile = serde_json::from_value(json!({ "command": "train" })).unwrap();
        let cli = Cli::try_parse_from(["mrsynth", "mrs"]).unwrap();
        assert!(matches!(resolve(&cli.command, Some(&cfg)), Err(Failure::Usage(_))));
    }
}
