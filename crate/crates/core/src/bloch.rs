//! Bloch simulation by exact rotation/relaxation operator splitting.
//!
//! Fields are piecewise constant over sequence events, so each event has a
//! closed-form propagator: RF pulses are rotations about a transverse axis,
//! everything else is free precession with exponential relaxation.
//!
//! Conventions: rotations are right-handed (a 90° pulse with phase 0 takes
//! +z to -y) and the transverse magnetization `mx + i·my` evolves as
//! `exp(-i·2π·df·t)` during free precession.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantoms::{FieldMap, FieldUnits, PhantomMap};
use crate::sequences::{Axis, Sequence, SequenceEvent};

/// Sub-step used to integrate finite-duration RF pulses, in ms.
pub const RF_SUBSTEP_MS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Magnetization {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
    /// Equilibrium longitudinal magnetization.
    pub m0: f64,
}

impl Magnetization {
    pub fn equilibrium(m0: f64) -> Self {
        Magnetization {
            mx: 0.0,
            my: 0.0,
            mz: m0,
            m0,
        }
    }

    pub fn transverse(&self) -> Complex64 {
        Complex64::new(self.mx, self.my)
    }

    pub fn norm(&self) -> f64 {
        (self.mx * self.mx + self.my * self.my + self.mz * self.mz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Gyromagnetic ratio in MHz/T.
    pub gamma: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { gamma: 42.6 }
    }
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        if self.gamma > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("gamma {} must be positive", self.gamma)))
        }
    }
}

/// Rotates `m` by `flip * b1_scale` degrees about the transverse axis
/// `(cos phase, sin phase, 0)`. `b1_scale` must be positive.
pub fn rotate_pulse(m: Magnetization, flip: f64, phase: f64, b1_scale: f64) -> Magnetization {
    debug_assert!(b1_scale > 0.0);
    let angle = (flip * b1_scale).to_radians();
    let (ny, nx) = phase.to_radians().sin_cos();
    let (s, c) = angle.sin_cos();
    // Rodrigues with a z-free axis: v c + (n × v) s + n (n·v)(1 - c)
    let dot = nx * m.mx + ny * m.my;
    let cross = (ny * m.mz, -nx * m.mz, nx * m.my - ny * m.mx);
    Magnetization {
        mx: m.mx * c + cross.0 * s + nx * dot * (1.0 - c),
        my: m.my * c + cross.1 * s + ny * dot * (1.0 - c),
        mz: m.mz * c + cross.2 * s,
        m0: m.m0,
    }
}

/// Exact free precession and relaxation over `dt` ms at off-resonance `df`
/// Hz. A `t2` of zero is the no-signal sentinel and kills the transverse
/// components; infinite relaxation times disable that relaxation.
pub fn free_precess(m: Magnetization, dt: f64, df: f64, t1: f64, t2: f64) -> Result<Magnetization> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative interval {dt}")));
    }
    Ok(precess(m, dt, df, t1, t2))
}

#[inline]
fn precess(m: Magnetization, dt: f64, df: f64, t1: f64, t2: f64) -> Magnetization {
    if dt == 0.0 {
        return m;
    }
    let e2 = if t2 > 0.0 { (-dt / t2).exp() } else { 0.0 };
    let e1 = if t1 > 0.0 { (-dt / t1).exp() } else { 0.0 };
    let (s, c) = (-2.0 * PI * df * dt * 1e-3).sin_cos();
    Magnetization {
        mx: (m.mx * c - m.my * s) * e2,
        my: (m.mx * s + m.my * c) * e2,
        mz: m.m0 + (m.mz - m.m0) * e1,
        m0: m.m0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionMode {
    /// Ideal spatial encoding: one complex image per ADC sample.
    Voxelwise,
    /// Sum over voxels with gradient-induced phase.
    Kspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub mode: AcquisitionMode,
    pub isochromats_per_voxel: usize,
    /// Full width of the uniform intra-voxel off-resonance spread, in Hz.
    pub isochromat_spread_hz: f64,
    /// Zero the transverse magnetization at the end of every repetition.
    pub spoil_between_repetitions: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            mode: AcquisitionMode::Voxelwise,
            isochromats_per_voxel: 1,
            isochromat_spread_hz: 0.0,
            spoil_between_repetitions: true,
        }
    }
}

impl SimulationSettings {
    pub fn kspace() -> Self {
        SimulationSettings {
            mode: AcquisitionMode::Kspace,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub mode: AcquisitionMode,
    /// Voxel-summed signal per ADC sample (in fixed row-major voxel order).
    pub samples: Vec<Complex64>,
    /// Acquisition time of every sample from the start of the run, in ms.
    pub sample_times: Vec<f64>,
    /// Voxelwise mode only: one row-major image per sample.
    pub images: Vec<Vec<Complex64>>,
    pub width: usize,
    pub height: usize,
}

impl SignalRecord {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm()).collect()
    }
}

struct VoxelParams {
    pd: f64,
    t1: f64,
    t2: f64,
    df: f64,
    b1: f64,
    x_mm: f64,
    y_mm: f64,
}

fn simulate_isochromat(seq: &Sequence, v: &VoxelParams, df: f64, gamma: f64, spoil: bool, out: &mut [Complex64]) {
    let mut m = Magnetization::equilibrium(v.pd);
    let mut k = 0;
    for _ in 0..seq.n_repetitions {
        for event in &seq.events {
            match *event {
                SequenceEvent::RfPulse { flip, phase, duration } => {
                    if duration == 0.0 {
                        m = rotate_pulse(m, flip, phase, v.b1);
                    } else {
                        let steps = (duration / RF_SUBSTEP_MS).ceil().max(1.0);
                        let dt = duration / steps;
                        for _ in 0..steps as usize {
                            m = rotate_pulse(m, flip / steps, phase, v.b1);
                            m = precess(m, dt, df, f64::INFINITY, f64::INFINITY);
                        }
                    }
                }
                SequenceEvent::Delay { duration } => {
                    m = precess(m, duration, df, v.t1, v.t2);
                }
                SequenceEvent::Gradient {
                    axis,
                    amplitude,
                    duration,
                } => {
                    let r = match axis {
                        Axis::X => v.x_mm,
                        Axis::Y => v.y_mm,
                    };
                    // MHz/T * mT/m * mm = Hz
                    let dg = gamma * amplitude * r;
                    m = precess(m, duration, df + dg, v.t1, v.t2);
                }
                SequenceEvent::Adc { n_samples, dwell } => {
                    for _ in 0..n_samples {
                        out[k] += m.transverse();
                        k += 1;
                        m = precess(m, dwell, df, v.t1, v.t2);
                    }
                }
            }
        }
        if spoil {
            m.mx = 0.0;
            m.my = 0.0;
        }
    }
}

fn simulate_voxel(
    seq: &Sequence,
    v: &VoxelParams,
    settings: &SimulationSettings,
    gamma: f64,
    n_total: usize,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n_total];
    // pd = 0 carries no magnetization; t2 = 0 is the no-signal sentinel.
    if v.pd == 0.0 || v.t2 == 0.0 {
        return out;
    }
    let n_iso = settings.isochromats_per_voxel;
    for j in 0..n_iso {
        let offset = if n_iso == 1 {
            0.0
        } else {
            settings.isochromat_spread_hz * ((j as f64 + 0.5) / n_iso as f64 - 0.5)
        };
        simulate_isochromat(
            seq,
            v,
            v.df + offset,
            gamma,
            settings.spoil_between_repetitions,
            &mut out,
        );
    }
    if n_iso > 1 {
        let inv = 1.0 / n_iso as f64;
        out.iter_mut().for_each(|s| *s *= inv);
    }
    out
}

/// Runs `seq` over every voxel of `phantom`.
///
/// Each voxel starts at equilibrium `(0, 0, pd)`. Voxels are simulated in
/// parallel; the voxel-summed `samples` are accumulated sequentially in
/// row-major order, so the result does not depend on the thread count.
pub fn run_sequence(
    phantom: &PhantomMap,
    seq: &Sequence,
    b1_map: Option<&FieldMap>,
    constants: &Constants,
    settings: &SimulationSettings,
) -> Result<SignalRecord> {
    constants.validate()?;
    seq.validate()?;
    let (w, h) = (phantom.width, phantom.height);
    let n_vox = w * h;
    if phantom.pd.len() != n_vox || phantom.t1.len() != n_vox || phantom.t2.len() != n_vox {
        return Err(Error::Shape("phantom channels do not match its dimensions".into()));
    }
    if let Some(b1) = b1_map {
        if b1.width != w || b1.height != h {
            return Err(Error::Shape(format!(
                "B1 map is {}x{}, phantom is {w}x{h}",
                b1.width, b1.height
            )));
        }
        if b1.units != FieldUnits::Unitless {
            return Err(Error::InvalidArgument("B1 map must be a unitless scale".into()));
        }
    }
    if settings.isochromats_per_voxel == 0 {
        return Err(Error::InvalidArgument(
            "isochromats_per_voxel must be at least 1".into(),
        ));
    }

    let per_rep = seq.samples_per_repetition();
    let n_total = per_rep * seq.n_repetitions;
    let sample_times = sample_times(seq);

    let voxels: Vec<Vec<Complex64>> = (0..n_vox)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let v = VoxelParams {
                pd: phantom.pd[i],
                t1: phantom.t1[i],
                t2: phantom.t2[i],
                df: phantom.off_resonance[i],
                b1: b1_map.map_or(1.0, |b| b.values[i]),
                x_mm: (x as f64 + 0.5 - w as f64 / 2.0) * phantom.voxel_size,
                y_mm: (y as f64 + 0.5 - h as f64 / 2.0) * phantom.voxel_size,
            };
            simulate_voxel(seq, &v, settings, constants.gamma, n_total)
        })
        .collect();

    let mut samples = vec![Complex64::new(0.0, 0.0); n_total];
    for vox in &voxels {
        for (acc, s) in samples.iter_mut().zip(vox) {
            *acc += *s;
        }
    }
    let images = match settings.mode {
        AcquisitionMode::Voxelwise => (0..n_total).map(|k| voxels.iter().map(|v| v[k]).collect()).collect(),
        AcquisitionMode::Kspace => Vec::new(),
    };
    Ok(SignalRecord {
        mode: settings.mode,
        samples,
        sample_times,
        images,
        width: w,
        height: h,
    })
}

fn sample_times(seq: &Sequence) -> Vec<f64> {
    let tr = seq.repetition_time();
    let mut out = Vec::with_capacity(seq.samples_per_repetition() * seq.n_repetitions);
    for rep in 0..seq.n_repetitions {
        let mut t = rep as f64 * tr;
        for e in &seq.events {
            if let SequenceEvent::Adc { n_samples, dwell } = *e {
                for k in 0..n_samples {
                    out.push(t + k as f64 * dwell);
                }
            }
            t += e.duration();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{build_multi_echo, build_spin_echo};

    fn m(mx: f64, my: f64, mz: f64) -> Magnetization {
        Magnetization { mx, my, mz, m0: 1.0 }
    }

    fn close(a: Magnetization, b: Magnetization, tol: f64) -> bool {
        (a.mx - b.mx).abs() <= tol && (a.my - b.my).abs() <= tol && (a.mz - b.mz).abs() <= tol
    }

    #[test]
    fn rotation_convention() {
        let r = rotate_pulse(m(0.0, 0.0, 1.0), 90.0, 0.0, 1.0);
        assert!(close(r, m(0.0, -1.0, 0.0), 1e-15));
        let r = rotate_pulse(m(0.0, 0.0, 1.0), 180.0, 0.0, 1.0);
        assert!(close(r, m(0.0, 0.0, -1.0), 1e-15));
        let v = m(0.3, -0.4, 0.5);
        assert!(close(rotate_pulse(v, 360.0, 37.0, 1.0), v, 1e-12));
        // b1 scale multiplies the flip
        let r = rotate_pulse(m(0.0, 0.0, 1.0), 45.0, 0.0, 2.0);
        assert!(close(r, m(0.0, -1.0, 0.0), 1e-15));
    }

    #[test]
    fn precession_convention() {
        let inf = f64::INFINITY;
        let r = free_precess(m(1.0, 0.0, 0.0), 1.0, 250.0, inf, inf).unwrap();
        assert!(close(r, m(0.0, -1.0, 0.0), 1e-15));
        let start = Magnetization {
            mx: 1.0,
            my: 0.0,
            mz: 0.0,
            m0: 0.0,
        };
        let r = free_precess(start, 100.0, 0.0, inf, 100.0).unwrap();
        assert!((r.mx - 0.367879).abs() < 1e-6 && r.my == 0.0 && r.mz == 0.0);
        let eq = Magnetization::equilibrium(0.7);
        assert_eq!(free_precess(eq, 13.0, 42.0, 800.0, 60.0).unwrap(), eq);
        assert!(free_precess(eq, -1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_t2_kills_transverse() {
        let r = free_precess(m(1.0, 1.0, 0.0), 1.0, 0.0, 100.0, 0.0).unwrap();
        assert_eq!((r.mx, r.my), (0.0, 0.0));
    }

    /// Exact steady state of a 90-180 spin echo with ideal pulses and full
    /// spoiling at the end of each repetition.
    fn spin_echo_steady_state(t1: f64, t2: f64, te: f64, tr: f64) -> f64 {
        (1.0 - 2.0 * (-(tr - te / 2.0) / t1).exp() + (-tr / t1).exp()) * (-te / t2).exp()
    }

    #[test]
    fn spin_echo_steady_state_matches_bloch_oracle() {
        let seq = build_spin_echo(100.0, 2000.0, 6).unwrap();
        let ph = PhantomMap::single_voxel(1.0, 1000.0, 100.0).unwrap();
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &SimulationSettings::default()).unwrap();
        assert_eq!(rec.samples.len(), 6);
        let last = rec.samples.last().unwrap().norm();
        let expect = spin_echo_steady_state(1000.0, 100.0, 100.0, 2000.0);
        assert!((last - expect).abs() < 1e-12, "{last} vs {expect}");
        // first repetition starts from equilibrium
        assert!((rec.samples[0].norm() - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(rec.sample_times[1], 2100.0);
    }

    #[test]
    fn cpmg_echo_decay() {
        let seq = build_multi_echo(&[22.0, 52.0, 82.0, 110.0], 5000.0).unwrap();
        let ph = PhantomMap::single_voxel(1.0, 1000.0, 100.0).unwrap();
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &SimulationSettings::default()).unwrap();
        let expect = [0.8025, 0.5945, 0.4404, 0.3329];
        for (s, e) in rec.magnitudes().iter().zip(expect) {
            assert!(((s - e) / e).abs() < 1e-3, "{s} vs {e}");
        }
    }

    #[test]
    fn zero_pd_gives_zero_samples() {
        let ph = PhantomMap::empty(4, 4, false).unwrap();
        let seq = build_spin_echo(30.0, 500.0, 2).unwrap();
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &SimulationSettings::default()).unwrap();
        assert!(rec.samples.iter().all(|s| s.re == 0.0 && s.im == 0.0));
        assert_eq!(rec.images.len(), 2);
        assert_eq!(rec.images[0].len(), 16);
    }

    #[test]
    fn b1_map_shape_checked() {
        let ph = PhantomMap::uniform(4, 4, 1.0, 1000.0, 100.0).unwrap();
        let b1 = FieldMap::constant(3, 4, 1.0, FieldUnits::Unitless).unwrap();
        let seq = build_spin_echo(30.0, 500.0, 1).unwrap();
        let r = run_sequence(
            &ph,
            &seq,
            Some(&b1),
            &Constants::default(),
            &SimulationSettings::default(),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn finite_pulse_approximates_hard_pulse() {
        let events = vec![
            SequenceEvent::RfPulse {
                flip: 90.0,
                phase: 0.0,
                duration: 0.5,
            },
            SequenceEvent::Adc {
                n_samples: 1,
                dwell: 0.01,
            },
        ];
        let seq = Sequence::new("fp", 1, events).unwrap();
        let ph = PhantomMap::single_voxel(1.0, 1000.0, 100.0).unwrap();
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &SimulationSettings::default()).unwrap();
        assert!((rec.samples[0].im + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_dephases_kspace_sum() {
        let ph = PhantomMap::uniform(8, 1, 1.0, 1000.0, 100.0).unwrap();
        let events = vec![
            SequenceEvent::RfPulse {
                flip: 90.0,
                phase: 0.0,
                duration: 0.0,
            },
            SequenceEvent::Adc {
                n_samples: 1,
                dwell: 0.01,
            },
            SequenceEvent::Gradient {
                axis: Axis::X,
                amplitude: 10.0,
                duration: 1.0,
            },
            SequenceEvent::Adc {
                n_samples: 1,
                dwell: 0.01,
            },
        ];
        let seq = Sequence::new("g", 1, events).unwrap();
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &SimulationSettings::kspace()).unwrap();
        assert!(rec.images.is_empty());
        assert!((rec.samples[0].norm() - 8.0).abs() < 1e-9);
        assert!(rec.samples[1].norm() < 0.5 * rec.samples[0].norm());
    }

    #[test]
    fn isochromat_spread_attenuates_fid() {
        let events = vec![
            SequenceEvent::RfPulse {
                flip: 90.0,
                phase: 0.0,
                duration: 0.0,
            },
            SequenceEvent::Delay { duration: 10.0 },
            SequenceEvent::Adc {
                n_samples: 1,
                dwell: 0.01,
            },
        ];
        let seq = Sequence::new("fid", 1, events).unwrap();
        let ph = PhantomMap::single_voxel(1.0, 1000.0, 1e9).unwrap();
        let settings = SimulationSettings {
            isochromats_per_voxel: 64,
            isochromat_spread_hz: 50.0,
            ..SimulationSettings::default()
        };
        let rec = run_sequence(&ph, &seq, None, &Constants::default(), &settings).unwrap();
        // uniform spread of width W over time t gives |sinc(W t)|
        let x = PI * 50.0 * 10e-3;
        let sinc = x.sin() / x;
        assert!((rec.samples[0].norm() - sinc.abs()).abs() < 1e-3);
    }
}
