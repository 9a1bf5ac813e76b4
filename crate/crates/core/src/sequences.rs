//! Pulse sequences as ordered event lists.
//!
//! Events execute strictly one after another. Times are in ms, angles in
//! degrees and gradient amplitudes in mT/m. The on-disk form is a JSON
//! object with `name`, `n_repetitions` and a tagged `events` array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dwell of the single-sample ADC used by the builders, in ms.
///
/// A power of two keeps the derived echo and repetition times exact.
pub const BUILDER_ADC_DWELL: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum SequenceEvent {
    /// Block RF pulse; a zero duration is an instantaneous hard pulse.
    RfPulse {
        flip: f64,
        phase: f64,
        duration: f64,
    },
    Delay {
        duration: f64,
    },
    Gradient {
        axis: Axis,
        amplitude: f64,
        duration: f64,
    },
    /// Samples are taken at the start of each dwell interval.
    Adc {
        n_samples: usize,
        dwell: f64,
    },
}

impl SequenceEvent {
    pub fn duration(&self) -> f64 {
        match *self {
            SequenceEvent::RfPulse { duration, .. }
            | SequenceEvent::Delay { duration }
            | SequenceEvent::Gradient { duration, .. } => duration,
            SequenceEvent::Adc { n_samples, dwell } => n_samples as f64 * dwell,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let finite_nonneg = |what: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{what} must be a finite non-negative number, got {v}"))
            }
        };
        match *self {
            SequenceEvent::RfPulse { flip, phase, duration } => {
                finite_nonneg("duration", duration)?;
                if !(0.0..=360.0).contains(&flip) {
                    return Err(format!("flip {flip} outside [0, 360]"));
                }
                if !phase.is_finite() {
                    return Err("phase must be finite".into());
                }
                Ok(())
            }
            SequenceEvent::Delay { duration } => finite_nonneg("duration", duration),
            SequenceEvent::Gradient {
                amplitude, duration, ..
            } => {
                finite_nonneg("duration", duration)?;
                if amplitude.is_finite() {
                    Ok(())
                } else {
                    Err("amplitude must be finite".into())
                }
            }
            SequenceEvent::Adc { n_samples, dwell } => {
                if n_samples == 0 {
                    return Err("ADC must take at least one sample".into());
                }
                if !(dwell.is_finite() && dwell > 0.0) {
                    return Err(format!("dwell {dwell} must be positive"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sequence {
    pub name: String,
    pub n_repetitions: usize,
    pub events: Vec<SequenceEvent>,
    /// Optional label per ADC event, in event order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adc_labels: Vec<String>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, n_repetitions: usize, events: Vec<SequenceEvent>) -> Result<Self> {
        let seq = Sequence {
            name: name.into(),
            n_repetitions,
            events,
            adc_labels: Vec::new(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_repetitions == 0 {
            return Err(Error::InvalidArgument("n_repetitions must be at least 1".into()));
        }
        for (index, event) in self.events.iter().enumerate() {
            event.check().map_err(|message| Error::Semantic { index, message })?;
        }
        let n_adc = self.adc_count();
        if !self.adc_labels.is_empty() && self.adc_labels.len() != n_adc {
            return Err(Error::InvalidArgument(format!(
                "{} ADC labels for {n_adc} ADC events",
                self.adc_labels.len()
            )));
        }
        Ok(())
    }

    /// Duration of one repetition: the sum of all event durations.
    pub fn repetition_time(&self) -> f64 {
        self.events.iter().map(SequenceEvent::duration).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.repetition_time() * self.n_repetitions as f64
    }

    pub fn adc_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, SequenceEvent::Adc { .. }))
            .count()
    }

    pub fn samples_per_repetition(&self) -> usize {
        self.events
            .iter()
            .map(|e| match e {
                SequenceEvent::Adc { n_samples, .. } => *n_samples,
                _ => 0,
            })
            .sum()
    }

    /// Start time of every ADC event, relative to the start of a repetition.
    pub fn adc_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for e in &self.events {
            if matches!(e, SequenceEvent::Adc { .. }) {
                out.push(t);
            }
            t += e.duration();
        }
        out
    }

    /// Time of the first ADC event, if any.
    pub fn echo_time(&self) -> Option<f64> {
        self.adc_times().first().copied()
    }
}

fn hard_pulse(flip: f64, phase: f64) -> SequenceEvent {
    SequenceEvent::RfPulse {
        flip,
        phase,
        duration: 0.0,
    }
}

fn single_adc() -> SequenceEvent {
    SequenceEvent::Adc {
        n_samples: 1,
        dwell: BUILDER_ADC_DWELL,
    }
}

/// 90°(x) – TE/2 – 180°(y) – TE/2 – ADC – fill to TR, repeated.
pub fn build_spin_echo(te: f64, tr: f64, n_repetitions: usize) -> Result<Sequence> {
    if !(te > 0.0 && te.is_finite()) {
        return Err(Error::InvalidTiming(format!("echo time {te} must be positive")));
    }
    if !(te + BUILDER_ADC_DWELL < tr && tr.is_finite()) {
        return Err(Error::InvalidTiming(format!(
            "echo time {te} ms does not fit in repetition time {tr} ms"
        )));
    }
    let half = te / 2.0;
    let events = vec![
        hard_pulse(90.0, 0.0),
        SequenceEvent::Delay { duration: half },
        hard_pulse(180.0, 90.0),
        SequenceEvent::Delay { duration: half },
        single_adc(),
        SequenceEvent::Delay {
            duration: tr - te - BUILDER_ADC_DWELL,
        },
    ];
    let mut seq = Sequence::new(format!("spin_echo_te{te}_tr{tr}"), n_repetitions, events)?;
    seq.adc_labels = vec![format!("te={te}")];
    Ok(seq)
}

/// CPMG-style echo train with one echo per entry of `echo_times`.
///
/// Refocusing pulse `i` sits midway between echo `i - 1` (the excitation for
/// the first echo) and echo `i`, so an echo forms at each requested time even
/// when the spacing is uneven.
pub fn build_multi_echo(echo_times: &[f64], tr: f64) -> Result<Sequence> {
    if echo_times.is_empty() {
        return Err(Error::InvalidTiming("no echo times given".into()));
    }
    if echo_times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidTiming("echo times must be positive".into()));
    }
    if echo_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTiming(format!(
            "echo times {echo_times:?} are not strictly increasing"
        )));
    }
    let last = *echo_times.last().unwrap();
    if !(last + BUILDER_ADC_DWELL < tr && tr.is_finite()) {
        return Err(Error::InvalidTiming(format!(
            "last echo {last} ms does not fit in repetition time {tr} ms"
        )));
    }

    let mut events = vec![hard_pulse(90.0, 0.0)];
    let mut prev = 0.0;
    for (i, &te) in echo_times.iter().enumerate() {
        let half = (te - prev) / 2.0;
        // After the first echo the ADC dwell eats into the first half-gap.
        let lead = if i == 0 { half } else { half - BUILDER_ADC_DWELL };
        if lead <= 0.0 {
            return Err(Error::InvalidTiming(format!(
                "echo spacing before {te} ms is too short"
            )));
        }
        events.push(SequenceEvent::Delay { duration: lead });
        events.push(hard_pulse(180.0, 90.0));
        events.push(SequenceEvent::Delay { duration: half });
        events.push(single_adc());
        prev = te;
    }
    events.push(SequenceEvent::Delay {
        duration: tr - last - BUILDER_ADC_DWELL,
    });
    let mut seq = Sequence::new(format!("multi_echo_{}", echo_times.len()), 1, events)?;
    seq.adc_labels = echo_times.iter().map(|t| format!("te={t}")).collect();
    Ok(seq)
}

pub fn parse_sequence(text: &str) -> Result<Sequence> {
    let seq: Sequence = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    seq.validate()?;
    Ok(seq)
}

pub fn serialize_sequence(seq: &Sequence) -> String {
    let mut s = serde_json::to_string_pretty(seq).expect("sequence is always serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_echo_shape_and_timing() {
        let s = build_spin_echo(100.0, 2000.0, 1).unwrap();
        assert_eq!(s.events.len(), 6);
        assert_eq!(s.echo_time(), Some(100.0));
        assert_eq!(s.repetition_time(), 2000.0);
    }

    #[test]
    fn spin_echo_rejects_bad_timing() {
        assert!(matches!(build_spin_echo(0.0, 2000.0, 1), Err(Error::InvalidTiming(_))));
        assert!(matches!(build_spin_echo(-5.0, 2000.0, 1), Err(Error::InvalidTiming(_))));
        assert!(matches!(
            build_spin_echo(2000.0, 2000.0, 1),
            Err(Error::InvalidTiming(_))
        ));
    }

    #[test]
    fn spin_echo_round_trip_is_byte_identical() {
        let s = build_spin_echo(100.0, 2000.0, 3).unwrap();
        let text = serialize_sequence(&s);
        let parsed = parse_sequence(&text).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(serialize_sequence(&parsed), text);
    }

    #[test]
    fn multi_echo_timings() {
        let s = build_multi_echo(&[22.0, 52.0, 82.0, 110.0], 3000.0).unwrap();
        assert_eq!(s.adc_count(), 4);
        assert_eq!(s.adc_times(), vec![22.0, 52.0, 82.0, 110.0]);
        assert_eq!(s.repetition_time(), 3000.0);
        assert_eq!(s.adc_labels.len(), 4);
        assert!(matches!(
            build_multi_echo(&[50.0, 40.0], 3000.0),
            Err(Error::InvalidTiming(_))
        ));
    }

    #[test]
    fn single_echo_train_equals_spin_echo_events() {
        let a = build_multi_echo(&[100.0], 2000.0).unwrap();
        let b = build_spin_echo(100.0, 2000.0, 1).unwrap();
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn negative_duration_names_event() {
        let text = r#"{"name":"x","n_repetitions":1,"events":[
            {"type":"Delay","duration":1.0},
            {"type":"Delay","duration":-1.0}]}"#;
        match parse_sequence(text) {
            Err(Error::Semantic { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_rules() {
        let flip = r#"{"name":"x","n_repetitions":1,"events":[{"type":"RfPulse","flip":400,"phase":0,"duration":0}]}"#;
        assert!(matches!(parse_sequence(flip), Err(Error::Semantic { index: 0, .. })));
        let adc = r#"{"name":"x","n_repetitions":1,"events":[{"type":"Adc","n_samples":0,"dwell":1}]}"#;
        assert!(matches!(parse_sequence(adc), Err(Error::Semantic { index: 0, .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let text = "{\"name\": \"x\",\n \"n_repetitions\": 1,\n \"events\": [}";
        match parse_sequence(text) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = r#"{"name":"x","n_repetitions":1,"events":[],"extra":1}"#;
        assert!(matches!(parse_sequence(unknown), Err(Error::Syntax { .. })));
        let unknown_event = r#"{"name":"x","n_repetitions":1,"events":[{"type":"Delay","duration":1,"foo":2}]}"#;
        assert!(matches!(parse_sequence(unknown_event), Err(Error::Syntax { .. })));
    }

    #[test]
    fn empty_sequence_is_valid() {
        let s = parse_sequence(r#"{"name":"empty","n_repetitions":1,"events":[]}"#).unwrap();
        assert_eq!(s.samples_per_repetition(), 0);
        assert_eq!(s.repetition_time(), 0.0);
    }
}
