//! Procedural parametric phantoms, imperfection fields and
//! distribution-enhancement transforms.
//!
//! A phantom is a 2D grid of tissue parameters. Templates are built by
//! rasterizing random ellipses, rectangles and triangles onto an empty grid,
//! each shape carrying one uniformly drawn value per channel. Transmit-field
//! (B1) and off-resonance imperfections come from random bivariate
//! polynomials rescaled to a target range.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::rng::{stream, Purpose};

/// A per-voxel parameter channel of a [`PhantomMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Pd,
    T1,
    T2,
    OffResonance,
    Chi,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Pd,
        Channel::T1,
        Channel::T2,
        Channel::OffResonance,
        Channel::Chi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Pd => "pd",
            Channel::T1 => "t1",
            Channel::T2 => "t2",
            Channel::OffResonance => "off_resonance",
            Channel::Chi => "chi",
        }
    }

    /// Physically admissible interval used for clamping.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Channel::Pd => (0.0, 1.0),
            Channel::T1 | Channel::T2 => (0.0, f64::INFINITY),
            Channel::OffResonance | Channel::Chi => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown channel '{s}'")))
    }
}

/// Spatial map of object parameters.
///
/// Units: `pd` unitless in [0, 1], `t1`/`t2` in ms, `off_resonance` in Hz,
/// `chi` in ppm. Label 0 is background. A `t2` of exactly 0 marks a voxel
/// that emits no signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomMap {
    pub width: usize,
    pub height: usize,
    /// Voxel edge length in mm.
    pub voxel_size: f64,
    pub pd: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub off_resonance: Vec<f64>,
    pub chi: Option<Vec<f64>>,
    pub region_label: Vec<u32>,
}

impl PhantomMap {
    /// All-background phantom.
    pub fn empty(width: usize, height: usize, with_chi: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSize(format!(
                "phantom dimensions must be positive, got {width}x{height}"
            )));
        }
        let n = width * height;
        Ok(PhantomMap {
            width,
            height,
            voxel_size: 1.0,
            pd: vec![0.0; n],
            t1: vec![0.0; n],
            t2: vec![0.0; n],
            off_resonance: vec![0.0; n],
            chi: with_chi.then(|| vec![0.0; n]),
            region_label: vec![0; n],
        })
    }

    /// Uniform single-tissue phantom with every voxel labelled 1.
    pub fn uniform(width: usize, height: usize, pd: f64, t1: f64, t2: f64) -> Result<Self> {
        let mut map = Self::empty(width, height, false)?;
        map.pd.fill(pd);
        map.t1.fill(t1);
        map.t2.fill(t2);
        map.region_label.fill(1);
        map.check()?;
        Ok(map)
    }

    pub fn single_voxel(pd: f64, t1: f64, t2: f64) -> Result<Self> {
        Self::uniform(1, 1, pd, t1, t2)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        match channel {
            Channel::Pd => Some(&self.pd),
            Channel::T1 => Some(&self.t1),
            Channel::T2 => Some(&self.t2),
            Channel::OffResonance => Some(&self.off_resonance),
            Channel::Chi => self.chi.as_deref(),
        }
    }

    pub fn channel_mut(&mut self, channel: Channel) -> Option<&mut Vec<f64>> {
        match channel {
            Channel::Pd => Some(&mut self.pd),
            Channel::T1 => Some(&mut self.t1),
            Channel::T2 => Some(&mut self.t2),
            Channel::OffResonance => Some(&mut self.off_resonance),
            Channel::Chi => self.chi.as_mut(),
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.region_label.iter().filter(|&&l| l != 0).count();
        fg as f64 / self.len() as f64
    }

    /// Checks the hard invariants and returns soft warnings (currently only
    /// voxels where t2 exceeds t1), which are also logged.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.check()?;
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }

    fn check(&self) -> Result<Vec<String>> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::InvalidSize("phantom has zero voxels".into()));
        }
        let lens = [
            self.pd.len(),
            self.t1.len(),
            self.t2.len(),
            self.off_resonance.len(),
            self.region_label.len(),
            self.chi.as_ref().map_or(n, Vec::len),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Shape(format!(
                "channel lengths {lens:?} do not match {}x{}",
                self.width, self.height
            )));
        }
        for i in 0..n {
            if !(0.0..=1.0).contains(&self.pd[i]) {
                return Err(Error::InvalidRange(format!("pd[{i}] = {} outside [0, 1]", self.pd[i])));
            }
            if !(self.t1[i] >= 0.0 && self.t2[i] >= 0.0) {
                return Err(Error::InvalidRange(format!("negative relaxation at voxel {i}")));
            }
            if self.region_label[i] == 0 && self.pd[i] != 0.0 {
                return Err(Error::InvalidRange(format!(
                    "background voxel {i} has pd = {}",
                    self.pd[i]
                )));
            }
        }
        let violations = (0..n).filter(|&i| self.t2[i] > self.t1[i]).count();
        let mut warnings = Vec::new();
        if violations > 0 {
            warnings.push(format!("{violations} voxel(s) have t2 > t1"));
        }
        Ok(warnings)
    }
}

/// Closed interval `[lo, hi]` for one channel.
pub type Range = (f64, f64);

/// Per-channel value ranges for [`random_shapes_phantom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    pub pd: Range,
    pub t1: Range,
    pub t2: Range,
    pub off_resonance: Range,
    /// When present the phantom gets a susceptibility channel.
    pub chi: Option<Range>,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            pd: (0.0, 1.0),
            t1: (300.0, 2500.0),
            t2: (20.0, 700.0),
            off_resonance: (0.0, 0.0),
            chi: None,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let mut named = vec![
            ("pd", self.pd),
            ("t1", self.t1),
            ("t2", self.t2),
            ("off_resonance", self.off_resonance),
        ];
        if let Some(chi) = self.chi {
            named.push(("chi", chi));
        }
        for (name, (lo, hi)) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidRange(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if self.pd.0 < 0.0 || self.pd.1 > 1.0 {
            return Err(Error::InvalidRange(format!(
                "pd range [{}, {}] not within [0, 1]",
                self.pd.0, self.pd.1
            )));
        }
        if self.t1.0 < 0.0 || self.t2.0 < 0.0 {
            return Err(Error::InvalidRange("relaxation ranges must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle: f64,
    },
    Rectangle {
        cx: f64,
        cy: f64,
        hx: f64,
        hy: f64,
        angle: f64,
    },
    Triangle {
        v: [(f64, f64); 3],
    },
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (u, v) = to_local(px - cx, py - cy, angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rectangle { cx, cy, hx, hy, angle } => {
                let (u, v) = to_local(px - cx, py - cy, angle);
                u.abs() <= hx && v.abs() <= hy
            }
            Shape::Triangle { v } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let d0 = edge(v[0], v[1]);
                let d1 = edge(v[1], v[2]);
                let d2 = edge(v[2], v[0]);
                let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

fn to_local(dx: f64, dy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

fn draw(rng: &mut impl Rng, (lo, hi): Range) -> f64 {
    let u: f64 = rng.random();
    (lo + (hi - lo) * u).clamp(lo, hi)
}

/// Shape extent limits as fractions of the grid extent.
pub const SHAPE_SIZE_FRACTION: Range = (0.05, 0.40);

/// Rasterizes `n_shapes` random shapes onto an empty template.
///
/// Shapes are drawn from one seed-derived stream with a fixed number of
/// draws per shape, so the first `k` shapes of a larger template are exactly
/// the shapes of a `k`-shape template. Later shapes overwrite earlier ones.
pub fn random_shapes_phantom(
    width: usize,
    height: usize,
    n_shapes: usize,
    ranges: &ParamRanges,
    seed: u64,
) -> Result<PhantomMap> {
    ranges.validate()?;
    let mut map = PhantomMap::empty(width, height, ranges.chi.is_some())?;
    let mut rng = stream(seed, 0, Purpose::Shapes);
    let (w, h) = (width as f64, height as f64);

    for k in 0..n_shapes {
        let kind: f64 = rng.random();
        let cx = draw(&mut rng, (0.0, w));
        let cy = draw(&mut rng, (0.0, h));
        let sx = draw(&mut rng, SHAPE_SIZE_FRACTION) * w;
        let sy = draw(&mut rng, SHAPE_SIZE_FRACTION) * h;
        let angle = draw(&mut rng, (0.0, PI));
        let jitter: [f64; 3] = std::array::from_fn(|_| draw(&mut rng, (-0.3, 0.3)));
        let values = [
            draw(&mut rng, ranges.pd),
            draw(&mut rng, ranges.t1),
            draw(&mut rng, ranges.t2),
            draw(&mut rng, ranges.off_resonance),
            ranges.chi.map_or(0.0, |r| draw(&mut rng, r)),
        ];

        let shape = if kind < 1.0 / 3.0 {
            Shape::Ellipse {
                cx,
                cy,
                rx: sx / 2.0,
                ry: sy / 2.0,
                angle,
            }
        } else if kind < 2.0 / 3.0 {
            Shape::Rectangle {
                cx,
                cy,
                hx: sx / 2.0,
                hy: sy / 2.0,
                angle,
            }
        } else {
            let v = std::array::from_fn(|i| {
                let theta = angle + 2.0 * PI * i as f64 / 3.0 + jitter[i];
                (cx + 0.5 * sx * theta.cos(), cy + 0.5 * sy * theta.sin())
            });
            Shape::Triangle { v }
        };

        let label = u32::try_from(k + 1).unwrap_or(u32::MAX);
        for y in 0..height {
            for x in 0..width {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = y * width + x;
                    map.pd[i] = values[0];
                    map.t1[i] = values[1];
                    map.t2[i] = values[2];
                    map.off_resonance[i] = values[3];
                    if let Some(chi) = map.chi.as_mut() {
                        chi[i] = values[4];
                    }
                    map.region_label[i] = label;
                }
            }
        }
    }
    map.validate()?;
    Ok(map)
}

/// Unit tag of a [`FieldMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldUnits {
    /// Multiplier on the nominal flip angle (B1 scale).
    Unitless,
    Hz,
    Ppm,
}

/// Per-voxel imperfection field: B1 scale or a B0 offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub units: FieldUnits,
}

impl FieldMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, units: FieldUnits) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} field",
                values.len()
            )));
        }
        if units == FieldUnits::Unitless && values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidRange("B1 scale maps must be strictly positive".into()));
        }
        Ok(FieldMap {
            width,
            height,
            values,
            units,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64, units: FieldUnits) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], units)
    }
}

/// Normalized coordinate of sample `i` of `n` on [-1, 1].
fn norm_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Random bivariate polynomial of total degree `degree` on [-1, 1]²,
/// affinely rescaled so its extremes land exactly on `out_range`.
pub fn random_polynomial_field(
    width: usize,
    height: usize,
    degree: i64,
    out_range: Range,
    units: FieldUnits,
    seed: u64,
) -> Result<FieldMap> {
    if degree < 0 {
        return Err(Error::InvalidArgument(format!("negative degree {degree}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidSize(format!("field dimensions {width}x{height}")));
    }
    let (lo, hi) = out_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidRange(format!("output range [{lo}, {hi}]")));
    }
    let degree = degree as usize;
    let mut rng = stream(seed, 0, Purpose::Field);
    // (i, j, c) for c * x^i * y^j, ordered by total degree then by i.
    let mut terms = Vec::new();
    for total in 0..=degree {
        for i in (0..=total).rev() {
            let c = draw(&mut rng, (-1.0, 1.0));
            terms.push((i as i32, (total - i) as i32, c));
        }
    }

    let raw: Vec<f64> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (u, v) = (norm_coord(x, width), norm_coord(y, height));
            terms.iter().map(|&(i, j, c)| c * u.powi(i) * v.powi(j)).sum()
        })
        .collect();

    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        raw.iter()
            .map(|&r| {
                let t = (r - min) / (max - min);
                lo * (1.0 - t) + hi * t
            })
            .collect()
    } else {
        vec![(lo + hi) / 2.0; raw.len()]
    };
    FieldMap::new(width, height, values, units)
}

/// Modulates one channel inside the foreground by a zero-mean texture.
///
/// The texture is normalized to [-0.5, 0.5] and each foreground value `v`
/// becomes `v * (1 + strength * t)`, clamped to the channel bounds.
pub fn blend_texture(map: &PhantomMap, texture: &Grid2<f64>, channel: Channel, strength: f64) -> Result<PhantomMap> {
    texture.ensure_dims(map.width, map.height, "texture")?;
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("strength {strength} outside [0, 1]")));
    }
    let min = texture.data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = texture.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;

    let mut out = map.clone();
    let labels = &map.region_label;
    let values = out
        .channel_mut(channel)
        .ok_or_else(|| Error::InvalidArgument(format!("phantom has no {channel} channel")))?;
    let (blo, bhi) = channel.bounds();
    for (i, v) in values.iter_mut().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        let t = if span > 0.0 {
            (texture.data[i] - min) / span - 0.5
        } else {
            0.0
        };
        *v = (*v * (1.0 + strength * t)).clamp(blo, bhi);
    }
    Ok(out)
}

/// Multiplies one channel by `factor` inside `mask`, clamped to the channel
/// bounds.
pub fn widen_region(map: &PhantomMap, mask: &Grid2<bool>, channel: Channel, factor: f64) -> Result<PhantomMap> {
    mask.ensure_dims(map.width, map.height, "mask")?;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("factor {factor} must be positive")));
    }
    let mut out = map.clone();
    let values = out
        .channel_mut(channel)
        .ok_or_else(|| Error::InvalidArgument(format!("phantom has no {channel} channel")))?;
    let (blo, bhi) = channel.bounds();
    for (v, &m) in values.iter_mut().zip(&mask.data) {
        if m {
            *v = (*v * factor).clamp(blo, bhi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranges() -> ParamRanges {
        ParamRanges {
            chi: Some((-0.1, 0.1)),
            ..ParamRanges::default()
        }
    }

    #[test]
    fn zero_shapes_is_background() {
        let m = random_shapes_phantom(16, 12, 0, &ranges(), 1).unwrap();
        assert!(m.pd.iter().all(|&v| v == 0.0));
        assert!(m.t2.iter().all(|&v| v == 0.0));
        assert!(m.region_label.iter().all(|&l| l == 0));
    }

    #[test]
    fn foreground_values_within_ranges() {
        let m = random_shapes_phantom(64, 64, 40, &ranges(), 3).unwrap();
        assert!(m.foreground_fraction() > 0.0);
        for i in 0..m.len() {
            if m.region_label[i] != 0 {
                assert!((20.0..=700.0).contains(&m.t2[i]));
                assert!((0.0..=1.0).contains(&m.pd[i]));
            } else {
                assert_eq!(m.pd[i], 0.0);
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = random_shapes_phantom(32, 32, 20, &ranges(), 11).unwrap();
        let b = random_shapes_phantom(32, 32, 20, &ranges(), 11).unwrap();
        let c = random_shapes_phantom(32, 32, 20, &ranges(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bad_ranges_and_sizes() {
        let bad = ParamRanges {
            pd: (0.0, 1.5),
            ..ParamRanges::default()
        };
        assert!(matches!(
            random_shapes_phantom(8, 8, 1, &bad, 0),
            Err(Error::InvalidRange(_))
        ));
        assert!(matches!(
            random_shapes_phantom(0, 8, 1, &ParamRanges::default(), 0),
            Err(Error::InvalidSize(_))
        ));
    }

    #[test]
    fn foreground_monotone_in_shape_count() {
        let mut last = 0.0;
        for n in 0..30 {
            let f = random_shapes_phantom(32, 32, n, &ranges(), 5)
                .unwrap()
                .foreground_fraction();
            assert!(f >= last, "n={n}: {f} < {last}");
            last = f;
        }
    }

    #[test]
    fn t2_above_t1_warns() {
        let m = PhantomMap::uniform(2, 2, 1.0, 50.0, 80.0).unwrap();
        assert_eq!(m.validate().unwrap().len(), 1);
    }

    #[test]
    fn polynomial_degree_zero_is_midpoint() {
        let f = random_polynomial_field(8, 8, 0, (0.9, 1.1), FieldUnits::Unitless, 4).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn polynomial_hits_range_exactly() {
        let f = random_polynomial_field(32, 24, 3, (0.8, 1.2), FieldUnits::Unitless, 9).unwrap();
        let min = f.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = f.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 0.8);
        assert_eq!(max, 1.2);
        let g = random_polynomial_field(32, 24, 3, (0.8, 1.2), FieldUnits::Unitless, 9).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn polynomial_rejects_negative_degree() {
        assert!(matches!(
            random_polynomial_field(4, 4, -1, (0.8, 1.2), FieldUnits::Unitless, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(random_polynomial_field(4, 4, 2, (-1.0, 1.0), FieldUnits::Unitless, 0).is_err());
        assert!(random_polynomial_field(4, 4, 2, (-1.0, 1.0), FieldUnits::Hz, 0).is_ok());
    }

    #[test]
    fn texture_identity_cases() {
        let m = random_shapes_phantom(16, 16, 10, &ranges(), 2).unwrap();
        let tex = Grid2::from_fn(16, 16, |x, y| (x * y) as f64);
        assert_eq!(blend_texture(&m, &tex, Channel::T2, 0.0).unwrap(), m);
        let flat = Grid2::filled(16, 16, 3.0);
        assert_eq!(blend_texture(&m, &flat, Channel::T2, 1.0).unwrap(), m);
    }

    #[test]
    fn checkerboard_blend_preserves_mean() {
        let m = PhantomMap::uniform(8, 8, 1.0, 1000.0, 100.0).unwrap();
        let tex = Grid2::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
        let out = blend_texture(&m, &tex, Channel::T2, 1.0).unwrap();
        let mut distinct: Vec<f64> = out.t2.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct, vec![50.0, 150.0]);
        let mean = out.t2.iter().sum::<f64>() / out.t2.len() as f64;
        assert!((mean - 100.0).abs() <= 1.0);
        assert_eq!(out.pd, m.pd);
        assert_eq!(out.t1, m.t1);
    }

    #[test]
    fn texture_errors() {
        let m = PhantomMap::uniform(4, 4, 1.0, 1000.0, 100.0).unwrap();
        let tex = Grid2::filled(3, 4, 0.0);
        assert!(matches!(
            blend_texture(&m, &tex, Channel::T2, 0.5),
            Err(Error::Shape(_))
        ));
        let tex = Grid2::filled(4, 4, 0.0);
        assert!(matches!(
            blend_texture(&m, &tex, Channel::Chi, 0.5),
            Err(Error::InvalidArgument(_))
        ));
        assert!("t3".parse::<Channel>().is_err());
    }

    #[test]
    fn widen_region_pointwise() {
        let m = random_shapes_phantom(16, 16, 12, &ranges(), 8).unwrap();
        let mask = Grid2::from_fn(16, 16, |x, y| x < 8 && y > 4);
        let w = widen_region(&m, &mask, Channel::Chi, 3.0).unwrap();
        let (a, b) = (m.chi.as_ref().unwrap(), w.chi.as_ref().unwrap());
        for i in 0..m.len() {
            if mask.data[i] {
                assert_eq!(b[i], a[i] * 3.0);
            } else {
                assert_eq!(b[i].to_bits(), a[i].to_bits());
            }
        }
        assert_eq!(w.t2, m.t2);
        assert_eq!(widen_region(&m, &mask, Channel::T1, 1.0).unwrap(), m);
        let back = widen_region(
            &widen_region(&m, &mask, Channel::T1, 2.0).unwrap(),
            &mask,
            Channel::T1,
            0.5,
        )
        .unwrap();
        for (x, y) in back.t1.iter().zip(&m.t1) {
            assert!((x - y).abs() <= 4.0 * f64::EPSILON * y.abs());
        }
        assert!(widen_region(&m, &mask, Channel::T1, 0.0).is_err());
    }
}
