//! Road geometry of a synthetic city: a grid of two-way arterials with side
//! streets hanging off them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::movie::Direction;
use crate::data::sample::StaticMap;
use crate::error::{Error, Result};

/// Which half of the year a day belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    FirstHalf,
    SecondHalf,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FirstHalf => "first_half",
            Regime::SecondHalf => "second_half",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "first_half" => Some(Regime::FirstHalf),
            "second_half" => Some(Regime::SecondHalf),
            _ => None,
        }
    }
}

/// Distribution gap applied to second-half days.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeShift {
    /// Multiplies every on-road speed.
    pub speed_factor: f64,
    /// Added to every on-road volume, in raw units.
    pub volume_offset: f64,
    /// Multiplies the rush-hour peak amplitudes.
    pub peak_factor: f64,
}

impl RegimeShift {
    pub const NONE: RegimeShift = RegimeShift { speed_factor: 1.0, volume_offset: 0.0, peak_factor: 1.0 };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

impl Default for RegimeShift {
    fn default() -> Self {
        Self { speed_factor: 0.7, volume_offset: 20.0, peak_factor: 1.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CitySpec {
    pub name: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Target fraction of pixels covered by road.
    pub road_density: f64,
    /// Arterials per axis.
    pub n_arterials: usize,
    pub regime: Regime,
    /// Standard deviation of per-cell noise, raw units.
    pub noise_level: f64,
    pub shift: RegimeShift,
}

impl CitySpec {
    /// Rejects specs that cannot produce a road network.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if h < 32 || w < 32 {
            return Err(Error::DegenerateSpec(format!("city {}x{} is smaller than 32x32", h, w)));
        }
        if !(self.road_density > 0.0 && self.road_density < 1.0) {
            return Err(Error::DegenerateSpec(format!("road density {} outside (0, 1)", self.road_density)));
        }
        if self.n_arterials == 0 {
            return Err(Error::DegenerateSpec("zero roads: side streets need at least one arterial".into()));
        }
        Ok(())
    }
}

impl Default for CitySpec {
    fn default() -> Self {
        Self {
            name: "synthville".into(),
            seed: 0,
            height: 128,
            width: 128,
            road_density: 0.2,
            n_arterials: 3,
            regime: Regime::FirstHalf,
            noise_level: 6.0,
            shift: RegimeShift::default(),
        }
    }
}

/// Kind of road under a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoadClass {
    None = 0,
    Side = 1,
    Arterial = 2,
}

/// Road rasters produced by [`build_city`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    /// Per direction, 1 where traffic heading that way can occur.
    pub directions: [Vec<u8>; 4],
    /// 1 where a horizontal and a vertical road cross.
    pub intersections: Vec<u8>,
    pub class: Vec<RoadClass>,
}

impl GroundTruth {
    pub fn raster(&self, d: Direction) -> &[u8] {
        &self.directions[d.index()]
    }

    pub fn on_road(&self, p: usize) -> bool {
        self.directions.iter().any(|r| r[p] != 0)
    }

    pub fn road_pixels(&self) -> usize {
        (0..self.height * self.width).filter(|&p| self.on_road(p)).count()
    }

    pub fn static_map(&self) -> StaticMap {
        StaticMap::new(self.height, self.width, self.intersections.clone()).expect("binary raster")
    }

    /// Flat serialization used for determinism comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.directions {
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&self.intersections);
        out.extend(self.class.iter().map(|&c| c as u8));
        out
    }
}

// Horizontal roads: eastbound traffic heads NE, westbound SW.
// Vertical roads: northbound traffic heads NW, southbound SE.
const EAST: Direction = Direction::NorthEast;
const WEST: Direction = Direction::SouthWest;
const NORTH: Direction = Direction::NorthWest;
const SOUTH: Direction = Direction::SouthEast;

struct Canvas {
    h: usize,
    w: usize,
    directions: [Vec<u8>; 4],
    horizontal: Vec<bool>,
    vertical: Vec<bool>,
    class: Vec<RoadClass>,
}

impl Canvas {
    fn paint(&mut self, p: usize, dirs: &[Direction], horizontal: bool, class: RoadClass) {
        for d in dirs {
            self.directions[d.index()][p] = 1;
        }
        if horizontal {
            self.horizontal[p] = true;
        } else {
            self.vertical[p] = true;
        }
        if class as u8 > self.class[p] as u8 {
            self.class[p] = class;
        }
    }

    fn covered(&self) -> usize {
        self.class.iter().filter(|&&c| c != RoadClass::None).count()
    }
}

fn arterial_positions(rng: &mut ChaCha8Rng, extent: usize, n: usize) -> Vec<usize> {
    let spacing = extent as f64 / (n + 1) as f64;
    let jitter = (spacing / 4.0).floor() as i64;
    let mut out: Vec<usize> = (1..=n)
        .map(|i| {
            let j = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
            ((i as f64 * spacing).round() as i64 + j).clamp(1, extent as i64 - 2) as usize
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Lays out arterials and side streets deterministically from `spec.seed`.
///
/// Side streets always end on an arterial, so the road network is connected.
pub fn build_city(spec: &CitySpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut c = Canvas {
        h,
        w,
        directions: std::array::from_fn(|_| vec![0; h * w]),
        horizontal: vec![false; h * w],
        vertical: vec![false; h * w],
        class: vec![RoadClass::None; h * w],
    };

    let rows = arterial_positions(&mut rng, h, spec.n_arterials);
    let cols = arterial_positions(&mut rng, w, spec.n_arterials);
    for &r in &rows {
        for x in 0..w {
            c.paint(r * w + x, &[EAST, WEST], true, RoadClass::Arterial);
        }
    }
    for &col in &cols {
        for y in 0..h {
            c.paint(y * w + col, &[NORTH, SOUTH], false, RoadClass::Arterial);
        }
    }

    // Each side street spans between consecutive anchors on the crossing
    // axis; at least one anchor of every pair is an arterial.
    let anchors = |arts: &[usize], extent: usize| -> Vec<(usize, usize)> {
        let mut pts = vec![0];
        pts.extend_from_slice(arts);
        pts.push(extent - 1);
        pts.dedup();
        pts.windows(2).map(|p| (p[0], p[1])).collect()
    };
    let h_spans = anchors(&cols, w);
    let v_spans = anchors(&rows, h);
    let target = (spec.road_density * (h * w) as f64).ceil() as usize;
    let mut attempts = 0;
    while c.covered() < target && attempts < 20 * (h + w) {
        attempts += 1;
        let horizontal = rng.gen_bool(0.5);
        let one_way = rng.gen_bool(0.3);
        let forward = rng.gen_bool(0.5);
        if horizontal {
            let r = rng.gen_range(1..h - 1);
            if rows.iter().any(|&a| a.abs_diff(r) < 2) {
                continue;
            }
            let (a, b) = h_spans[rng.gen_range(0..h_spans.len())];
            let dirs: &[Direction] = match (one_way, forward) {
                (false, _) => &[EAST, WEST],
                (true, true) => &[EAST],
                (true, false) => &[WEST],
            };
            for x in a..=b {
                c.paint(r * w + x, dirs, true, RoadClass::Side);
            }
        } else {
            let col = rng.gen_range(1..w - 1);
            if cols.iter().any(|&a| a.abs_diff(col) < 2) {
                continue;
            }
            let (a, b) = v_spans[rng.gen_range(0..v_spans.len())];
            let dirs: &[Direction] = match (one_way, forward) {
                (false, _) => &[NORTH, SOUTH],
                (true, true) => &[NORTH],
                (true, false) => &[SOUTH],
            };
            for y in a..=b {
                c.paint(y * w + col, dirs, false, RoadClass::Side);
            }
        }
    }

    if c.covered() == 0 {
        return Err(Error::DegenerateSpec("zero roads".into()));
    }
    let intersections = c.horizontal.iter().zip(&c.vertical).map(|(&a, &b)| u8::from(a && b)).collect();
    Ok(GroundTruth { height: c.h, width: c.w, directions: c.directions, intersections, class: c.class })
}
