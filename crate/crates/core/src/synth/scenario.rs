//! Multi-day scenarios written to disk with a tab-separated manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::city::{build_city, CitySpec, GroundTruth, Regime};
use super::traffic::simulate_day;
use crate::binfmt::write_file;
use crate::data::movie::Movie;
use crate::data::sample::StaticMap;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STATIC_FILE: &str = "static.gfmv";
/// Day index of the first second-half day.
pub const SECOND_HALF_START: i32 = 182;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub day_index: i32,
    pub regime: Regime,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    /// `key = value` pairs echoed as `#` comment lines.
    pub params: Vec<(String, String)>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn count(&self, regime: Regime) -> usize {
        self.entries.iter().filter(|e| e.regime == regime).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.params {
            let _ = writeln!(out, "# {} = {}", k, v);
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.file, e.day_index, e.regime.as_str());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    m.params.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let bad = || Error::Malformed(format!("manifest line {}: {:?}", lineno + 1, line));
            let mut fields = line.split('\t');
            let (Some(file), Some(day), Some(regime), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            m.entries.push(ManifestEntry {
                file: file.to_string(),
                day_index: day.parse().map_err(|_| bad())?,
                regime: Regime::parse(regime).ok_or_else(bad)?,
            });
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }
}

pub fn scenario_params(spec: &CitySpec, n_first: usize, n_second: usize) -> Vec<(String, String)> {
    vec![
        ("city".into(), spec.name.clone()),
        ("seed".into(), spec.seed.to_string()),
        ("height".into(), spec.height.to_string()),
        ("width".into(), spec.width.to_string()),
        ("road_density".into(), spec.road_density.to_string()),
        ("n_arterials".into(), spec.n_arterials.to_string()),
        ("noise_level".into(), spec.noise_level.to_string()),
        ("speed_factor".into(), spec.shift.speed_factor.to_string()),
        ("volume_offset".into(), spec.shift.volume_offset.to_string()),
        ("peak_factor".into(), spec.shift.peak_factor.to_string()),
        ("days_first_half".into(), n_first.to_string()),
        ("days_second_half".into(), n_second.to_string()),
    ]
}

/// Day indices of a scenario: first-half days count from 0, second-half
/// days from [`SECOND_HALF_START`].
pub fn scenario_days(n_first: usize, n_second: usize) -> Vec<(i32, Regime)> {
    (0..n_first as i32)
        .map(|d| (d, Regime::FirstHalf))
        .chain((0..n_second as i32).map(|d| (SECOND_HALF_START + d, Regime::SecondHalf)))
        .collect()
}

/// Simulates every day of a scenario in memory.
pub fn simulate_scenario(spec: &CitySpec, n_first: usize, n_second: usize) -> Result<(GroundTruth, Vec<(Movie, Regime)>)> {
    if n_first == 0 || n_second == 0 {
        return Err(Error::InvalidConfig("scenarios need at least one day of each regime".into()));
    }
    let gt = build_city(spec)?;
    let movies = scenario_days(n_first, n_second)
        .into_iter()
        .map(|(day, regime)| {
            let s = CitySpec { regime, ..spec.clone() };
            (simulate_day(&gt, &s, day), regime)
        })
        .collect();
    Ok((gt, movies))
}

/// Writes `day_XXX.gfmv` per day, the intersection map as a one-frame
/// single-channel movie and the manifest.
pub fn generate_scenario(spec: &CitySpec, n_first: usize, n_second: usize, out_dir: &Path) -> Result<Manifest> {
    let (gt, movies) = simulate_scenario(spec, n_first, n_second)?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest { params: scenario_params(spec, n_first, n_second), entries: Vec::new() };
    for (movie, regime) in &movies {
        let file = format!("day_{:03}.gfmv", movie.day_index());
        movie.write(&out_dir.join(&file))?;
        manifest.entries.push(ManifestEntry { file, day_index: movie.day_index(), regime: *regime });
    }
    write_static_map(&out_dir.join(STATIC_FILE), &spec.name, &gt.static_map())?;
    write_file(&out_dir.join(MANIFEST_FILE), manifest.render().as_bytes())?;
    Ok(manifest)
}

pub fn write_static_map(path: &Path, city: &str, map: &StaticMap) -> Result<()> {
    Movie::new(city, -1, [1, map.height(), map.width(), 1], map.cells().to_vec())?.write(path)
}

pub fn read_static_map(path: &Path) -> Result<StaticMap> {
    let m = Movie::read(path)?;
    if m.frames() != 1 || m.channels() != 1 {
        return Err(Error::Malformed(format!("static map file has dims {:?}", m.dims())));
    }
    StaticMap::new(m.height(), m.width(), m.data().to_vec())
}

/// A scenario loaded back from disk.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub manifest: Manifest,
    pub static_map: StaticMap,
    pub movies: Vec<(Movie, Regime)>,
}

pub fn load_scenario(dir: &Path) -> Result<LoadedScenario> {
    let manifest = Manifest::read(dir)?;
    let static_map = read_static_map(&dir.join(STATIC_FILE))?;
    let movies = manifest
        .entries
        .iter()
        .map(|e| Ok((Movie::read(&dir.join(&e.file))?, e.regime)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedScenario { manifest, static_map, movies })
}

pub fn movie_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.file)
}
