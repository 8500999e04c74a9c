//! Day-long traffic movies over a [`GroundTruth`] road layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::city::{CitySpec, GroundTruth, Regime, RoadClass};
use crate::data::movie::{Direction, Movie, EVENT_CHANNEL, FRAMES_PER_DAY, RAW_CHANNELS};

const MORNING_HOUR: f64 = 8.0;
const MORNING_WIDTH: f64 = 1.2;
const MORNING_PEAK: f64 = 0.85;
const EVENING_HOUR: f64 = 17.5;
const EVENING_WIDTH: f64 = 1.5;
const EVENING_PEAK: f64 = 0.75;
const NIGHT_LEVEL: f64 = 0.15;
/// Fraction of free-flow speed lost at full congestion.
const CONGESTION_SLOWDOWN: f64 = 0.45;
const INCIDENT_SLOWDOWN: f64 = 0.4;

/// Demand level at frame `t`: a night floor plus two rush-hour bumps.
pub fn diurnal_profile(t: usize, peak_factor: f64) -> f64 {
    let hour = t as f64 * 5.0 / 60.0;
    let bump = |center: f64, width: f64| (-(hour - center).powi(2) / (2.0 * width * width)).exp();
    NIGHT_LEVEL
        + peak_factor * (MORNING_PEAK * bump(MORNING_HOUR, MORNING_WIDTH) + EVENING_PEAK * bump(EVENING_HOUR, EVENING_WIDTH))
}

/// SplitMix64 step; derives independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn day_seed(seed: u64, day_index: i32) -> u64 {
    mix(mix(seed) ^ (day_index as i64 as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Per-pixel levels that stay fixed across days of one city.
struct PixelLevels {
    volume: Vec<f64>,
    speed: Vec<f64>,
}

fn pixel_levels(gt: &GroundTruth, seed: u64) -> PixelLevels {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5EED_C17F));
    let n = gt.height * gt.width;
    let mut volume = vec![0.0; n];
    let mut speed = vec![0.0; n];
    for p in 0..n {
        let (v, s) = match gt.class[p] {
            RoadClass::Arterial => (rng.gen_range(110.0..170.0), rng.gen_range(150.0..200.0)),
            RoadClass::Side => (rng.gen_range(40.0..90.0), rng.gen_range(80.0..130.0)),
            RoadClass::None => (0.0, 0.0),
        };
        volume[p] = v;
        speed[p] = s;
    }
    PixelLevels { volume, speed }
}

struct Incident {
    y: usize,
    x: usize,
    radius: usize,
    start: usize,
    end: usize,
    level: u8,
}

fn quantize(v: f64, min: f64) -> u8 {
    v.round().clamp(min, 255.0) as u8
}

/// Simulates one day of `spec.regime` traffic. Deterministic in
/// `(spec.seed, day_index)`; off-road cells stay zero in every traffic
/// channel.
pub fn simulate_day(gt: &GroundTruth, spec: &CitySpec, day_index: i32) -> Movie {
    let (h, w) = (gt.height, gt.width);
    let levels = pixel_levels(gt, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(day_seed(spec.seed, day_index));
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).expect("finite noise level");

    let shift = match spec.regime {
        Regime::FirstHalf => super::city::RegimeShift::NONE,
        Regime::SecondHalf => spec.shift,
    };
    let day_factor = 1.0 + 0.08 * (rng.gen::<f64>() * 2.0 - 1.0);

    let road: Vec<usize> = (0..h * w).filter(|&p| gt.on_road(p)).collect();
    let n_incidents = rng.gen_range(1..=4);
    let incidents: Vec<Incident> = (0..n_incidents)
        .map(|_| {
            let p = road[rng.gen_range(0..road.len())];
            let start = rng.gen_range(0..FRAMES_PER_DAY - 6);
            let len = rng.gen_range(6..=24);
            Incident {
                y: p / w,
                x: p % w,
                radius: rng.gen_range(1..=3),
                start,
                end: (start + len).min(FRAMES_PER_DAY),
                level: rng.gen_range(1..=4),
            }
        })
        .collect();

    let mut movie = Movie::zeros(spec.name.clone(), day_index, [FRAMES_PER_DAY, h, w, RAW_CHANNELS]);
    let mut slowdown = vec![1.0f64; h * w];
    let mut event = vec![0u8; h * w];
    for t in 0..FRAMES_PER_DAY {
        let demand = diurnal_profile(t, shift.peak_factor) * day_factor;
        let congestion = demand.min(1.0);
        slowdown.fill(1.0);
        event.fill(0);
        for inc in incidents.iter().filter(|i| (i.start..i.end).contains(&t)) {
            let (y0, y1) = (inc.y.saturating_sub(inc.radius), (inc.y + inc.radius).min(h - 1));
            let (x0, x1) = (inc.x.saturating_sub(inc.radius), (inc.x + inc.radius).min(w - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    if gt.on_road(p) {
                        slowdown[p] = INCIDENT_SLOWDOWN;
                        event[p] = event[p].max(inc.level * 60);
                    }
                }
            }
        }
        let frame = movie.frame_mut(t);
        for &p in &road {
            let cell = &mut frame[p * RAW_CHANNELS..(p + 1) * RAW_CHANNELS];
            for d in Direction::ALL {
                if gt.directions[d.index()][p] == 0 {
                    continue;
                }
                let vol = levels.volume[p] * demand + shift.volume_offset + noise.sample(&mut rng);
                let spd = levels.speed[p] * (1.0 - CONGESTION_SLOWDOWN * congestion) * shift.speed_factor * slowdown[p]
                    + noise.sample(&mut rng);
                cell[d.volume_channel()] = quantize(vol, 1.0);
                cell[d.speed_channel()] = quantize(spd, 1.0);
            }
            cell[EVENT_CHANNEL] = event[p];
        }
    }
    movie
}

/// Mean on-road speed over every direction and frame of a movie.
pub fn mean_road_speed(gt: &GroundTruth, movie: &Movie) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 0..movie.frames() {
        let frame = movie.frame(t);
        for p in 0..gt.height * gt.width {
            for d in Direction::ALL {
                if gt.directions[d.index()][p] != 0 {
                    sum += frame[p * RAW_CHANNELS + d.speed_channel()] as f64;
                    n += 1;
                }
            }
        }
    }
    sum / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::super::city::{build_city, RegimeShift};
    use super::*;

    fn spec() -> CitySpec {
        CitySpec { seed: 11, height: 40, width: 36, ..CitySpec::default() }
    }

    #[test]
    fn off_road_traffic_channels_are_zero() {
        let s = spec();
        let gt = build_city(&s).unwrap();
        let m = simulate_day(&gt, &s, 3);
        assert_eq!(m.dims(), [288, 40, 36, 9]);
        for t in 0..m.frames() {
            for y in 0..40 {
                for x in 0..36 {
                    let p = y * 36 + x;
                    for d in Direction::ALL {
                        if gt.raster(d)[p] == 0 {
                            assert_eq!(m.get(t, y, x, d.volume_channel()), 0);
                            assert_eq!(m.get(t, y, x, d.speed_channel()), 0);
                        } else {
                            assert!(m.get(t, y, x, d.speed_channel()) > 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn morning_rush_exceeds_night() {
        let s = spec();
        let gt = build_city(&s).unwrap();
        let m = simulate_day(&gt, &s, 0);
        let mean_volume = |frames: std::ops::Range<usize>| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for t in frames {
                for p in 0..40 * 36 {
                    for d in Direction::ALL {
                        if gt.raster(d)[p] != 0 {
                            sum += m.frame(t)[p * 9 + d.volume_channel()] as f64;
                            n += 1.0;
                        }
                    }
                }
            }
            sum / n
        };
        // profile integral oracle: demand at 08:00 vs 02:00
        assert!(diurnal_profile(96, 1.0) > 4.0 * diurnal_profile(24, 1.0));
        assert!(mean_volume(96..108) > mean_volume(24..36));
    }

    #[test]
    fn same_day_is_bitwise_identical() {
        let s = spec();
        let gt = build_city(&s).unwrap();
        assert_eq!(simulate_day(&gt, &s, 5), simulate_day(&gt, &s, 5));
        assert_ne!(simulate_day(&gt, &s, 5), simulate_day(&gt, &s, 6));
    }

    #[test]
    fn events_mark_incidents() {
        let s = spec();
        let gt = build_city(&s).unwrap();
        let m = simulate_day(&gt, &s, 1);
        let marked = (0..m.frames())
            .flat_map(|t| (0..40 * 36).map(move |p| (t, p)))
            .filter(|&(t, p)| m.frame(t)[p * 9 + EVENT_CHANNEL] > 0)
            .count();
        assert!(marked > 0);
    }

    #[test]
    fn second_half_speed_tracks_shift() {
        let first = spec();
        let second = CitySpec { regime: Regime::SecondHalf, ..spec() };
        let gt = build_city(&first).unwrap();
        let a = mean_road_speed(&gt, &simulate_day(&gt, &first, 0));
        let b = mean_road_speed(&gt, &simulate_day(&gt, &second, 0));
        let ratio = b / a;
        assert!((ratio / RegimeShift::default().speed_factor - 1.0).abs() < 0.1, "ratio {}", ratio);
    }
}
