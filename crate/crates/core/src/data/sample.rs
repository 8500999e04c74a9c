//! Sliding-window samples: twelve input frames stacked into channels plus
//! the static intersection map, and six target frames at irregular offsets.

use super::movie::{Movie, BIN_MINUTES, RAW_CHANNELS, TRAFFIC_CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INPUT_FRAMES: usize = 12;
pub const OUTPUT_FRAMES: usize = 6;
pub const STATIC_CHANNELS: usize = 1;
/// Lead times of the predicted frames.
pub const HORIZON_MINUTES: [u32; OUTPUT_FRAMES] = [5, 10, 15, 30, 45, 60];
pub const INPUT_CHANNELS: usize = INPUT_FRAMES * RAW_CHANNELS + STATIC_CHANNELS;
pub const OUTPUT_CHANNELS: usize = OUTPUT_FRAMES * TRAFFIC_CHANNELS;

/// Frames after the last input frame at which targets are taken.
pub fn output_offsets() -> [usize; OUTPUT_FRAMES] {
    HORIZON_MINUTES.map(|m| (m / BIN_MINUTES) as usize)
}

/// Frames spanned by one sample window.
pub fn window_len() -> usize {
    INPUT_FRAMES + output_offsets()[OUTPUT_FRAMES - 1]
}

/// Number of windows in a movie of `frames` frames.
pub fn sample_count(frames: usize) -> Result<usize> {
    let need = window_len();
    if frames < need {
        return Err(Error::MovieTooShort { frames, required: need });
    }
    Ok(frames - need + 1)
}

/// Absolute frame indices of the targets for a window starting at `start`.
pub fn target_frames(start: usize) -> [usize; OUTPUT_FRAMES] {
    output_offsets().map(|o| start + INPUT_FRAMES - 1 + o)
}

pub fn normalize_value<S: Scalar>(v: u8) -> S {
    S::from_f64_lossy(v as f64 / 255.0)
}

/// Maps raw bytes onto `[0, 1]` by dividing by 255.
pub fn normalize<S: Scalar>(shape: impl Into<Vec<usize>>, raw: &[u8]) -> Result<Tensor<S>> {
    Tensor::new(shape, raw.iter().map(|&v| normalize_value(v)).collect())
}

/// Binary road-intersection map of a city.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticMap {
    h: usize,
    w: usize,
    cells: Vec<u8>,
}

impl StaticMap {
    pub fn new(h: usize, w: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != h * w {
            return Err(Error::InvalidShape { shape: vec![h, w], reason: format!("{} cells", cells.len()) });
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::Malformed("static map values must be 0 or 1".into()));
        }
        Ok(Self { h, w, cells })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, cells: vec![0; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }
}

/// Where a sample was cut from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Origin {
    pub city: String,
    pub day_index: i32,
    pub start: usize,
}

#[derive(Clone, Debug)]
pub struct Sample<S> {
    /// `[INPUT_CHANNELS, H, W]`, channel `t * 9 + c` then the static channel.
    pub input: Tensor<S>,
    /// `[OUTPUT_CHANNELS, H, W]`, channel `slot * 8 + c`.
    pub target: Tensor<S>,
    pub origin: Origin,
}

/// Writes the normalized input planes of window `start` into `dst`
/// (`INPUT_CHANNELS * H * W` values).
pub fn fill_input<S: Scalar>(movie: &Movie, static_map: &StaticMap, start: usize, dst: &mut [S]) {
    let (h, w, c) = (movie.height(), movie.width(), movie.channels());
    let plane = h * w;
    for k in 0..INPUT_FRAMES {
        let frame = movie.frame(start + k);
        for ch in 0..RAW_CHANNELS {
            let out = &mut dst[(k * RAW_CHANNELS + ch) * plane..(k * RAW_CHANNELS + ch + 1) * plane];
            for (p, slot) in out.iter_mut().enumerate() {
                *slot = normalize_value(frame[p * c + ch]);
            }
        }
    }
    let out = &mut dst[INPUT_FRAMES * RAW_CHANNELS * plane..INPUT_CHANNELS * plane];
    for (slot, &v) in out.iter_mut().zip(static_map.cells()) {
        *slot = S::from_f64_lossy(v as f64);
    }
}

/// Writes the normalized target planes of window `start` into `dst`
/// (`OUTPUT_CHANNELS * H * W` values).
pub fn fill_target<S: Scalar>(movie: &Movie, start: usize, dst: &mut [S]) {
    let (h, w, c) = (movie.height(), movie.width(), movie.channels());
    let plane = h * w;
    for (slot, t) in target_frames(start).into_iter().enumerate() {
        let frame = movie.frame(t);
        for ch in 0..TRAFFIC_CHANNELS {
            let out = &mut dst[(slot * TRAFFIC_CHANNELS + ch) * plane..(slot * TRAFFIC_CHANNELS + ch + 1) * plane];
            for (p, v) in out.iter_mut().enumerate() {
                *v = normalize_value(frame[p * c + ch]);
            }
        }
    }
}

fn check_compatible(movie: &Movie, static_map: &StaticMap) -> Result<()> {
    if movie.channels() != RAW_CHANNELS {
        return Err(Error::InvalidShape {
            shape: movie.dims().to_vec(),
            reason: format!("movies carry {} channels", RAW_CHANNELS),
        });
    }
    if (movie.height(), movie.width()) != (static_map.height(), static_map.width()) {
        return Err(Error::shape(
            "extract_samples",
            format!(
                "movie {}x{} vs static map {}x{}",
                movie.height(),
                movie.width(),
                static_map.height(),
                static_map.width()
            ),
        ));
    }
    Ok(())
}

pub fn build_sample<S: Scalar>(movie: &Movie, static_map: &StaticMap, start: usize) -> Result<Sample<S>> {
    check_compatible(movie, static_map)?;
    let count = sample_count(movie.frames())?;
    if start >= count {
        return Err(Error::shape("build_sample", format!("start {} beyond last window {}", start, count - 1)));
    }
    let (h, w) = (movie.height(), movie.width());
    let mut input = vec![S::zero(); INPUT_CHANNELS * h * w];
    let mut target = vec![S::zero(); OUTPUT_CHANNELS * h * w];
    fill_input(movie, static_map, start, &mut input);
    fill_target(movie, start, &mut target);
    Ok(Sample {
        input: Tensor::new(vec![INPUT_CHANNELS, h, w], input)?,
        target: Tensor::new(vec![OUTPUT_CHANNELS, h, w], target)?,
        origin: Origin { city: movie.city().to_string(), day_index: movie.day_index(), start },
    })
}

/// Every window of the movie, in start order.
pub fn extract_samples<S: Scalar>(movie: &Movie, static_map: &StaticMap) -> Result<Vec<Sample<S>>> {
    check_compatible(movie, static_map)?;
    let count = sample_count(movie.frames())?;
    (0..count).map(|t| build_sample(movie, static_map, t)).collect()
}
