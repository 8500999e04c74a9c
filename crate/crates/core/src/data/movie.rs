//! One day of traffic frames for one city and its `GFMV` container.
//!
//! ```text
//! magic "GFMV" | version u16 | T u32 | H u32 | W u32 | C u32
//! city_len u16 | city (UTF-8) | day_index i32
//! T*H*W*C bytes, t-major, row-major, channel-last
//! ```

use std::fs;
use std::path::Path;

use crate::binfmt::{extent_u32, put_string, write_file, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GFMV";
pub const VERSION: u16 = 1;

/// Minutes covered by one frame.
pub const BIN_MINUTES: u32 = 5;
/// Frames in one day at [`BIN_MINUTES`] resolution.
pub const FRAMES_PER_DAY: usize = 288;
/// Raw channels: four (volume, speed) direction pairs plus the event level.
pub const RAW_CHANNELS: usize = 9;
/// Predicted channels: the eight traffic channels.
pub const TRAFFIC_CHANNELS: usize = 8;
pub const EVENT_CHANNEL: usize = 8;

/// Heading quadrant of a volume/speed channel pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    NorthEast = 0,
    NorthWest = 1,
    SouthEast = 2,
    SouthWest = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::NorthEast, Direction::NorthWest, Direction::SouthEast, Direction::SouthWest];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn volume_channel(self) -> usize {
        2 * self.index()
    }

    pub fn speed_channel(self) -> usize {
        2 * self.index() + 1
    }

    /// Direction owning a traffic channel (`0..8`).
    pub fn of_channel(channel: usize) -> Option<Direction> {
        Self::ALL.get(channel / 2).copied().filter(|_| channel < TRAFFIC_CHANNELS)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Movie {
    city: String,
    day_index: i32,
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    frames: Vec<u8>,
}

impl Movie {
    pub fn new(city: impl Into<String>, day_index: i32, dims: [usize; 4], frames: Vec<u8>) -> Result<Self> {
        let [t, h, w, c] = dims;
        let count = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::ExtentOverflow(format!("movie extents {:?}", dims)))?;
        if count != frames.len() {
            return Err(Error::InvalidShape {
                shape: dims.to_vec(),
                reason: format!("frame buffer has {} bytes", frames.len()),
            });
        }
        Ok(Self { city: city.into(), day_index, t, h, w, c, frames })
    }

    pub fn zeros(city: impl Into<String>, day_index: i32, dims: [usize; 4]) -> Self {
        let n = dims.iter().product();
        Self::new(city, day_index, dims, vec![0; n]).expect("sized buffer")
    }

    pub fn city(&self) -> &str {
        &self.city
    }

    pub fn day_index(&self) -> i32 {
        self.day_index
    }

    pub fn bin_minutes(&self) -> u32 {
        BIN_MINUTES
    }

    pub fn frames(&self) -> usize {
        self.t
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    pub fn data(&self) -> &[u8] {
        &self.frames
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.frames
    }

    /// `H*W*C` bytes of frame `t`.
    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.h * self.w * self.c;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.h * self.w * self.c;
        &mut self.frames[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, y: usize, x: usize, ch: usize) -> u8 {
        self.frames[((t * self.h + y) * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, t: usize, y: usize, x: usize, ch: usize, v: u8) {
        self.frames[((t * self.h + y) * self.w + x) * self.c + ch] = v;
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.city.len() + self.frames.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (v, name) in [(self.t, "T"), (self.h, "H"), (self.w, "W"), (self.c, "C")] {
            out.extend_from_slice(&extent_u32(v, name)?.to_le_bytes());
        }
        put_string(&mut out, &self.city)?;
        out.extend_from_slice(&self.day_index.to_le_bytes());
        out.extend_from_slice(&self.frames);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { format: "GFMV", version });
        }
        let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let city = r.string()?;
        let day_index = r.i32()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::ExtentOverflow(format!("movie extents {:?}", dims)))?;
        let frames = r.take(count)?.to_vec();
        r.finish()?;
        Self::new(city, day_index, dims, frames)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
