//! Per-direction road masks derived from where traffic has been observed,
//! applied multiplicatively to predictions.
//!
//! Mask file (`GFMK`):
//!
//! ```text
//! magic "GFMK" | version u16 | H u32 | W u32 | city_len u16 | city (UTF-8)
//! 4 planes, each ceil(H*W / 8) bytes, row-major, LSB-first
//! ```

use std::fs;
use std::path::Path;

use crate::binfmt::{extent_u32, put_string, write_file, ByteReader};
use crate::data::movie::{Direction, Movie, TRAFFIC_CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GFMK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoadMasks {
    pub city: String,
    pub height: usize,
    pub width: usize,
    /// Indexed by [`Direction::index`]; values are 0 or 1.
    pub masks: [Vec<u8>; 4],
}

impl RoadMasks {
    pub fn filled(city: impl Into<String>, height: usize, width: usize, value: u8) -> Self {
        Self { city: city.into(), height, width, masks: std::array::from_fn(|_| vec![value; height * width]) }
    }

    pub fn mask(&self, d: Direction) -> &[u8] {
        &self.masks[d.index()]
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let cells = self.height * self.width;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&extent_u32(self.height, "H")?.to_le_bytes());
        out.extend_from_slice(&extent_u32(self.width, "W")?.to_le_bytes());
        put_string(&mut out, &self.city)?;
        for plane in &self.masks {
            let mut packed = vec![0u8; cells.div_ceil(8)];
            for (i, &v) in plane.iter().enumerate() {
                if v != 0 {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { format: "GFMK", version });
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let city = r.string()?;
        let cells = height
            .checked_mul(width)
            .ok_or_else(|| Error::ExtentOverflow(format!("mask {}x{}", height, width)))?;
        let mut masks: [Vec<u8>; 4] = Default::default();
        for plane in masks.iter_mut() {
            let packed = r.take(cells.div_ceil(8))?;
            *plane = (0..cells).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
        }
        r.finish()?;
        Ok(Self { city, height, width, masks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn check_movies<'a>(movies: &[&'a Movie]) -> Result<(&'a Movie, usize, usize)> {
    let first = *movies.first().ok_or(Error::EmptyInput("training movies"))?;
    let (h, w) = (first.height(), first.width());
    for m in movies {
        if (m.height(), m.width()) != (h, w) || m.channels() < TRAFFIC_CHANNELS {
            return Err(Error::shape(
                "compute_masks",
                format!("movie {:?} vs {}x{}", m.dims(), h, w),
            ));
        }
    }
    Ok((first, h, w))
}

/// Thresholds the average speed of every direction over all frames of all
/// training movies: a cell is road iff its average is strictly positive.
pub fn compute_masks(movies: &[&Movie]) -> Result<RoadMasks> {
    let (first, h, w) = check_movies(movies)?;
    let cells = h * w;
    let mut sums = [(); 4].map(|_| vec![0.0f64; cells]);
    let mut frames = 0usize;
    for m in movies {
        let c = m.channels();
        for t in 0..m.frames() {
            let frame = m.frame(t);
            for d in Direction::ALL {
                let ch = d.speed_channel();
                for (p, s) in sums[d.index()].iter_mut().enumerate() {
                    *s += frame[p * c + ch] as f64;
                }
            }
            frames += 1;
        }
    }
    let denom = frames.max(1) as f64;
    let masks = sums.map(|plane| plane.into_iter().map(|s| u8::from(s / denom > 0.0)).collect());
    Ok(RoadMasks { city: first.city().to_string(), height: h, width: w, masks })
}

/// Same result as [`compute_masks`] computed as the OR of per-movie
/// "any positive speed" maps.
pub fn compute_masks_by_max(movies: &[&Movie]) -> Result<RoadMasks> {
    let (first, h, w) = check_movies(movies)?;
    let mut out = RoadMasks::filled(first.city(), h, w, 0);
    for m in movies {
        let c = m.channels();
        for t in 0..m.frames() {
            let frame = m.frame(t);
            for d in Direction::ALL {
                let ch = d.speed_channel();
                for (p, v) in out.masks[d.index()].iter_mut().enumerate() {
                    *v |= u8::from(frame[p * c + ch] > 0);
                }
            }
        }
    }
    Ok(out)
}

/// Multiplies the volume and speed channels of direction `d` of every
/// output slot by `masks[d]`. Accepts `[48, H, W]` or `[N, 48, H, W]`.
pub fn apply_masks<S: Scalar>(prediction: &Tensor<S>, masks: &RoadMasks) -> Result<Tensor<S>> {
    let (channels, h, w) = match *prediction.shape() {
        [c, h, w] | [_, c, h, w] => (c, h, w),
        _ => return Err(Error::shape("apply_masks", format!("unexpected shape {:?}", prediction.shape()))),
    };
    if (h, w) != (masks.height, masks.width) || channels % TRAFFIC_CHANNELS != 0 {
        return Err(Error::shape(
            "apply_masks",
            format!("prediction {:?} vs masks {}x{}", prediction.shape(), masks.height, masks.width),
        ));
    }
    let plane = h * w;
    let mut out = prediction.clone();
    out.clear_grad();
    for (ci, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let d = Direction::of_channel((ci % channels) % TRAFFIC_CHANNELS).expect("traffic channel");
        for (v, &m) in chunk.iter_mut().zip(masks.mask(d)) {
            if m == 0 {
                *v = S::zero();
            }
        }
    }
    Ok(out)
}

/// MSE of a prediction before and after masking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedMse {
    pub mse_before: f64,
    pub mse_after: f64,
}

fn mse<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum();
    sum / a.len().max(1) as f64
}

/// Verifies masking cannot raise the MSE when the target is zero off-mask.
/// Reports [`Error::MaskPrecondition`] when the target has off-mask mass.
pub fn mask_mse_lemma_check<S: Scalar>(prediction: &Tensor<S>, target: &Tensor<S>, masks: &RoadMasks) -> Result<MaskedMse> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape("mask_mse_lemma_check", format!("{:?} vs {:?}", prediction.shape(), target.shape())));
    }
    let masked_target = apply_masks(target, masks)?;
    let violations = masked_target.data().iter().zip(target.data()).filter(|(a, b)| a != b).count();
    if violations > 0 {
        return Err(Error::MaskPrecondition { count: violations });
    }
    let after = apply_masks(prediction, masks)?;
    Ok(MaskedMse { mse_before: mse(prediction.data(), target.data()), mse_after: mse(after.data(), target.data()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::movie::RAW_CHANNELS;

    fn movie(frames: usize, h: usize, w: usize) -> Movie {
        Movie::zeros("m", 0, [frames, h, w, RAW_CHANNELS])
    }

    #[test]
    fn all_zero_training_set() {
        let m = movie(3, 4, 4);
        let r = compute_masks(&[&m]).unwrap();
        assert!(r.masks.iter().all(|p| p.iter().all(|&v| v == 0)));
    }

    #[test]
    fn single_pixel_average() {
        let mut m = movie(2, 3, 3);
        let ch = Direction::SouthEast.speed_channel();
        m.set(0, 1, 2, ch, 0);
        m.set(1, 1, 2, ch, 3);
        // brute-force oracle: (0 + 3) / 2 = 1.5 > 0
        let avg = (m.get(0, 1, 2, ch) as f64 + m.get(1, 1, 2, ch) as f64) / 2.0;
        assert_eq!(avg, 1.5);
        let r = compute_masks(&[&m]).unwrap();
        for d in Direction::ALL {
            for p in 0..9 {
                let expected = u8::from(d == Direction::SouthEast && p == 5);
                assert_eq!(r.mask(d)[p], expected);
            }
        }
        assert_eq!(r, compute_masks_by_max(&[&m]).unwrap());
    }

    #[test]
    fn volume_alone_does_not_make_road() {
        let mut m = movie(1, 2, 2);
        m.set(0, 0, 0, Direction::NorthEast.volume_channel(), 9);
        let r = compute_masks(&[&m]).unwrap();
        assert_eq!(r.mask(Direction::NorthEast)[0], 0);
    }

    #[test]
    fn input_validation() {
        assert!(matches!(compute_masks(&[]), Err(Error::EmptyInput(_))));
        let a = movie(1, 2, 2);
        let b = movie(1, 2, 3);
        assert!(compute_masks(&[&a, &b]).is_err());
    }

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| 0.01 + (i % 17) as f64 * 0.05).collect()).unwrap()
    }

    #[test]
    fn apply_identity_annihilator_idempotence() {
        let p = ramp(&[48, 3, 2]);
        assert_eq!(apply_masks(&p, &RoadMasks::filled("c", 3, 2, 1)).unwrap(), p);
        let zero = apply_masks(&p, &RoadMasks::filled("c", 3, 2, 0)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let mut m = RoadMasks::filled("c", 3, 2, 0);
        m.masks[1][2] = 1;
        m.masks[3][5] = 1;
        let once = apply_masks(&p, &m).unwrap();
        assert_eq!(apply_masks(&once, &m).unwrap(), once);
        // channel 2 / 3 belong to direction 1; slot 4 offsets by 32 channels
        assert_eq!(once.data()[(32 + 3) * 6 + 2], p.data()[(32 + 3) * 6 + 2]);
        assert_eq!(once.data()[(32 + 3) * 6 + 1], 0.0);
        assert_eq!(apply_masks(&ramp(&[2, 48, 3, 2]), &m).unwrap().shape(), &[2, 48, 3, 2]);
        assert!(apply_masks(&ramp(&[48, 2, 2]), &m).is_err());
    }

    #[test]
    fn lemma_examples() {
        let mut m = RoadMasks::filled("c", 2, 2, 1);
        for plane in m.masks.iter_mut() {
            plane[3] = 0;
        }
        let mut target = ramp(&[48, 2, 2]);
        for c in 0..48 {
            target.data_mut()[c * 4 + 3] = 0.0;
        }
        let noisy = ramp(&[48, 2, 2]);
        let r = mask_mse_lemma_check(&noisy, &target, &m).unwrap();
        assert!(r.mse_after < r.mse_before);

        let clean = apply_masks(&noisy, &m).unwrap();
        let r = mask_mse_lemma_check(&clean, &target, &m).unwrap();
        assert_eq!(r.mse_after, r.mse_before);

        let bad_target = ramp(&[48, 2, 2]);
        assert!(matches!(
            mask_mse_lemma_check(&noisy, &bad_target, &m),
            Err(Error::MaskPrecondition { count: 48 })
        ));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let mut m = RoadMasks::filled("Gridville", 5, 3, 0);
        m.masks[0][0] = 1;
        m.masks[2][14] = 1;
        m.masks[3][7] = 1;
        let bytes = m.encode().unwrap();
        // 4 + 2 + 8 + 2 + 9 header bytes, 4 planes of 2 bytes
        assert_eq!(bytes.len(), 25 + 8);
        assert_eq!(RoadMasks::decode(&bytes).unwrap(), m);
        assert!(matches!(RoadMasks::decode(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(RoadMasks::decode(&bad), Err(Error::BadMagic { .. })));
    }
}
