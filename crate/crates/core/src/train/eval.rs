//! Test-set metrics for the model and the persistence baseline.

use super::SampleSet;
use crate::data::movie::{RAW_CHANNELS, TRAFFIC_CHANNELS};
use crate::data::sample::{INPUT_CHANNELS, INPUT_FRAMES, OUTPUT_CHANNELS, OUTPUT_FRAMES};
use crate::error::{Error, Result};
use crate::roadmask::{apply_masks, RoadMasks};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::unet::{predict, ModelParams};

/// Windows evaluated per forward pass.
const EVAL_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall_mse: f64,
    pub per_timestamp_mse: [f64; OUTPUT_FRAMES],
    pub per_channel_mse: [f64; TRAFFIC_CHANNELS],
    pub n_samples: usize,
}

/// Running squared-error sums per output slot and traffic channel.
#[derive(Clone, Debug, Default)]
struct Accumulator {
    slot: [f64; OUTPUT_FRAMES],
    chan: [f64; TRAFFIC_CHANNELS],
    n: usize,
    plane: usize,
}

impl Accumulator {
    /// Adds predictions against targets, both `[N, 48, H, W]`.
    fn add<S: Scalar>(&mut self, pred: &Tensor<S>, target: &Tensor<S>) -> Result<()> {
        if pred.shape() != target.shape() {
            return Err(Error::shape("evaluate", format!("{:?} vs {:?}", pred.shape(), target.shape())));
        }
        let (batch, c, h, w) = pred.dims4("evaluate")?;
        if c != OUTPUT_CHANNELS {
            return Err(Error::shape("evaluate", format!("{} output channels", c)));
        }
        if self.n > 0 && self.plane != h * w {
            return Err(Error::shape("evaluate", format!("extent {}x{} differs from earlier batches", h, w)));
        }
        self.plane = h * w;
        self.n += batch;
        let planes = pred.data().chunks_exact(self.plane).zip(target.data().chunks_exact(self.plane));
        for (i, (p, t)) in planes.enumerate() {
            let ch = i % OUTPUT_CHANNELS;
            let se: f64 = p
                .iter()
                .zip(t)
                .map(|(&a, &b)| {
                    let d = a.to_f64_lossless() - b.to_f64_lossless();
                    d * d
                })
                .sum();
            self.slot[ch / TRAFFIC_CHANNELS] += se;
            self.chan[ch % TRAFFIC_CHANNELS] += se;
        }
        Ok(())
    }

    fn finish(self) -> Result<EvalReport> {
        if self.n == 0 {
            return Err(Error::EmptyInput("evaluation samples"));
        }
        let per_slot = (self.n * TRAFFIC_CHANNELS * self.plane) as f64;
        let per_chan = (self.n * OUTPUT_FRAMES * self.plane) as f64;
        let overall = self.slot.iter().sum::<f64>() / (per_slot * OUTPUT_FRAMES as f64);
        Ok(EvalReport {
            overall_mse: overall,
            per_timestamp_mse: self.slot.map(|s| s / per_slot),
            per_channel_mse: self.chan.map(|s| s / per_chan),
            n_samples: self.n,
        })
    }
}

/// Runs `predictor` over every window of `data` and scores it.
pub fn evaluate_with<S: Scalar>(
    data: &SampleSet<'_>,
    mut predictor: impl FnMut(&Tensor<S>) -> Result<Tensor<S>>,
) -> Result<EvalReport> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut acc = Accumulator::default();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = data.batch::<S>(chunk)?;
        acc.add(&predictor(&x)?, &y)?;
    }
    acc.finish()
}

/// Clamped and optionally masked model predictions scored on `data`.
pub fn evaluate<S: Scalar>(params: &ModelParams<S>, data: &SampleSet<'_>, masks: Option<&RoadMasks>) -> Result<EvalReport> {
    evaluate_with(data, |x| predict(params, x, masks))
}

/// Scores one set of clamped predictions without and with `masks`; equal
/// to two [`evaluate`] calls at half the cost.
pub fn evaluate_unmasked_and_masked<S: Scalar>(
    params: &ModelParams<S>,
    data: &SampleSet<'_>,
    masks: &RoadMasks,
) -> Result<(EvalReport, EvalReport)> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let (mut plain, mut masked) = (Accumulator::default(), Accumulator::default());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = data.batch::<S>(chunk)?;
        let pred = predict(params, &x, None)?;
        plain.add(&pred, &y)?;
        masked.add(&apply_masks(&pred, masks)?, &y)?;
    }
    Ok((plain.finish()?, masked.finish()?))
}

/// Repeats the traffic channels of the last input frame for every output
/// slot. Accepts `[109, H, W]` or `[N, 109, H, W]`.
pub fn persistence_baseline<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w, single) = match *input.shape() {
        [c, h, w] => (1, c, h, w, true),
        [n, c, h, w] => (n, c, h, w, false),
        _ => return Err(Error::shape("persistence_baseline", format!("shape {:?}", input.shape()))),
    };
    if c != INPUT_CHANNELS {
        return Err(Error::shape("persistence_baseline", format!("{} input channels", c)));
    }
    let plane = h * w;
    let last = (INPUT_FRAMES - 1) * RAW_CHANNELS;
    let mut out = Vec::with_capacity(n * OUTPUT_CHANNELS * plane);
    for s in input.data().chunks_exact(c * plane) {
        let frame = &s[last * plane..(last + TRAFFIC_CHANNELS) * plane];
        for _ in 0..OUTPUT_FRAMES {
            out.extend_from_slice(frame);
        }
    }
    let shape = if single { vec![OUTPUT_CHANNELS, h, w] } else { vec![n, OUTPUT_CHANNELS, h, w] };
    Tensor::new(shape, out)
}

/// Persistence baseline scored on `data`, masked when `masks` is given.
pub fn evaluate_persistence<S: Scalar>(data: &SampleSet<'_>, masks: Option<&RoadMasks>) -> Result<EvalReport> {
    evaluate_with(data, |x: &Tensor<S>| {
        let p = persistence_baseline(x)?;
        match masks {
            Some(m) => apply_masks(&p, m),
            None => Ok(p),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::movie::Movie;
    use crate::data::sample::{build_sample, StaticMap};

    fn noisy_movie(seed: u32) -> Movie {
        let mut m = Movie::zeros("c", 0, [26, 3, 2, RAW_CHANNELS]);
        for (i, v) in m.data_mut().iter_mut().enumerate() {
            *v = ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 24) as u8;
        }
        m
    }

    #[test]
    fn overall_is_mean_of_timestamps() {
        let m = noisy_movie(1);
        let st = StaticMap::empty(3, 2);
        let set = SampleSet::new(vec![&m], &st, 1).unwrap();
        let r = evaluate_with(&set, |x: &Tensor<f64>| Ok(Tensor::full(vec![x.shape()[0], 48, 3, 2], 0.3))).unwrap();
        let mean = r.per_timestamp_mse.iter().sum::<f64>() / 6.0;
        assert!((r.overall_mse - mean).abs() <= 1e-12);
        let chan_mean = r.per_channel_mse.iter().sum::<f64>() / 8.0;
        assert!((r.overall_mse - chan_mean).abs() <= 1e-12);
        assert_eq!(r.n_samples, 3);

        // flat oracle
        let mut se = 0.0;
        let mut count = 0;
        for start in 0..3 {
            let s = build_sample::<f64>(&m, &st, start).unwrap();
            for &t in s.target.data() {
                se += (0.3 - t) * (0.3 - t);
                count += 1;
            }
        }
        assert!((r.overall_mse - se / count as f64).abs() <= 1e-12);
    }

    #[test]
    fn persistence_repeats_last_frame() {
        let m = noisy_movie(7);
        let st = StaticMap::empty(3, 2);
        let s = build_sample::<f64>(&m, &st, 2).unwrap();
        let p = persistence_baseline(&s.input).unwrap();
        assert_eq!(p.shape(), &[48, 3, 2]);
        for slot in 0..6 {
            for c in 0..8 {
                for px in 0..6 {
                    let want = m.data()[((2 + 11) * 6 + px) * RAW_CHANNELS + c] as f64 / 255.0;
                    assert_eq!(p.data()[(slot * 8 + c) * 6 + px], want);
                }
            }
        }
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let m = noisy_movie(3);
        let st = StaticMap::empty(3, 2);
        let set = SampleSet::new(vec![&m], &st, 1).unwrap();
        let mut k = 0;
        let r = evaluate_with(&set, |x: &Tensor<f64>| {
            let n = x.shape()[0];
            let idx: Vec<usize> = (k..k + n).collect();
            k += n;
            Ok(set.batch::<f64>(&idx)?.1)
        })
        .unwrap();
        assert_eq!(r.overall_mse, 0.0);
    }
}
