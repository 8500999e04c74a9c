//! Grayscale ground-truth / prediction / difference panels per output slot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::binfmt::write_file;
use crate::data::movie::TRAFFIC_CHANNELS;
use crate::data::sample::{Sample, HORIZON_MINUTES, OUTPUT_CHANNELS, OUTPUT_FRAMES};
use crate::error::{Error, Result};
use crate::roadmask::RoadMasks;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::unet::{predict, ModelParams};

/// Per-pixel maximum over the traffic channels of one output slot.
fn slot_panel<S: Scalar>(t: &Tensor<S>, slot: usize, plane: usize) -> Vec<f64> {
    let mut panel = vec![0.0f64; plane];
    for c in 0..TRAFFIC_CHANNELS {
        let ch = &t.data()[(slot * TRAFFIC_CHANNELS + c) * plane..][..plane];
        for (p, &v) in panel.iter_mut().zip(ch) {
            *p = p.max(v.to_f64_lossless());
        }
    }
    panel
}

/// Plain-text PGM with maxval 255; 0 is black and 1 is white.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> String {
    let mut out = format!("P2\n{} {}\n255\n", width, height);
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Writes `{sample_id}_{minutes}min_{gt|pred|diff}.pgm` for every output
/// slot. Both tensors are `[48, H, W]`.
pub fn write_panels<S: Scalar>(
    prediction: &Tensor<S>,
    target: &Tensor<S>,
    out_dir: &Path,
    sample_id: &str,
) -> Result<Vec<PathBuf>> {
    let (h, w) = match *target.shape() {
        [OUTPUT_CHANNELS, h, w] => (h, w),
        _ => return Err(Error::shape("emit_visual_report", format!("target {:?}", target.shape()))),
    };
    if prediction.shape() != target.shape() {
        return Err(Error::shape("emit_visual_report", format!("{:?} vs {:?}", prediction.shape(), target.shape())));
    }
    let plane = h * w;
    let mut written = Vec::with_capacity(3 * OUTPUT_FRAMES);
    for (slot, minutes) in HORIZON_MINUTES.iter().enumerate() {
        let gt = slot_panel(target, slot, plane);
        let pred = slot_panel(prediction, slot, plane);
        let diff: Vec<f64> = gt.iter().zip(&pred).map(|(a, b)| (a - b).abs()).collect();
        for (kind, panel) in [("gt", &gt), ("pred", &pred), ("diff", &diff)] {
            let path = out_dir.join(format!("{}_{}min_{}.pgm", sample_id, minutes, kind));
            write_file(&path, encode_pgm(w, h, panel).as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `{city}_d{day}_t{start}` for a sample.
pub fn sample_id<S>(sample: &Sample<S>) -> String {
    let o = &sample.origin;
    format!("{}_d{:03}_t{:03}", o.city, o.day_index, o.start)
}

/// Predicts one sample and writes its 18 panels.
pub fn emit_visual_report<S: Scalar>(
    params: &ModelParams<S>,
    sample: &Sample<S>,
    masks: Option<&RoadMasks>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let pred = predict(params, &sample.input, masks)?;
    write_panels(&pred, &sample.target, out_dir, &sample_id(sample))
}
