//! The four-row mask × two-stage ablation.

use std::fmt::Write as _;

use super::eval::{evaluate_persistence, evaluate_unmasked_and_masked, EvalReport};
use super::{finetune, pretrain, Dataset, EpochLoss, TrainConfig};
use crate::data::sample::HORIZON_MINUTES;
use crate::error::Result;
use crate::roadmask::RoadMasks;

pub const ROW_LABELS: [&str; 4] = ["U-Net", "U-Net + Roadmap mask", "U-Net + Two-stage training", "Final model"];

/// Published test-set MSEs on the competition data, listed for context only.
pub const REFERENCE_MSE: [f64; 4] = [0.00119438, 0.00117991, 0.00117037, 0.00116868];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub use_mask: bool,
    pub use_two_stage: bool,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub persistence: EvalReport,
    pub curve: Vec<EpochLoss>,
}

/// Pretrains once and fine-tunes once from `cfg.seed`; each row then
/// evaluates one of the two parameter sets with or without `masks`.
/// `cfg.use_mask` and `cfg.use_two_stage` are ignored.
pub fn run_ablation(cfg: &TrainConfig, data: &Dataset<'_>, masks: &RoadMasks) -> Result<AblationTable> {
    let pre = pretrain::<f32>(cfg, &data.train)?;
    let tuned = finetune(cfg, pre.params.clone(), &data.validation)?;
    let mut curve = pre.curve;
    curve.extend(tuned.curve);

    let (base, base_masked) = evaluate_unmasked_and_masked(&pre.params, &data.test, masks)?;
    let (two, two_masked) = evaluate_unmasked_and_masked(&tuned.params, &data.test, masks)?;
    let reports = [base, base_masked, two, two_masked];
    let rows = ROW_LABELS
        .into_iter()
        .zip(reports)
        .enumerate()
        .map(|(i, (label, report))| AblationRow { label, use_mask: i % 2 == 1, use_two_stage: i >= 2, report })
        .collect();
    let persistence = evaluate_persistence::<f32>(&data.test, None)?;
    Ok(AblationTable { rows, persistence, curve })
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_label,use_mask,use_two_stage,overall_mse");
        for m in HORIZON_MINUTES {
            let _ = write!(out, ",mse_{}min", m);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.label, r.use_mask, r.use_two_stage, r.report.overall_mse);
            for v in r.report.per_timestamp_mse {
                let _ = write!(out, ",{}", v);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = ROW_LABELS.iter().map(|l| l.len()).max().unwrap_or(0).max("persistence".len());
        let mut out = format!("{:<width$}  mask  two-stage  {:>12}", "model", "overall");
        for m in HORIZON_MINUTES {
            let _ = write!(out, "  {:>11}", format!("{}min", m));
        }
        let _ = writeln!(out, "  {:>12}", "reference");
        for (r, reference) in self.rows.iter().zip(REFERENCE_MSE) {
            let flag = |b: bool| if b { "yes" } else { "no" };
            let _ = write!(out, "{:<width$}  {:<4}  {:<9}  {:>12.6e}", r.label, flag(r.use_mask), flag(r.use_two_stage), r.report.overall_mse);
            for v in r.report.per_timestamp_mse {
                let _ = write!(out, "  {:>11.5e}", v);
            }
            let _ = writeln!(out, "  {:>12.8}", reference);
        }
        let p = &self.persistence;
        let _ = write!(out, "{:<width$}  {:<4}  {:<9}  {:>12.6e}", "persistence", "no", "-", p.overall_mse);
        for v in p.per_timestamp_mse {
            let _ = write!(out, "  {:>11.5e}", v);
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "reference: competition test-set MSEs, not reproducible on synthetic data; fine-tuning uses fresh optimizer state"
        );
        out
    }
}
