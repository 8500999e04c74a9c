//! Two-stage training, evaluation, the ablation runner and visual reports.

pub mod ablation;
pub mod eval;
pub mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::movie::Movie;
use crate::data::sample::{fill_input, fill_target, sample_count, StaticMap, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::data::split::{split_by_regime, split_dataset, Split, SplitRatio};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::city::Regime;
use crate::tensor::adam::{Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::unet::{build_model, loss_and_gradients, ArchConfig, ModelParams};

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use eval::{
    evaluate, evaluate_persistence, evaluate_unmasked_and_masked, evaluate_with, persistence_baseline, EvalReport,
};
pub use report::{emit_visual_report, write_panels};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    /// Keep every `sample_stride`-th window start of the pretraining days;
    /// validation and test days always use every window.
    pub sample_stride: usize,
    pub seed: u64,
    pub arch: ArchConfig,
    pub use_mask: bool,
    pub use_two_stage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            pretrain_epochs: 5,
            finetune_epochs: 1,
            batch_size: 4,
            sample_stride: 1,
            seed: 0,
            arch: ArchConfig::default(),
            use_mask: true,
            use_two_stage: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidConfig("sample_stride must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        self.arch.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Windows over a set of movies sharing one static map; tensors are
/// materialized per batch.
#[derive(Clone, Debug)]
pub struct SampleSet<'a> {
    movies: Vec<&'a Movie>,
    static_map: &'a StaticMap,
    windows: Vec<(usize, usize)>,
}

impl<'a> SampleSet<'a> {
    pub fn new(movies: Vec<&'a Movie>, static_map: &'a StaticMap, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("sample stride must be at least 1".into()));
        }
        let mut windows = Vec::new();
        for (i, m) in movies.iter().enumerate() {
            if (m.height(), m.width()) != (static_map.height(), static_map.width()) {
                return Err(Error::shape("SampleSet", format!("movie {:?} vs static map", m.dims())));
            }
            windows.extend((0..sample_count(m.frames())?).step_by(stride).map(|t| (i, t)));
        }
        Ok(Self { movies, static_map, windows })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.static_map.height(), self.static_map.width())
    }

    pub fn movies(&self) -> &[&'a Movie] {
        &self.movies
    }

    pub fn window(&self, i: usize) -> (&'a Movie, usize) {
        let (m, t) = self.windows[i];
        (self.movies[m], t)
    }

    /// Inputs `[N, 109, H, W]` and targets `[N, 48, H, W]` for the given windows.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        let (h, w) = self.extent();
        let (ni, no) = (INPUT_CHANNELS * h * w, OUTPUT_CHANNELS * h * w);
        let mut inputs = vec![S::zero(); indices.len() * ni];
        let mut targets = vec![S::zero(); indices.len() * no];
        for (k, &i) in indices.iter().enumerate() {
            let (movie, start) = self.window(i);
            fill_input(movie, self.static_map, start, &mut inputs[k * ni..(k + 1) * ni]);
            fill_target(movie, start, &mut targets[k * no..(k + 1) * no]);
        }
        Ok((
            Tensor::new(vec![indices.len(), INPUT_CHANNELS, h, w], inputs)?,
            Tensor::new(vec![indices.len(), OUTPUT_CHANNELS, h, w], targets)?,
        ))
    }
}

/// Training, validation and test windows. Only the training windows are
/// thinned by `train_stride`.
#[derive(Clone, Debug)]
pub struct Dataset<'a> {
    pub train: SampleSet<'a>,
    pub validation: SampleSet<'a>,
    pub test: SampleSet<'a>,
}

impl<'a> Dataset<'a> {
    pub fn from_split(split: Split<&'a Movie>, static_map: &'a StaticMap, train_stride: usize) -> Result<Self> {
        Ok(Self {
            train: SampleSet::new(split.train, static_map, train_stride)?,
            validation: SampleSet::new(split.validation, static_map, 1)?,
            test: SampleSet::new(split.test, static_map, 1)?,
        })
    }

    /// First-half days train; second-half days are halved into validation
    /// and test.
    pub fn from_regimes(movies: &'a [(Movie, Regime)], static_map: &'a StaticMap, train_stride: usize) -> Result<Self> {
        let (first, second): (Vec<_>, Vec<_>) = movies.iter().partition(|(_, r)| *r == Regime::FirstHalf);
        let split = split_by_regime(
            first.into_iter().map(|(m, _)| m).collect(),
            second.into_iter().map(|(m, _)| m).collect(),
            |m| m.day_index(),
        )?;
        Self::from_split(split, static_map, train_stride)
    }

    /// All days sorted by index and cut by `ratio`, ignoring regimes.
    pub fn from_ratio(
        movies: &'a [(Movie, Regime)],
        static_map: &'a StaticMap,
        ratio: SplitRatio,
        train_stride: usize,
    ) -> Result<Self> {
        let split = split_dataset(movies.iter().map(|(m, _)| m).collect(), |m| m.day_index(), ratio)?;
        Self::from_split(split, static_map, train_stride)
    }
}

/// Which training stage an epoch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "train",
            Stage::Finetune => "finetune",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Stage::Pretrain => 0x7072_6574,
            Stage::Finetune => 0x6669_6e65,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub stage: Stage,
    pub mean_loss: f64,
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,split,mean_loss\n");
    for e in curve {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.stage.as_str(), e.mean_loss));
    }
    out
}

/// Seeded Fisher-Yates order of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, stage: Stage, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let stream = seed ^ stage.tag().rotate_left(17) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
    order
}

fn run_epochs<S: Scalar>(
    cfg: &TrainConfig,
    params: &mut ModelParams<S>,
    data: &SampleSet<'_>,
    epochs: usize,
    stage: Stage,
) -> Result<Vec<EpochLoss>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let mut adam = Adam::new(cfg.adam(), params.tensors());
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let order = epoch_order(data.len(), cfg.seed, stage, epoch);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch::<S>(chunk)?;
            let (loss, grads) = match loss_and_gradients(params, x, y) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { epoch, batch: b }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            adam.step_with(params.tensors_mut(), &grads)?;
        }
        curve.push(EpochLoss { epoch, stage, mean_loss: total / data.len() as f64 });
    }
    Ok(curve)
}

/// Trained parameters with their per-epoch losses.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: ModelParams<S>,
    pub curve: Vec<EpochLoss>,
}

/// Initializes from `cfg.seed` and trains `cfg.pretrain_epochs` epochs.
pub fn pretrain<S: Scalar>(cfg: &TrainConfig, train: &SampleSet<'_>) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let mut params = build_model(&cfg.arch, cfg.seed)?;
    let curve = run_epochs(cfg, &mut params, train, cfg.pretrain_epochs, Stage::Pretrain)?;
    Ok(TrainOutcome { params, curve })
}

/// Continues training on validation-regime data with a fresh optimizer
/// state and the same learning rate.
pub fn finetune<S: Scalar>(cfg: &TrainConfig, params: ModelParams<S>, validation: &SampleSet<'_>) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let mut params = params;
    let curve = run_epochs(cfg, &mut params, validation, cfg.finetune_epochs, Stage::Finetune)?;
    Ok(TrainOutcome { params, curve })
}

/// Pretraining followed by fine-tuning when `cfg.use_two_stage` is set.
pub fn train_model<S: Scalar>(
    cfg: &TrainConfig,
    train: &SampleSet<'_>,
    validation: &SampleSet<'_>,
) -> Result<TrainOutcome<S>> {
    let pre = pretrain(cfg, train)?;
    if !cfg.use_two_stage {
        return Ok(pre);
    }
    let mut curve = pre.curve;
    let tuned = finetune(cfg, pre.params, validation)?;
    curve.extend(tuned.curve);
    Ok(TrainOutcome { params: tuned.params, curve })
}
