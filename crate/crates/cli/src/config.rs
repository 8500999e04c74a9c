//! The run configuration file and its command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gridflow::data::split::SplitRatio;
use gridflow::synth::city::{CitySpec, Regime, RegimeShift};
use gridflow::train::TrainConfig;
use gridflow::unet::ArchConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for the city, the initialization and the shuffles.
    pub seed: u64,
    pub city: CitySection,
    pub arch: ArchSection,
    pub train: TrainSection,
    pub split: SplitSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CitySection {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub road_density: f64,
    pub n_arterials: usize,
    pub noise_level: f64,
    pub speed_factor: f64,
    pub volume_offset: f64,
    pub peak_factor: f64,
    pub days_first_half: usize,
    pub days_second_half: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub depth: usize,
    pub layers_per_block: usize,
    pub base_channels: usize,
    pub growth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub sample_stride: usize,
    pub use_mask: bool,
    pub use_two_stage: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// First-half days train; second-half days split into validation and test.
    Regime,
    /// All days sorted by index and cut by `train_ratio : validation_ratio`.
    Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
    pub train_ratio: usize,
    pub validation_ratio: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub masks: PathBuf,
    /// Parent of the per-run output directories.
    pub reports: PathBuf,
}

impl Default for CitySection {
    fn default() -> Self {
        let spec = CitySpec::default();
        let shift = RegimeShift::default();
        Self {
            name: spec.name,
            height: spec.height,
            width: spec.width,
            road_density: spec.road_density,
            n_arterials: spec.n_arterials,
            noise_level: spec.noise_level,
            speed_factor: shift.speed_factor,
            volume_offset: shift.volume_offset,
            peak_factor: shift.peak_factor,
            days_first_half: 18,
            days_second_half: 2,
        }
    }
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self { depth: a.depth, layers_per_block: a.layers_per_block, base_channels: a.base_channels, growth: a.growth }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            pretrain_epochs: t.pretrain_epochs,
            finetune_epochs: t.finetune_epochs,
            batch_size: t.batch_size,
            sample_stride: t.sample_stride,
            use_mask: t.use_mask,
            use_two_stage: t.use_two_stage,
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatio::default();
        Self { mode: SplitMode::Regime, train_ratio: r.train, validation_ratio: r.validation }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint: "model.gfck".into(),
            masks: "masks.gfmk".into(),
            reports: "runs".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{:02x}", b)).collect()
    }

    pub fn city_spec(&self) -> CitySpec {
        let c = &self.city;
        CitySpec {
            name: c.name.clone(),
            seed: self.seed,
            height: c.height,
            width: c.width,
            road_density: c.road_density,
            n_arterials: c.n_arterials,
            regime: Regime::FirstHalf,
            noise_level: c.noise_level,
            shift: RegimeShift { speed_factor: c.speed_factor, volume_offset: c.volume_offset, peak_factor: c.peak_factor },
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            depth: self.arch.depth,
            layers_per_block: self.arch.layers_per_block,
            base_channels: self.arch.base_channels,
            growth: self.arch.growth,
            height: self.city.height,
            width: self.city.width,
            ..ArchConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            pretrain_epochs: t.pretrain_epochs,
            finetune_epochs: t.finetune_epochs,
            batch_size: t.batch_size,
            sample_stride: t.sample_stride,
            seed: self.seed,
            arch: self.arch(),
            use_mask: t.use_mask,
            use_two_stage: t.use_two_stage,
        }
    }

    pub fn split_ratio(&self) -> SplitRatio {
        SplitRatio { train: self.split.train_ratio, validation: self.split.validation_ratio }
    }

    /// Rejects values the pipeline cannot run with.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.city_spec().validate()?;
        self.train_config().validate()?;
        if self.city.days_first_half == 0 || self.city.days_second_half == 0 {
            bail!("city.days_first_half and city.days_second_half must be at least 1");
        }
        if self.split.mode == SplitMode::Regime && self.city.days_second_half < 2 {
            bail!("the regime split needs at least 2 second-half days");
        }
        if self.split.train_ratio + self.split.validation_ratio == 0 {
            bail!("split ratios must not both be zero");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig { seed: 9, ..RunConfig::default() };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearnin_rate = 0.1\n").is_err());
        assert!(toml::from_str::<RunConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[arch]\ndepth = 4\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.arch.depth, 4);
        assert_eq!(cfg.arch.growth, ArchSection::default().growth);
        assert_eq!(cfg.train_config().seed, 3);
    }
}
