//! One function per subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use gridflow::data::sample::{build_sample, HORIZON_MINUTES};
use gridflow::roadmask::{compute_masks, RoadMasks};
use gridflow::synth::scenario::{
    generate_scenario, load_scenario, scenario_params, simulate_scenario, LoadedScenario, MANIFEST_FILE,
};
use gridflow::tensor::checkpoint;
use gridflow::train::report::sample_id;
use gridflow::train::{
    evaluate as score, evaluate_persistence, finetune as tune, loss_curve_csv, run_ablation, train_model, write_panels,
    Dataset, EvalReport,
};
use gridflow::unet::{predict as infer, ModelParams};

use crate::config::{RunConfig, SplitMode};
use crate::{Common, MaskFlags, TrainFlags};

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self { code: 1, error: error.into() }
    }
}

type CmdResult = Result<(), Failure>;

/// Resolved configuration plus the directory this run writes into.
struct Run {
    cfg: RunConfig,
    dir: PathBuf,
}

/// Resolves the config, runs `check` on it, then creates the run directory.
fn start(
    common: &Common,
    apply: impl FnOnce(&mut RunConfig),
    check: impl FnOnce(&RunConfig) -> Result<(), Failure>,
) -> Result<Run, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref()).map_err(Failure::usage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &common.data_dir {
        cfg.paths.data_dir = p.clone();
    }
    if let Some(p) = &common.checkpoint {
        cfg.paths.checkpoint = p.clone();
    }
    if let Some(p) = &common.masks {
        cfg.paths.masks = p.clone();
    }
    if let Some(p) = &common.reports {
        cfg.paths.reports = p.clone();
    }
    apply(&mut cfg);
    cfg.validate().map_err(Failure::usage)?;
    check(&cfg)?;

    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = format!("{}-{}", cfg.hash(), stamp);
    let mut dir = cfg.paths.reports.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = cfg.paths.reports.join(format!("{}-{}", base, k));
        k += 1;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    let text = cfg.to_toml();
    fs::write(dir.join("config.toml"), &text)?;
    println!("seed = {}", cfg.seed);
    println!("run directory = {}", dir.display());
    println!("--- resolved config ---\n{}---", text);
    Ok(Run { cfg, dir })
}

fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) {
    if let Some(v) = flags.epochs {
        cfg.train.pretrain_epochs = v;
    }
    if let Some(v) = flags.finetune_epochs {
        cfg.train.finetune_epochs = v;
    }
    if let Some(v) = flags.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = flags.sample_stride {
        cfg.train.sample_stride = v;
    }
}

fn apply_mask_flags(cfg: &mut RunConfig, flags: &MaskFlags) {
    if flags.mask {
        cfg.train.use_mask = true;
    }
    if flags.no_mask {
        cfg.train.use_mask = false;
    }
}

fn no_inputs(_: &RunConfig) -> Result<(), Failure> {
    Ok(())
}

fn needs_data(cfg: &RunConfig) -> Result<(), Failure> {
    require(&cfg.paths.data_dir.join(MANIFEST_FILE), "scenario manifest")
}

fn needs_model(cfg: &RunConfig) -> Result<(), Failure> {
    needs_data(cfg)?;
    require(&cfg.paths.checkpoint, "checkpoint")?;
    if cfg.train.use_mask {
        require(&cfg.paths.masks, "road masks")?;
    }
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!("{} not found at {}", what, path.display())))
    }
}

/// Loads the scenario and checks it was generated from this config.
fn load_data(cfg: &RunConfig) -> Result<LoadedScenario, Failure> {
    let dir = &cfg.paths.data_dir;
    require(&dir.join(MANIFEST_FILE), "scenario manifest")?;
    let loaded = load_scenario(dir)?;
    let expected = scenario_params(&cfg.city_spec(), cfg.city.days_first_half, cfg.city.days_second_half);
    if loaded.manifest.params != expected {
        return Err(Failure::usage(anyhow!(
            "{} was generated with different city settings; rerun `generate` with this config",
            dir.display()
        )));
    }
    Ok(loaded)
}

fn dataset<'a>(cfg: &RunConfig, loaded: &'a LoadedScenario) -> anyhow::Result<Dataset<'a>> {
    let stride = cfg.train.sample_stride;
    Ok(match cfg.split.mode {
        SplitMode::Regime => Dataset::from_regimes(&loaded.movies, &loaded.static_map, stride)?,
        SplitMode::Ratio => Dataset::from_ratio(&loaded.movies, &loaded.static_map, cfg.split_ratio(), stride)?,
    })
}

fn load_params(cfg: &RunConfig) -> Result<ModelParams<f32>, Failure> {
    require(&cfg.paths.checkpoint, "checkpoint")?;
    let arrays = checkpoint::load(&cfg.paths.checkpoint)?;
    ModelParams::from_named(cfg.arch(), arrays)
        .with_context(|| format!("checkpoint {} does not match the configured architecture", cfg.paths.checkpoint.display()))
        .map_err(Failure::usage)
}

fn load_masks(cfg: &RunConfig) -> Result<Option<RoadMasks>, Failure> {
    if !cfg.train.use_mask {
        return Ok(None);
    }
    require(&cfg.paths.masks, "road masks")?;
    Ok(Some(RoadMasks::read(&cfg.paths.masks)?))
}

fn write_output(run: &Run, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = run.dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_rows(rows: &[(&str, &EvalReport)]) -> (String, String) {
    let mut csv = String::from("model,overall_mse");
    for m in HORIZON_MINUTES {
        let _ = write!(csv, ",mse_{}min", m);
    }
    for c in 0..8 {
        let _ = write!(csv, ",mse_channel{}", c);
    }
    csv.push_str(",n_samples\n");
    let mut text = String::new();
    for (label, r) in rows {
        let _ = write!(csv, "{},{}", label, r.overall_mse);
        for v in r.per_timestamp_mse.iter().chain(&r.per_channel_mse) {
            let _ = write!(csv, ",{}", v);
        }
        let _ = writeln!(csv, ",{}", r.n_samples);
        let _ = writeln!(text, "{:<12} overall_mse = {}", label, r.overall_mse);
        for (m, v) in HORIZON_MINUTES.iter().zip(r.per_timestamp_mse) {
            let _ = writeln!(text, "{:<12}   {:>2} min    = {}", "", m, v);
        }
    }
    (csv, text)
}

pub fn generate(common: &Common) -> CmdResult {
    let run = start(common, |_| {}, no_inputs)?;
    let cfg = &run.cfg;
    let manifest = generate_scenario(&cfg.city_spec(), cfg.city.days_first_half, cfg.city.days_second_half, &cfg.paths.data_dir)?;
    println!("wrote {} days to {}", manifest.entries.len(), cfg.paths.data_dir.display());
    write_output(&run, "manifest.tsv", &manifest.render())?;
    Ok(())
}

pub fn mask(common: &Common) -> CmdResult {
    let run = start(common, |_| {}, needs_data)?;
    let loaded = load_data(&run.cfg)?;
    let data = dataset(&run.cfg, &loaded)?;
    let masks = compute_masks(data.train.movies())?;
    masks.write(&run.cfg.paths.masks)?;
    let plane = (masks.height * masks.width) as f64;
    let mut summary = String::new();
    for (d, m) in masks.masks.iter().enumerate() {
        let on = m.iter().filter(|&&v| v != 0).count() as f64;
        let _ = writeln!(summary, "direction {} coverage = {:.4}", d, on / plane);
    }
    print!("{}", summary);
    println!("wrote {}", run.cfg.paths.masks.display());
    write_output(&run, "masks.txt", &summary)?;
    Ok(())
}

pub fn train(common: &Common, flags: &TrainFlags, two_stage: Option<bool>) -> CmdResult {
    let run = start(common, |cfg| {
        apply_train_flags(cfg, flags);
        if let Some(v) = two_stage {
            cfg.train.use_two_stage = v;
        }
    }, needs_data)?;
    let loaded = load_data(&run.cfg)?;
    let data = dataset(&run.cfg, &loaded)?;
    let outcome = train_model::<f32>(&run.cfg.train_config(), &data.train, &data.validation)?;
    for e in &outcome.curve {
        println!("{} epoch {} mean_loss = {}", e.stage.as_str(), e.epoch, e.mean_loss);
    }
    checkpoint::save(&run.cfg.paths.checkpoint, &outcome.params.named())?;
    println!("wrote {}", run.cfg.paths.checkpoint.display());
    write_output(&run, "loss_curve.csv", &loss_curve_csv(&outcome.curve))?;
    Ok(())
}

pub fn finetune(common: &Common, flags: &TrainFlags, output: Option<PathBuf>) -> CmdResult {
    let run = start(common, |cfg| apply_train_flags(cfg, flags), |cfg| {
        needs_data(cfg)?;
        require(&cfg.paths.checkpoint, "checkpoint")
    })?;
    let params = load_params(&run.cfg)?;
    let loaded = load_data(&run.cfg)?;
    let data = dataset(&run.cfg, &loaded)?;
    let outcome = tune(&run.cfg.train_config(), params, &data.validation)?;
    for e in &outcome.curve {
        println!("{} epoch {} mean_loss = {}", e.stage.as_str(), e.epoch, e.mean_loss);
    }
    let out = output.unwrap_or_else(|| run.cfg.paths.checkpoint.clone());
    checkpoint::save(&out, &outcome.params.named())?;
    println!("wrote {}", out.display());
    write_output(&run, "loss_curve.csv", &loss_curve_csv(&outcome.curve))?;
    Ok(())
}

pub fn evaluate(common: &Common, masking: &MaskFlags) -> CmdResult {
    let run = start(common, |cfg| apply_mask_flags(cfg, masking), needs_model)?;
    let params = load_params(&run.cfg)?;
    let masks = load_masks(&run.cfg)?;
    let loaded = load_data(&run.cfg)?;
    let data = dataset(&run.cfg, &loaded)?;
    let model = score(&params, &data.test, masks.as_ref())?;
    let persistence = evaluate_persistence::<f32>(&data.test, masks.as_ref())?;
    let (csv, text) = report_rows(&[("model", &model), ("persistence", &persistence)]);
    print!("{}", text);
    write_output(&run, "evaluation.csv", &csv)?;
    write_output(&run, "evaluation.txt", &text)?;
    Ok(())
}

pub fn ablate(common: &Common, flags: &TrainFlags) -> CmdResult {
    let run = start(common, |cfg| apply_train_flags(cfg, flags), no_inputs)?;
    let cfg = &run.cfg;
    let (gt, movies) = simulate_scenario(&cfg.city_spec(), cfg.city.days_first_half, cfg.city.days_second_half)?;
    let static_map = gt.static_map();
    let loaded = LoadedScenario { manifest: Default::default(), static_map, movies };
    let data = dataset(cfg, &loaded)?;
    let masks = compute_masks(data.train.movies())?;
    let table = run_ablation(&cfg.train_config(), &data, &masks)?;
    let text = table.to_text();
    print!("{}", text);
    write_output(&run, "ablation.txt", &text)?;
    write_output(&run, "ablation.csv", &table.to_csv())?;
    write_output(&run, "loss_curve.csv", &loss_curve_csv(&table.curve))?;
    Ok(())
}

/// Prediction and target of test window `index`, plus its identifier.
fn predict_window(run: &Run, index: usize) -> Result<(String, gridflow::Tensor32, gridflow::Tensor32), Failure> {
    let params = load_params(&run.cfg)?;
    let masks = load_masks(&run.cfg)?;
    let loaded = load_data(&run.cfg)?;
    let data = dataset(&run.cfg, &loaded)?;
    if index >= data.test.len() {
        return Err(Failure::usage(anyhow!("sample {} out of range: the test split has {} windows", index, data.test.len())));
    }
    let (movie, start) = data.test.window(index);
    let sample = build_sample::<f32>(movie, &loaded.static_map, start)?;
    let prediction = infer(&params, &sample.input, masks.as_ref())?;
    Ok((sample_id(&sample), prediction, sample.target))
}

pub fn predict(common: &Common, masking: &MaskFlags, index: usize) -> CmdResult {
    let run = start(common, |cfg| apply_mask_flags(cfg, masking), needs_model)?;
    let (id, prediction, target) = predict_window(&run, index)?;
    let path = run.dir.join("prediction.gfck");
    checkpoint::save(&path, &[("prediction".to_string(), prediction), ("target".to_string(), target)])?;
    println!("sample = {}", id);
    println!("wrote {}", path.display());
    Ok(())
}

pub fn report(common: &Common, masking: &MaskFlags, index: usize) -> CmdResult {
    let run = start(common, |cfg| apply_mask_flags(cfg, masking), needs_model)?;
    let (id, prediction, target) = predict_window(&run, index)?;
    let files = write_panels(&prediction, &target, &run.dir.join("panels"), &id)?;
    println!("sample = {}", id);
    println!("wrote {} images to {}", files.len(), run.dir.join("panels").display());
    Ok(())
}
