use gridflow::data::movie::Movie;
use gridflow::roadmask::compute_masks;
use gridflow::synth::city::{CitySpec, Regime};
use gridflow::synth::scenario::simulate_scenario;
use gridflow::train::{
    evaluate, evaluate_persistence, evaluate_with, finetune, persistence_baseline, pretrain, run_ablation, train_model,
    write_panels, Dataset, Stage, TrainConfig,
};
use gridflow::unet::{build_model, predict};
use gridflow::{ArchConfig, Error, ModelParams};

struct Fixture {
    movies: Vec<(Movie, Regime)>,
    static_map: gridflow::data::sample::StaticMap,
}

fn fixture() -> Fixture {
    let spec = CitySpec { seed: 2, height: 32, width: 32, ..CitySpec::default() };
    let (gt, movies) = simulate_scenario(&spec, 2, 2).unwrap();
    Fixture { movies, static_map: gt.static_map() }
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        pretrain_epochs: epochs,
        finetune_epochs: 1,
        batch_size: 4,
        sample_stride: 24,
        seed: 7,
        arch: ArchConfig { depth: 2, base_channels: 4, growth: 4, height: 32, width: 32, ..ArchConfig::default() },
        use_mask: true,
        use_two_stage: true,
    }
}

fn same(a: &ModelParams<f32>, b: &ModelParams<f32>) -> bool {
    a.tensors().iter().zip(b.tensors()).all(|(x, y)| x.data() == y.data())
}

#[test]
fn zero_epochs_return_the_initialization() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let cfg = config(0);
    let out = pretrain::<f32>(&cfg, &data.train).unwrap();
    assert!(out.curve.is_empty());
    assert!(same(&out.params, &build_model(&cfg.arch, cfg.seed).unwrap()));

    let still = finetune(&TrainConfig { finetune_epochs: 0, ..cfg }, out.params.clone(), &data.validation).unwrap();
    assert!(same(&still.params, &out.params));
}

#[test]
fn training_lowers_the_loss_and_repeats_exactly() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let cfg = config(5);
    let a = pretrain::<f32>(&cfg, &data.train).unwrap();
    let losses: Vec<f64> = a.curve.iter().map(|e| e.mean_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(a.curve.iter().all(|e| e.stage == Stage::Pretrain));
    assert!(losses[4] < losses[0], "{:?}", losses);

    let b = pretrain::<f32>(&cfg, &data.train).unwrap();
    assert!(same(&a.params, &b.params));
    assert_eq!(a.curve, b.curve);
}

#[test]
fn two_stage_training_composes_from_its_stages() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let cfg = config(1);
    let joint = train_model::<f32>(&cfg, &data.train, &data.validation).unwrap();
    let pre = pretrain::<f32>(&cfg, &data.train).unwrap();
    let tuned = finetune(&cfg, pre.params.clone(), &data.validation).unwrap();
    assert!(same(&joint.params, &tuned.params));
    assert!(!same(&pre.params, &tuned.params));
    assert_eq!(joint.curve.len(), 2);
    assert_eq!(joint.curve[1].stage, Stage::Finetune);

    let single = train_model::<f32>(&TrainConfig { use_two_stage: false, ..cfg }, &data.train, &data.validation).unwrap();
    assert!(same(&single.params, &pre.params));
}

#[test]
fn non_finite_loss_reports_its_position() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let cfg = config(1);
    let mut params = build_model::<f32>(&cfg.arch, cfg.seed).unwrap();
    let last = params.tensors().len() - 1;
    params.tensors_mut()[last].data_mut()[0] = f32::NAN;
    match finetune(&cfg, params, &data.validation) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn evaluation_agrees_with_its_building_blocks() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let train: Vec<&Movie> = f.movies.iter().filter(|(_, r)| *r == Regime::FirstHalf).map(|(m, _)| m).collect();
    let masks = compute_masks(&train).unwrap();
    let cfg = config(1);
    let params = build_model::<f32>(&cfg.arch, cfg.seed).unwrap();

    let direct = evaluate(&params, &data.test, Some(&masks)).unwrap();
    let composed = evaluate_with::<f32>(&data.test, |x| predict(&params, x, Some(&masks))).unwrap();
    assert_eq!(direct, composed);
    assert_eq!(direct.n_samples, data.test.len());

    let persistence = evaluate_persistence::<f32>(&data.test, None).unwrap();
    let composed = evaluate_with::<f32>(&data.test, persistence_baseline).unwrap();
    assert_eq!(persistence, composed);
}

#[test]
fn ablation_rows_reuse_one_training_run() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let train: Vec<&Movie> = f.movies.iter().filter(|(_, r)| *r == Regime::FirstHalf).map(|(m, _)| m).collect();
    let masks = compute_masks(&train).unwrap();
    let cfg = config(1);
    let table = run_ablation(&cfg, &data, &masks).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.curve.len(), 2);

    let pre = pretrain::<f32>(&cfg, &data.train).unwrap();
    let tuned = finetune(&cfg, pre.params.clone(), &data.validation).unwrap();
    let expect = [
        evaluate(&pre.params, &data.test, None).unwrap(),
        evaluate(&pre.params, &data.test, Some(&masks)).unwrap(),
        evaluate(&tuned.params, &data.test, None).unwrap(),
        evaluate(&tuned.params, &data.test, Some(&masks)).unwrap(),
    ];
    for (row, e) in table.rows.iter().zip(&expect) {
        assert_eq!(&row.report, e, "{}", row.label);
    }
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("row_label,use_mask,use_two_stage,overall_mse,mse_5min,"));
}

#[test]
fn panels_cover_every_horizon() {
    let f = fixture();
    let data = Dataset::from_regimes(&f.movies, &f.static_map, 24).unwrap();
    let (x, y) = data.test.batch::<f32>(&[3]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let target = y.clone().reshape(vec![48, 32, 32]).unwrap();
    let files = write_panels(&persistence_baseline(&x).unwrap().reshape(vec![48, 32, 32]).unwrap(), &target, dir.path(), "s").unwrap();
    assert_eq!(files.len(), 18);
    let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert!(names.contains(&"s_60min_diff.pgm".to_string()));
    assert!(names.iter().all(|n| n.ends_with(".pgm")));
    let gt = std::fs::read_to_string(dir.path().join("s_5min_gt.pgm")).unwrap();
    assert!(gt.starts_with("P2\n32 32\n255\n"));
}
