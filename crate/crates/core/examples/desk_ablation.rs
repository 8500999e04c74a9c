//! Runs the four-row ablation on a small synthetic city.
//!
//! Usage: `desk_ablation [seed] [size] [depth] [stride] [first_days] [second_days] [lr_e4] [batch] [epochs]`
//!
//! Defaults match `configs/desk.toml`; one seed takes about four minutes on a single core.

use std::time::Instant;

use gridflow::roadmask::compute_masks;
use gridflow::synth::city::CitySpec;
use gridflow::synth::scenario::simulate_scenario;
use gridflow::train::{run_ablation, Dataset, TrainConfig};
use gridflow::unet::ArchConfig;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() -> gridflow::Result<()> {
    let (seed, size, depth, stride) = (arg(1, 0) as u64, arg(2, 64), arg(3, 4), arg(4, 24));
    let (n1, n2) = (arg(5, 18), arg(6, 2));
    let spec = CitySpec { name: "desk".into(), seed, height: size, width: size, ..CitySpec::default() };
    let t0 = Instant::now();
    let (gt, movies) = simulate_scenario(&spec, n1, n2)?;
    let static_map = gt.static_map();
    let data = Dataset::from_regimes(&movies, &static_map, stride)?;
    let masks = compute_masks(data.train.movies())?;
    let arch = ArchConfig { depth, height: size, width: size, ..ArchConfig::default() };
    let cfg = TrainConfig {
        seed,
        arch,
        sample_stride: stride,
        learning_rate: arg(7, 20) as f64 * 1e-4,
        batch_size: arg(8, 2),
        pretrain_epochs: arg(9, 5),
        ..TrainConfig::default()
    };
    println!("samples train {} val {} test {} ({:.1?})", data.train.len(), data.validation.len(), data.test.len(), t0.elapsed());
    let table = run_ablation(&cfg, &data, &masks)?;
    print!("{}", table.to_text());
    for e in &table.curve {
        println!("{} {} {:.6e}", e.stage.as_str(), e.epoch, e.mean_loss);
    }
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
