use gridflow::data::movie::{Direction, Movie, RAW_CHANNELS, TRAFFIC_CHANNELS};
use gridflow::data::sample::{normalize_value, sample_count, window_len};
use gridflow::data::split::{split_sizes, SplitRatio};
use gridflow::roadmask::{apply_masks, compute_masks, compute_masks_by_max, mask_mse_lemma_check};
use gridflow::tensor::checkpoint;
use gridflow::train::{epoch_order, Stage};
use gridflow::{Adam, AdamConfig, Graph64, RoadMasks, Tensor32, Tensor64};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn masks(h: usize, w: usize) -> impl Strategy<Value = RoadMasks> {
    prop::collection::vec(prop::collection::vec(0u8..=1, h * w), 4).prop_map(move |planes| {
        let mut m = RoadMasks::filled("p", h, w, 0);
        for (dst, src) in m.masks.iter_mut().zip(planes) {
            *dst = src;
        }
        m
    })
}

fn movie_strategy(frames: usize, h: usize, w: usize) -> impl Strategy<Value = Movie> {
    // sparse speeds so that some cells stay off-road
    prop::collection::vec(prop_oneof![3 => Just(0u8), 1 => any::<u8>()], frames * h * w * RAW_CHANNELS)
        .prop_map(move |data| Movie::new("p", 0, [frames, h, w, RAW_CHANNELS], data).unwrap())
}

/// Direct cross-correlation with zero padding and stride 1.
#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], cout: usize, ks: usize, bias: &[f64]) -> Vec<f64> {
    let pad = ks / 2;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias[o];
                for ci in 0..c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let (sy, sx) = (y + ky, xx + kx);
                            if sy < pad || sx < pad || sy - pad >= h || sx - pad >= w {
                                continue;
                            }
                            acc += k[((o * c + ci) * ks + ky) * ks + kx] * x[(ci * h + sy - pad) * w + sx - pad];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn avg_pool_preserves_the_mean(
        (c, h, w, data) in (1usize..4, 1usize..5, 1usize..5)
            .prop_flat_map(|(c, h, w)| (Just(c), Just(2 * h), Just(2 * w), values(c * 4 * h * w)))
    ) {
        let mut g = Graph64::new();
        let x = g.leaf(Tensor64::new(vec![1, c, h, w], data.clone()).unwrap());
        let y = g.avg_pool2(x).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[1, c, h / 2, w / 2]);
        let mean_in: f64 = data.iter().sum::<f64>() / data.len() as f64;
        let out = g.value(y).data();
        let mean_out: f64 = out.iter().sum::<f64>() / out.len() as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn same_padding_conv_keeps_extent_and_matches_direct_sum(
        (cin, cout, ks, h, w, x, k, b) in (1usize..4, 1usize..4, prop_oneof![Just(1usize), Just(3usize)], 1usize..7, 1usize..7)
            .prop_flat_map(|(cin, cout, ks, h, w)| (
                Just(cin), Just(cout), Just(ks), Just(h), Just(w),
                values(cin * h * w), values(cout * cin * ks * ks), values(cout),
            ))
    ) {
        prop_assume!(h + 2 * (ks / 2) >= ks && w + 2 * (ks / 2) >= ks);
        let mut g = Graph64::new();
        let xv = g.leaf(Tensor64::new(vec![1, cin, h, w], x.clone()).unwrap());
        let kv = g.leaf(Tensor64::new(vec![cout, cin, ks, ks], k.clone()).unwrap());
        let bv = g.leaf(Tensor64::new(vec![cout], b.clone()).unwrap());
        let y = g.conv2d(xv, kv, bv, ks / 2, 1).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[1, cout, h, w]);
        let expect = naive_conv(&x, cin, h, w, &k, cout, ks, &b);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            prop_assert!((a - e).abs() < 1e-10, "{} vs {}", a, e);
        }
    }

    #[test]
    fn masking_shrinks_magnitudes_and_is_idempotent(
        (m, data) in (1usize..5, 1usize..5)
            .prop_flat_map(|(h, w)| (masks(h, w), values(2 * 48 * h * w)))
    ) {
        let t = Tensor64::new(vec![2, 48, m.height, m.width], data).unwrap();
        let once = apply_masks(&t, &m).unwrap();
        let twice = apply_masks(&once, &m).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        let plane = m.height * m.width;
        for (i, (&a, &b)) in once.data().iter().zip(t.data()).enumerate() {
            prop_assert!(a.abs() <= b.abs());
            let ch = (i / plane) % 48 % TRAFFIC_CHANNELS;
            let d = Direction::of_channel(ch).unwrap();
            let expect = if m.mask(d)[i % plane] == 1 { b } else { 0.0 };
            prop_assert_eq!(a, expect);
        }
    }

    #[test]
    fn masking_never_raises_mse_when_target_is_on_road(
        (m, pred, target) in (1usize..5, 1usize..5)
            .prop_flat_map(|(h, w)| (masks(h, w), values(48 * h * w), prop::collection::vec(0.0f64..1.0, 48 * h * w)))
    ) {
        let pred = Tensor64::new(vec![48, m.height, m.width], pred).unwrap();
        let target = apply_masks(&Tensor64::new(vec![48, m.height, m.width], target).unwrap(), &m).unwrap();
        let r = mask_mse_lemma_check(&pred, &target, &m).unwrap();
        prop_assert!(r.mse_after <= r.mse_before + 1e-15);
    }

    #[test]
    fn mask_computation_is_order_free_and_agrees_with_max(
        movies in prop::collection::vec(movie_strategy(2, 3, 4), 1..4)
    ) {
        let refs: Vec<&Movie> = movies.iter().collect();
        let rev: Vec<&Movie> = movies.iter().rev().collect();
        let a = compute_masks(&refs).unwrap();
        prop_assert_eq!(&a, &compute_masks(&rev).unwrap());
        prop_assert_eq!(&a, &compute_masks_by_max(&refs).unwrap());
    }

    #[test]
    fn normalization_round_trips_every_byte(v in any::<u8>()) {
        let x: f32 = normalize_value(v);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!((x * 255.0).round() as u8, v);
        let y: f64 = normalize_value(v);
        prop_assert_eq!((y * 255.0).round() as u8, v);
    }

    #[test]
    fn movie_files_round_trip(m in movie_strategy(3, 2, 3), day in -400i32..400) {
        let m = Movie::new("city", day, m.dims(), m.data().to_vec()).unwrap();
        prop_assert_eq!(Movie::decode(&m.encode().unwrap()).unwrap(), m);
    }

    #[test]
    fn mask_files_round_trip(m in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| masks(h, w))) {
        prop_assert_eq!(RoadMasks::decode(&m.encode().unwrap()).unwrap(), m);
    }

    #[test]
    fn checkpoints_round_trip(
        arrays in prop::collection::vec(
            (1usize..4, 1usize..4).prop_flat_map(|(a, b)| (Just(vec![a, b]), prop::collection::vec(-1e3f32..1e3, a * b))),
            1..4,
        )
    ) {
        let named: Vec<(String, Tensor32)> = arrays
            .into_iter()
            .enumerate()
            .map(|(i, (shape, data))| (format!("p{}", i), Tensor32::new(shape, data).unwrap()))
            .collect();
        let back = checkpoint::decode(&checkpoint::encode(&named).unwrap()).unwrap();
        prop_assert_eq!(back, named);
    }

    #[test]
    fn adam_with_zero_gradient_leaves_parameters(data in values(12), lr in 1e-5f64..1e-1) {
        let mut params = vec![Tensor64::new(vec![3, 4], data.clone()).unwrap()];
        let mut adam = Adam::new(AdamConfig { learning_rate: lr, ..AdamConfig::default() }, &params);
        for _ in 0..3 {
            adam.step_with(&mut params, &[vec![0.0; 12]]).unwrap();
        }
        prop_assert_eq!(params[0].data(), &data[..]);
        prop_assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn split_sizes_cover_every_item(n in 3usize..400, train in 0usize..300, validation in 0usize..50) {
        prop_assume!(train + validation > 0);
        let (a, b, c) = split_sizes(n, SplitRatio { train, validation }).unwrap();
        prop_assert_eq!(a + b + c, n);
        prop_assert!(a >= 1 && b >= 1 && c >= 1);
        prop_assert!(b >= c && b - c <= 1 || c == 1);
    }

    #[test]
    fn window_count_matches_frame_budget(frames in 0usize..600) {
        match sample_count(frames) {
            Ok(n) => prop_assert_eq!(n + window_len() - 1, frames),
            Err(_) => prop_assert!(frames < window_len()),
        }
    }

    #[test]
    fn epoch_orders_are_permutations(n in 0usize..300, seed in any::<u64>(), epoch in 0usize..10) {
        for stage in [Stage::Pretrain, Stage::Finetune] {
            let mut order = epoch_order(n, seed, stage, epoch);
            prop_assert_eq!(&order, &epoch_order(n, seed, stage, epoch));
            order.sort_unstable();
            prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }
}
