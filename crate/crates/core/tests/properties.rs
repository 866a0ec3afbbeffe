use proptest::prelude::*;

use cat_core::baselines::{impute, ExtraFeature, FillMethod, ImputeConfig};
use cat_core::datagen::{self, MpiConfig, ProbeConfig, RegularSeries};
use cat_core::io::{read_dataset_from, write_dataset_to};
use cat_core::receptor::{density_features, interpolate_values};
use cat_core::series::{
    split, Channel, DatasetMeta, Instance, IrregularSeries, LabeledDataset, SplitMode, SplitSpec,
};

fn channel(max_len: usize) -> impl Strategy<Value = Channel> {
    prop::collection::vec((0.05f64..1.0, -1.0f64..1.0), 1..max_len).prop_map(|steps| {
        let mut t = 0.0;
        let pairs: Vec<(f64, f64)> = steps
            .into_iter()
            .map(|(dt, v)| {
                t += dt;
                (t, v)
            })
            .collect();
        Channel::from_pairs(&pairs)
    })
}

fn series(channels: usize) -> impl Strategy<Value = IrregularSeries> {
    prop::collection::vec(channel(30), channels)
        .prop_map(|chs| IrregularSeries::new("s", chs).unwrap())
}

fn dataset() -> impl Strategy<Value = LabeledDataset> {
    (1usize..3, 2usize..20)
        .prop_flat_map(|(d, n)| prop::collection::vec((series(d), 0usize..3), n))
        .prop_map(|items| {
            let instances = items
                .into_iter()
                .enumerate()
                .map(|(i, (mut series, label))| {
                    series.id = format!("x{i}");
                    if i % 2 == 0 {
                        series = series.with_origin(i as f64 * 0.5);
                    }
                    Instance { series, label }
                })
                .collect();
            let meta = DatasetMeta {
                name: "prop".into(),
                seed: Some(3),
                params: None,
            };
            LabeledDataset::new(meta, 3, instances).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn io_round_trip_is_bit_exact(data in dataset()) {
        let mut buf = Vec::new();
        write_dataset_to(&data, &mut buf).unwrap();
        let back = read_dataset_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn covering_windows_reassemble_channel(s in series(2), width in 0.3f64..4.0) {
        let end = s.max_timestamp().unwrap();
        for (c, ch) in s.channels.iter().enumerate() {
            let mut seen: Vec<f64> = Vec::new();
            let mut center = width / 2.0;
            while center - width / 2.0 <= end {
                let win = &s.window(center, width)[c];
                for (t, v) in win.times.iter().zip(win.values) {
                    let k = ch.times.iter().position(|x| x == t).unwrap();
                    prop_assert_eq!(ch.values[k], *v);
                    if seen.last() != Some(t) {
                        seen.push(*t);
                    }
                }
                center += width;
            }
            prop_assert_eq!(&seen, &ch.times);
        }
    }

    #[test]
    fn split_partitions_the_dataset(mut data in dataset(), seed in 0u64..100, temporal in any::<bool>()) {
        prop_assume!(data.len() >= 10);
        if temporal {
            for (i, inst) in data.instances.iter_mut().enumerate() {
                inst.series.origin_t0 = Some((i * 7 % 5) as f64);
            }
        }
        let spec = SplitSpec {
            seed,
            mode: if temporal { SplitMode::Temporal } else { SplitMode::Random },
            ..SplitSpec::default()
        };
        let (a, b, c) = split(&data, &spec).unwrap();
        let mut ids: Vec<&str> = [&a, &b, &c]
            .iter()
            .flat_map(|p| p.instances.iter().map(|i| i.series.id.as_str()))
            .collect();
        prop_assert_eq!(ids.len(), data.len());
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), data.len());
        prop_assert_eq!(split(&data, &spec).unwrap(), (a, b, c));
    }

    #[test]
    fn density_never_drops_when_observations_are_added(
        ch in channel(20),
        extra in 0.0f64..25.0,
        center in 0.0f64..20.0,
        alpha in 0.1f64..200.0,
    ) {
        let before = density_features(&ch.times, center, 2.0, 16, alpha);
        let mut times = ch.times.clone();
        let k = times.partition_point(|&t| t < extra);
        times.insert(k, extra);
        let after = density_features(&times, center, 2.0, 16, alpha);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn features_are_translation_covariant(
        ch in channel(20),
        center in 0.0f64..20.0,
        shift in -8i32..8,
        alpha in 0.1f64..50.0,
    ) {
        let s = f64::from(shift);
        let moved: Vec<f64> = ch.times.iter().map(|t| t + s).collect();
        let p0 = interpolate_values(&ch.times, &ch.values, center, 1.5, 12);
        let p1 = interpolate_values(&moved, &ch.values, center + s, 1.5, 12);
        let q0 = density_features(&ch.times, center, 1.5, 12, alpha);
        let q1 = density_features(&moved, center + s, 1.5, 12, alpha);
        for (a, b) in p0.iter().zip(&p1).chain(q0.iter().zip(&q1)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn interpolation_reproduces_affine_signals(
        times in channel(20).prop_map(|c| c.times),
        slope in -3.0f64..3.0,
        offset in -3.0f64..3.0,
        center in 0.0f64..20.0,
    ) {
        prop_assume!(times.len() >= 2);
        let values: Vec<f64> = times.iter().map(|t| slope * t + offset).collect();
        let (lo, hi) = (times[0], times[times.len() - 1]);
        let p = interpolate_values(&times, &values, center, 3.0, 10);
        for (j, v) in p.iter().enumerate() {
            let t = cat_core::receptor::query_time(center, 3.0, 10, j + 1);
            if (lo..=hi).contains(&t) {
                prop_assert!((v - (slope * t + offset)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn downsample_keeps_an_ordered_subset(s in series(2), fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let d = datagen::random_downsample(&s, fraction, seed).unwrap();
        for (sub, full) in d.channels.iter().zip(&s.channels) {
            prop_assert_eq!(sub.len(), (fraction * full.len() as f64).round() as usize);
            let mut from = 0;
            for (t, v) in sub.pairs() {
                let k = from + full.times[from..].iter().position(|&x| x == t).unwrap();
                prop_assert_eq!(full.values[k], v);
                from = k + 1;
            }
        }
    }

    #[test]
    fn probe_output_is_a_subset_in_disjoint_windows(
        values in prop::collection::vec(-1.0f64..1.0, 20..300),
        window_len in 2usize..40,
        gamma in 0.0f64..1.0,
    ) {
        prop_assume!(values.len() >= window_len);
        let input = RegularSeries {
            times: (0..values.len()).map(|i| i as f64 * 0.5).collect(),
            channels: vec![values.clone()],
            labels: None,
        };
        let out = datagen::listening_probe(&input, &ProbeConfig { gamma, window_len }).unwrap();
        let mut last_end = f64::NEG_INFINITY;
        for s in &out {
            let t0 = s.origin_t0.unwrap();
            prop_assert!(t0 > last_end);
            let ch = &s.channels[0];
            for (t, v) in ch.pairs() {
                let k = ((t + t0) / 0.5).round() as usize;
                prop_assert_eq!(input.times[k], t + t0);
                prop_assert_eq!(values[k], v);
            }
            last_end = t0 + (window_len - 1) as f64 * 0.5;
        }
    }

    #[test]
    fn imputation_is_finite_with_exact_mask_and_gaps(s in series(2), grid in 2usize..60, linear in any::<bool>()) {
        let method = if linear { FillMethod::Linear } else { FillMethod::Mean };
        let norm = s.normalized().unwrap();
        let mask = impute(&s, &ImputeConfig { grid_size: grid, method, extra: ExtraFeature::Mask }).unwrap();
        let dt = impute(&s, &ImputeConfig { grid_size: grid, method, extra: ExtraFeature::DeltaT }).unwrap();
        prop_assert!(mask.data.iter().chain(&dt.data).all(|x| x.is_finite()));
        for (c, ch) in norm.channels.iter().enumerate() {
            let mut hit = vec![false; grid];
            for &t in &ch.times {
                hit[((t * grid as f64).floor() as usize).min(grid - 1)] = true;
            }
            for (b, &h) in hit.iter().enumerate() {
                prop_assert_eq!(mask.row(b)[2 + c], if h { 1.0 } else { 0.0 });
                let gap = dt.row(b)[2 + c];
                prop_assert!(gap >= 0.0);
                if h {
                    prop_assert_eq!(gap, 0.0);
                }
            }
        }
    }

    #[test]
    fn generated_series_carry_their_pattern(seed in 0u64..1000, width in 0.02f64..0.5, anywhere in any::<bool>()) {
        let cfg = MpiConfig { n: 4, series_len: 60, signal_width: width, seed, noise_outside_signal: !anywhere };
        let data = datagen::gen_mpi(&cfg).unwrap();
        for inst in &data.instances {
            inst.series.validate().unwrap();
            prop_assert_eq!(inst.series.num_observations(), 60);
            prop_assert_eq!(datagen::find_planted_signal(&inst.series, width), Some(inst.label));
        }
    }
}
