use std::collections::BTreeMap;

use fliptrace::campaign::{prepare, sample_size, Confidence, SampleRequest, Scope};
use fliptrace::mirvm::parse_program;
use fliptrace::model::{fit, predict, r_squared, BenchmarkRow};
use fliptrace::synth::generate_program;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn design(seed: u64, n: usize) -> Vec<[f64; 6]> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..0.2))).collect()
}

fn rows(xs: &[[f64; 6]], y: impl Fn(&[f64; 6]) -> f64) -> Vec<BenchmarkRow> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| BenchmarkRow {
            name: format!("b{i}"),
            rates: *x,
            measured_sr: y(x),
            reference_predicted_sr: None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_recovers_an_exact_linear_target(seed in any::<u64>(), beta in prop::array::uniform6(-2.0f64..2.0), b0 in -1.0f64..1.0) {
        let xs = design(seed, 12);
        let data = rows(&xs, |x| b0 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>());
        let m = fit(&data).unwrap();
        for (got, want) in m.beta.iter().zip(&beta) {
            prop_assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        prop_assert!((m.intercept - b0).abs() < 1e-6);
        prop_assert!((r_squared(&m, &data) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_is_affine_and_clamped(seed in any::<u64>(), t in 0.0f64..1.0) {
        let xs = design(seed, 10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
        let ys: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let data: Vec<BenchmarkRow> = rows(&xs, |_| 0.0).into_iter().zip(&ys).map(|(mut r, y)| { r.measured_sr = *y; r }).collect();
        let m = fit(&data).unwrap();
        let (a, b) = (xs[0], xs[1]);
        let mix: [f64; 6] = std::array::from_fn(|j| t * a[j] + (1.0 - t) * b[j]);
        let lhs = predict(&m, &mix).raw;
        let rhs = t * predict(&m, &a).raw + (1.0 - t) * predict(&m, &b).raw;
        prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + lhs.abs()));
        let sum: [f64; 6] = std::array::from_fn(|j| a[j] + b[j]);
        let lhs2 = predict(&m, &sum).raw + predict(&m, &[0.0; 6]).raw;
        let rhs2 = predict(&m, &a).raw + predict(&m, &b).raw;
        prop_assert!((lhs2 - rhs2).abs() < 1e-8 * (1.0 + lhs2.abs()));
        let p = predict(&m, &mix);
        prop_assert!((0.0..=1.0).contains(&p.clamped));
        let r2 = r_squared(&m, &data);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r2), "{r2}");
    }

    #[test]
    fn sample_size_bounds(n in 1u64..1_000_000, margin in 0.005f64..0.2, p in 0.01f64..0.99) {
        let inf = sample_size(None, Confidence::Level95, margin, p).unwrap().n;
        let fin = sample_size(Some(n), Confidence::Level95, margin, p).unwrap().n;
        prop_assert!(fin <= n && fin <= inf && fin >= 1);
        let wider = sample_size(None, Confidence::Level95, margin * 1.5, p).unwrap().n;
        prop_assert!(wider <= inf);
        let stricter = sample_size(None, Confidence::Level99, margin, p).unwrap().n;
        prop_assert!(stricter >= inf);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn campaigns_are_reproducible_and_conserve_tallies(prog_seed in 0u64..10_000, seed in any::<u64>(), n in 1u64..200) {
        let p = parse_program(&generate_program(prog_seed)).unwrap();
        let input = BTreeMap::new();
        let prep = prepare(&p, &input, Scope::PROGRAM, 1_000_000).unwrap();
        let a = prep.run(SampleRequest::Fixed { n }, seed, 1).unwrap();
        let b = prep.run(SampleRequest::Fixed { n }, seed, 3).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(a.m, n);
        prop_assert_eq!(a.tallies.total(), a.m);
        prop_assert!(!a.with_replacement);
        let idx: Vec<_> = a.records.iter().map(|r| r.fault).collect();
        let mut dedup = idx.clone();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), idx.len(), "sites drawn twice");
        prop_assert!((a.success_rate - a.tallies.verification_success as f64 / n as f64).abs() < 1e-15);
    }
}
