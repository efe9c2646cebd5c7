use coint_breaks::baiperron::{optimal_partition, partition_cost, ssr_table};
use coint_breaks::design::fitted_values;
use coint_breaks::dols::augment;
use coint_breaks::io::{read_csv, write_data_csv};
use coint_breaks::metrics::{hausdorff, symmetric_hausdorff};
use coint_breaks::sim::{generate, scenario};
use coint_breaks::stage1::{lambda_max, lambda_path, screen_candidates, solve_group_lasso, Stage1Config};
use coint_breaks::{segment_ols, ThetaVector, TimeSeriesData};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Sample built from proptest-drawn increments so every case is reproducible.
fn sample(t_len: usize, n: usize, incs: &[f64], noise: &[f64], brk: usize) -> TimeSeriesData {
    let mut x = DMatrix::zeros(t_len, n);
    for j in 0..n {
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += incs[(t * n + j) % incs.len()] + 0.01 * j as f64;
            x[(t, j)] = acc;
        }
    }
    let y = (0..t_len)
        .map(|t| {
            let b = if t + 1 >= brk { 3.0 } else { 1.0 };
            1.0 + (0..n).map(|j| b * x[(t, j)]).sum::<f64>() + noise[t % noise.len()]
        })
        .collect();
    TimeSeriesData::new(y, x).unwrap()
}

fn arb_sample() -> impl Strategy<Value = TimeSeriesData> {
    (20usize..60, 1usize..3).prop_flat_map(|(t, n)| {
        (
            Just(t),
            Just(n),
            prop::collection::vec(-1.0f64..1.0, t * n),
            prop::collection::vec(-0.5f64..0.5, t),
            (t / 4)..(3 * t / 4),
        )
            .prop_map(|(t, n, incs, noise, brk)| sample(t, n, &incs, &noise, brk))
    })
}

fn sorted_breaks(t_len: usize, max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(2..=t_len, 0..=max).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regimes_round_trip_through_cumulative_form(
        t_len in 5usize..60,
        n in 1usize..4,
        seed_breaks in prop::collection::btree_set(2usize..60, 0..4),
        vals in prop::collection::vec(-5.0f64..5.0, 20),
    ) {
        let bps: Vec<usize> = seed_breaks.into_iter().filter(|&b| b <= t_len).collect();
        let betas: Vec<Vec<f64>> = (0..=bps.len())
            .map(|r| (0..n).map(|j| vals[(r * n + j) % vals.len()] + r as f64).collect())
            .collect();
        let theta = ThetaVector::from_regimes(t_len, &bps, &betas).unwrap();
        let path = theta.cumulative_coefficients();
        let mut bounds = vec![1];
        bounds.extend(&bps);
        bounds.push(t_len + 1);
        for (r, w) in bounds.windows(2).enumerate() {
            for t in w[0]..w[1] {
                for (a, b) in path.at(t).iter().zip(&betas[r]) {
                    prop_assert!((a - b).abs() < 1e-12, "t = {}: {} vs {}", t, a, b);
                }
            }
        }
    }

    #[test]
    fn screening_respects_spacing_and_budget(
        data in arb_sample(),
        frac in 0.01f64..0.5,
        spacing in 1usize..8,
        budget in 1usize..5,
    ) {
        let mut cfg = Stage1Config::for_sample(data.len(), data.n_regressors());
        cfg.max_candidates = 1;
        cfg.trim_lo = 0.1;
        cfg.trim_hi = 0.1;
        cfg.min_regime = data.n_regressors() + 1;
        let lmax = lambda_max(&data, &cfg).unwrap();
        let sol = solve_group_lasso(&data, lmax * frac, &cfg, None).unwrap();
        let picked = screen_candidates(&sol, spacing, budget);
        prop_assert!(picked.len() <= budget);
        prop_assert!(picked.windows(2).all(|w| w[1] - w[0] >= spacing));
        prop_assert!(picked.iter().all(|i| sol.active_set.contains(i)));
        if !sol.active_set.is_empty() {
            prop_assert!(!picked.is_empty());
        }
    }

    #[test]
    fn penalty_at_lambda_max_keeps_nothing(data in arb_sample(), scale in 1.0f64..10.0) {
        let cfg = Stage1Config {
            max_candidates: 1,
            ..Stage1Config::for_sample(data.len(), data.n_regressors())
        };
        let lmax = lambda_max(&data, &cfg).unwrap();
        let sol = solve_group_lasso(&data, lmax * scale, &cfg, None).unwrap();
        prop_assert!(sol.active_set.is_empty());
        prop_assert!(sol.theta.active_set().is_empty());
    }

    #[test]
    fn ssr_does_not_increase_along_the_path(data in arb_sample()) {
        let cfg = Stage1Config {
            max_candidates: 1,
            ..Stage1Config::for_sample(data.len(), data.n_regressors())
        };
        let path = lambda_path(&data, &cfg).unwrap();
        for w in path.windows(2) {
            prop_assert!(w[0].lambda >= w[1].lambda);
            prop_assert!(w[1].ssr <= w[0].ssr * (1.0 + 1e-6) + 1e-12, "{} then {}", w[0].ssr, w[1].ssr);
        }
    }

    #[test]
    fn hausdorff_is_a_distance_on_break_sets(
        t_len in 10usize..200,
        a in sorted_breaks(200, 4),
        b in sorted_breaks(200, 4),
        c in sorted_breaks(200, 4),
    ) {
        let clip = |v: &Vec<usize>| v.iter().copied().filter(|&i| i <= t_len).collect::<Vec<_>>();
        let (a, b, c) = (clip(&a), clip(&b), clip(&c));
        prop_assert_eq!(hausdorff(&a, &a, t_len), 0.0);
        let d_ab = symmetric_hausdorff(&a, &b, t_len);
        prop_assert_eq!(d_ab, symmetric_hausdorff(&b, &a, t_len));
        prop_assert!(d_ab >= hausdorff(&a, &b, t_len));
        prop_assert!(d_ab <= t_len as f64);
        if !a.is_empty() && !b.is_empty() && !c.is_empty() {
            let tri = symmetric_hausdorff(&a, &b, t_len) + symmetric_hausdorff(&b, &c, t_len);
            prop_assert!(symmetric_hausdorff(&a, &c, t_len) <= tri);
        }
        // Estimating more breaks never moves the truth farther away.
        let mut sup = a.clone();
        sup.extend(&b);
        sup.sort_unstable();
        sup.dedup();
        if !a.is_empty() {
            prop_assert!(hausdorff(&sup, &c, t_len) <= hausdorff(&a, &c, t_len));
        }
    }

    #[test]
    fn dynamic_program_beats_every_feasible_partition(
        data in arb_sample(),
        m in 0usize..3,
        tries in prop::collection::vec(prop::collection::btree_set(2usize..60, 0..3), 20),
    ) {
        let h = data.n_regressors() + 2;
        let table = ssr_table(&data, h).unwrap();
        let t_len = data.len();
        if (m + 1) * h > t_len {
            return Ok(());
        }
        let best = optimal_partition(&table, m).unwrap();
        prop_assert_eq!(best.len(), m);
        let best_cost = partition_cost(&table, &best);
        for cand in tries {
            let bps: Vec<usize> = cand.into_iter().filter(|&b| b <= t_len).collect();
            if bps.len() != m {
                continue;
            }
            let mut bounds = vec![1];
            bounds.extend(&bps);
            bounds.push(t_len + 1);
            if bounds.windows(2).any(|w| w[1] - w[0] < h) {
                continue;
            }
            prop_assert!(best_cost <= partition_cost(&table, &bps) + 1e-9 * best_cost.abs().max(1.0));
        }
    }

    #[test]
    fn segment_residuals_are_orthogonal_to_the_design(data in arb_sample(), split in 0.3f64..0.7) {
        let t_len = data.len();
        let n = data.n_regressors();
        let b = ((t_len as f64) * split) as usize;
        let model = segment_ols(&data, &[b]).unwrap();
        let r = &model.residuals;
        let scale = data.y().iter().map(|v| v.abs()).fold(1.0, f64::max) * t_len as f64;
        prop_assert!(r.iter().sum::<f64>().abs() <= 1e-8 * scale);
        for j in 0..n {
            for (lo, hi) in [(0, b - 1), (b - 1, t_len)] {
                let dot: f64 = (lo..hi).map(|t| r[t] * data.x()[(t, j)]).sum();
                let xs = (lo..hi).map(|t| data.x()[(t, j)].abs()).fold(1.0, f64::max);
                prop_assert!(dot.abs() <= 1e-8 * scale * xs);
            }
        }
        let ssr: f64 = r.iter().map(|v| v * v).sum();
        prop_assert!((ssr - model.ssr).abs() <= 1e-9 * ssr.max(1.0));
        let theta = ThetaVector::from_regimes(t_len, &[b], &model.segment_betas).unwrap();
        let fit = fitted_values(&data, &theta, model.intercept).unwrap();
        for t in 0..t_len {
            prop_assert!((data.y()[t] - fit[t] - r[t]).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn dols_dimensions(data in arb_sample(), l in 0usize..4) {
        let t_len = data.len();
        let n = data.n_regressors();
        let a = augment(&data, l).unwrap();
        prop_assert_eq!(a.len(), t_len - 2 * l - 1);
        prop_assert_eq!(a.n_augment(), n * (2 * l + 1));
        prop_assert_eq!(a.original_index(1), l + 2);
        prop_assert_eq!(a.original_index(a.len()), t_len - l);
        prop_assert_eq!(a.y(), &data.y()[l + 1..t_len - l]);
    }

    #[test]
    fn csv_round_trip_is_lossless(data in arb_sample()) {
        let mut buf = Vec::new();
        write_data_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.y(), data.y());
        prop_assert_eq!(back.x(), data.x());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulator_is_deterministic_per_replication(rep in 0u64..1000, seed in 0u64..1000) {
        let mut cfg = scenario("sb2").unwrap();
        cfg.seed = seed;
        cfg.t = 120;
        let (d1, t1) = generate(&cfg, rep).unwrap();
        let (d2, t2) = generate(&cfg, rep).unwrap();
        prop_assert_eq!(d1.y(), d2.y());
        prop_assert_eq!(d1.x(), d2.x());
        prop_assert_eq!(&t1.breakpoints, &t2.breakpoints);
        let (d3, _) = generate(&cfg, rep + 1).unwrap();
        prop_assert_ne!(d1.y(), d3.y());
    }
}
