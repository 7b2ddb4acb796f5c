use proptest::prelude::*;

use udtw::align::{
    hard_dtw, softmin_value, udtw_bruteforce, udtw_evaluate, CostMatrix, GibbsParams, VarianceField, VarianceMode,
};
use udtw::data_io::{pixel_level, read_csv_sequence, write_csv_sequence};
use udtw::tasks::{hik_score, lcsa_from_distances};
use udtw::{Matrix, Sequence};

fn instance() -> impl Strategy<Value = (CostMatrix, VarianceField)> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(0.0f64..3.0, n * m),
            prop::collection::vec(0.1f64..10.0, n * m),
        )
            .prop_map(move |(c, v)| {
                (
                    CostMatrix::new(Matrix::from_vec(n, m, c).unwrap()).unwrap(),
                    VarianceField::new(Matrix::from_vec(n, m, v).unwrap(), VarianceMode::JointPairwise).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_values_bracket_the_hard_alignment((cost, var) in instance(), gamma in 0.05f64..5.0) {
        let p = GibbsParams::new(gamma, 0.0).unwrap();
        let out = udtw_evaluate(&cost, &var, &p).unwrap();
        let (hard, _) = hard_dtw(&cost, &var).unwrap();
        // E[w] is at least the minimum; the soft-min is at most the minimum
        prop_assert!(out.dist >= hard - 1e-9);
        prop_assert!(out.softmin_value <= hard + 1e-9);
        let (_, paths) = udtw_bruteforce(&cost, &var, &p, 4).unwrap();
        let lo = paths.penalties.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = paths.penalties.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.omega >= lo - 1e-9 && out.omega <= hi + 1e-9);
    }

    #[test]
    fn transposing_both_inputs_transposes_the_coupling((cost, var) in instance(), gamma in 0.05f64..5.0) {
        let p = GibbsParams::new(gamma, 0.0).unwrap();
        let a = udtw_evaluate(&cost, &var, &p).unwrap();
        let b = udtw_evaluate(&cost.transpose(), &var.transpose(), &p).unwrap();
        prop_assert!((a.dist - b.dist).abs() <= 1e-10 * a.dist.abs().max(1.0));
        let t = b.coupling.transpose();
        for (x, y) in a.coupling.as_slice().iter().zip(t.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn scaling_cost_and_temperature_scales_values((cost, var) in instance(), gamma in 0.05f64..5.0, k in 0.1f64..10.0) {
        let p = GibbsParams::new(gamma, 0.0).unwrap();
        let q = GibbsParams::new(gamma * k, 0.0).unwrap();
        let scaled = CostMatrix::new(cost.matrix().map(|c| c * k)).unwrap();
        let a = udtw_evaluate(&cost, &var, &p).unwrap();
        let b = udtw_evaluate(&scaled, &var, &q).unwrap();
        prop_assert!((b.dist - k * a.dist).abs() <= 1e-9 * (k * a.dist).abs().max(1.0));
        prop_assert!((b.omega - a.omega).abs() <= 1e-9 * a.omega.abs().max(1.0));
        let s = softmin_value(&scaled, &var, &q).unwrap();
        prop_assert!((s - k * a.softmin_value).abs() <= 1e-9 * (k * a.softmin_value).abs().max(1.0));
    }

    #[test]
    fn coupling_is_a_visit_probability((cost, var) in instance(), gamma in 0.05f64..5.0) {
        let out = udtw_evaluate(&cost, &var, &GibbsParams::new(gamma, 0.0).unwrap()).unwrap();
        let (n, m) = cost.shape();
        prop_assert!((out.coupling[(0, 0)] - 1.0).abs() < 1e-12);
        prop_assert!((out.coupling[(n - 1, m - 1)] - 1.0).abs() < 1e-12);
        prop_assert!(out.coupling.as_slice().iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
    }

    #[test]
    fn lcsa_codes_are_probability_vectors(d in prop::collection::vec(0.0f64..20.0, 1..8), kn in 1usize..8, g in 0.1f64..3.0) {
        let a = lcsa_from_distances(&d, kn, g).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(a.iter().filter(|v| **v > 0.0).count(), kn.min(d.len()));
        prop_assert!((hik_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_levels_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, power: bool) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pixel_level(lo, power) <= pixel_level(hi, power));
    }

    #[test]
    fn sequence_csv_round_trips(rows in 1usize..4, cols in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-1e6..1e6) / 3.0).collect())
            .collect();
        let s = Sequence::from_feature_rows(&grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv_sequence(&p, &s, &[]).unwrap();
        prop_assert_eq!(read_csv_sequence(&p).unwrap(), s);
    }
}
