mod common;

use common::*;
use halfkfn::feature_space::{load_softmax_csv, save_softmax_csv, Origin, ReducerModel, SampleSet};
use halfkfn::inference::{permutation_p_value, Orientation};
use halfkfn::kfn::{half_kfn_fn_form, half_kfn_matrix_form, PooledSample};
use halfkfn::PermutationConfig;
use proptest::prelude::*;

/// Pools of softmax rows with `n1`, `n2` in 1..=8; rows are drawn from a
/// small grid so exact ties are common.
fn pool_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
    (2usize..=4, 1usize..=8, 1usize..=8, 1usize..=3).prop_flat_map(|(l, n1, n2, k)| {
        let row = prop::collection::vec(0u8..5, l).prop_map(|w| {
            let w: Vec<f64> = w.iter().map(|&x| x as f64 + 1.0).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect::<Vec<f64>>()
        });
        (prop::collection::vec(row, n1 + n2), Just(n1), Just(k))
    })
}

proptest! {
    #[test]
    fn matrix_form_equals_fn_form((rows, n1, k) in pool_strategy()) {
        let p = PooledSample::from_rows(&rows, n1).unwrap();
        let m = half_kfn_matrix_form(&p, k).unwrap();
        let f = half_kfn_fn_form(&p, k).unwrap();
        prop_assert_eq!(m, f);
        prop_assert_eq!(f.cross_count, half_kfn_oracle(&rows, n1, k).0);
    }

    #[test]
    fn statistic_is_a_bounded_fraction((rows, n1, k) in pool_strategy()) {
        let v = half_kfn_fn_form(&PooledSample::from_rows(&rows, n1).unwrap(), k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v.t));
        let scaled = v.t * (n1 * k) as f64;
        prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        prop_assert!(v.cross_count <= n1 * k);
    }

    #[test]
    fn reduce_keeps_cardinality_and_validity(
        weights in prop::collection::vec(-5.0f64..5.0, 6),
        bias in prop::collection::vec(-5.0f64..5.0, 3),
        xs in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 2), 1..30),
    ) {
        let model = ReducerModel::from_parts(2, 3, weights, bias).unwrap();
        let out = model.reduce(&xs, Origin::Target).unwrap();
        prop_assert_eq!(out.len(), xs.len());
        for v in out.iter() {
            let s: f64 = v.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(v.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(raw in prop::collection::vec(prop::collection::vec(1e-9f64..1.0, 3), 1..20)) {
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        let set = SampleSet::from_rows(rows, Origin::Source).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_softmax_csv(&set, &path).unwrap();
        let back = load_softmax_csv(&path, Origin::Source).unwrap();
        prop_assert_eq!(back.len(), set.len());
        for (a, b) in back.iter().zip(set.iter()) {
            let (a, b): (Vec<u64>, Vec<u64>) =
                (a.as_slice().iter().map(|x| x.to_bits()).collect(), b.as_slice().iter().map(|x| x.to_bits()).collect());
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permutation_p_is_a_multiple_of_one_over_p(
        (rows, n1, k) in pool_strategy(),
        perms in 1usize..60,
        seed in any::<u64>(),
    ) {
        let p = PooledSample::from_rows(&rows, n1).unwrap();
        let cfg = PermutationConfig { permutations: perms, seed, ..PermutationConfig::default() };
        let stat = |q: &PooledSample| Ok(half_kfn_fn_form(q, k)?.t);
        let (_, pv) = permutation_p_value(&p, Orientation::LargerIsDrift, &cfg, stat).unwrap();
        let scaled = pv * perms as f64;
        prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        let (_, again) = permutation_p_value(&p, Orientation::LargerIsDrift, &cfg, stat).unwrap();
        prop_assert_eq!(pv.to_bits(), again.to_bits());
    }
}
