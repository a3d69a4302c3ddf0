//! Randomized invariants over the numeric kernels.

use proptest::prelude::*;
use voseg_core::array::ArrayD;
use voseg_core::matching;
use voseg_core::tape::Tape;

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        data in proptest::collection::vec(-30.0f64..30.0, 12)
    ) {
        let mut t = Tape::new();
        let x = t.input(ArrayD::from_vec(&[4, 3], data));
        let y = t.softmax_lastdim(x);
        for row in t.value(y).data().chunks_exact(3) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_distance_bounded_and_symmetric(
        a in proptest::collection::vec(-100.0f64..100.0, 6),
        b in proptest::collection::vec(-100.0f64..100.0, 6)
    ) {
        let d = matching::embedding_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, matching::embedding_distance(&b, &a));
        prop_assert_eq!(matching::embedding_distance(&a, &a), 0.0);
    }

    #[test]
    fn squared_to_distance_monotone(s1 in 0.0f64..100.0, s2 in 0.0f64..100.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(matching::squared_to_distance(lo) <= matching::squared_to_distance(hi));
    }

    #[test]
    fn relu_output_nonnegative_and_idempotent(
        data in proptest::collection::vec(-10.0f64..10.0, 8)
    ) {
        let mut t = Tape::new();
        let x = t.input(ArrayD::from_vec(&[8], data));
        let y = t.relu(x);
        let z = t.relu(y);
        prop_assert!(t.value(y).data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(t.value(y).data(), t.value(z).data());
    }
}
