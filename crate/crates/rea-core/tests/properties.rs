//! Property-based invariants across modules.

use proptest::prelude::*;

use rea_core::data::{PropertyRecord, TargetKind, TargetTransform};
use rea_core::geo::{haversine, knn_brute_force, GeoIndex, RetrievalFilter};
use rea_core::metrics::{abre, mdae};
use rea_core::neural::softmax;

fn record(price: f64, surface: Option<f64>) -> PropertyRecord {
    PropertyRecord {
        id: 1,
        lat: 0.0,
        lon: 0.0,
        date: None,
        price,
        surface,
        features: vec![],
    }
}

proptest! {
    /// Applying then inverting the target transform recovers the price to
    /// 1e-9 relative error.
    #[test]
    fn target_transform_round_trips(
        price in 1e2f64..1e8,
        surface in 10.0f64..1000.0,
        scale in 0.5f64..20.0,
        per_sqm in any::<bool>(),
    ) {
        let kind = if per_sqm { TargetKind::LogPricePerSqm } else { TargetKind::LogPrice };
        let t = TargetTransform::new(kind, scale).unwrap();
        let rec = record(price, Some(surface));
        let v = t.apply(&rec).unwrap();
        let back = t.invert(v, rec.surface).unwrap();
        prop_assert!((back - price).abs() / price < 1e-9);
    }

    /// Softmax sums to one, stays non-negative, and ignores constant
    /// shifts.
    #[test]
    fn softmax_sum_and_shift_invariance(
        scores in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -500.0f64..500.0,
    ) {
        let w = softmax(&scores).unwrap();
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|&x| x >= 0.0));

        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let w2 = softmax(&shifted).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// The balanced relative error is symmetric and dominates the
    /// max-normalized relative error.
    #[test]
    fn abre_symmetry_and_dominance(x in 1e-3f64..1e9, y in 1e-3f64..1e9) {
        let fwd = abre(x, y).unwrap();
        let rev = abre(y, x).unwrap();
        prop_assert_eq!(fwd, rev);
        prop_assert!(fwd >= (x - y).abs() / x.max(y));
    }

    /// MdAE does not depend on the order of the (pred, truth) pairs.
    #[test]
    fn mdae_pair_permutation_invariant(
        pairs in prop::collection::vec((1.0f64..1e6, 1.0f64..1e6), 1..40),
        seed in any::<u64>(),
    ) {
        let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truths: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let base = mdae(&preds, &truths).unwrap();

        let mut indices: Vec<usize> = (0..pairs.len()).collect();
        // cheap deterministic shuffle
        let mut state = seed | 1;
        for i in (1..indices.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            indices.swap(i, j);
        }
        let p2: Vec<f64> = indices.iter().map(|&i| preds[i]).collect();
        let t2: Vec<f64> = indices.iter().map(|&i| truths[i]).collect();
        prop_assert_eq!(base, mdae(&p2, &t2).unwrap());
    }

    /// Haversine is symmetric, non-negative and bounded by half the
    /// great circle.
    #[test]
    fn haversine_bounds(
        lat1 in -90.0f64..90.0, lon1 in -180.0f64..180.0,
        lat2 in -90.0f64..90.0, lon2 in -180.0f64..180.0,
    ) {
        let d = haversine(lat1, lon1, lat2, lon2);
        prop_assert!(d >= 0.0);
        prop_assert!(d <= std::f64::consts::PI * 6_371_000.0 + 1e-6);
        prop_assert_eq!(d, haversine(lat2, lon2, lat1, lon1));
    }

    /// Index results equal the brute-force filtered sort and never violate
    /// the filter.
    #[test]
    fn knn_equals_brute_force(
        seed in any::<u64>(),
        k in 0usize..40,
        max_date in 1i64..1000,
    ) {
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let entries: Vec<(u64, f64, f64, Option<i64>)> = (0..300)
            .map(|i| {
                (
                    i as u64,
                    45.0 + 3.0 * next(),
                    -3.0 + 2.0 * next(),
                    Some((1000.0 * next()) as i64),
                )
            })
            .collect();
        let index = GeoIndex::from_parts(entries.iter().copied()).unwrap();
        let filter = RetrievalFilter {
            exclude_id: Some(5),
            max_date: Some(max_date),
            pool: None,
        };
        let lat = 45.0 + 3.0 * next();
        let lon = -3.0 + 2.0 * next();
        let got = index.knn(lat, lon, k, &filter);
        let want = knn_brute_force(&entries, lat, lon, k, &filter);
        prop_assert_eq!(&got, &want);
        for &(id, _) in &got {
            prop_assert!(id != 5);
            prop_assert!(entries[id as usize].3.unwrap() < max_date);
        }
    }
}
