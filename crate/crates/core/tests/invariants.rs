use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use nfseg::background::{estimate_translation_svm, SvmParams};
use nfseg::clustering::{kmeans, KMeansParams};
use nfseg::eval::iou;
use nfseg::geometry::{normal_flow_at, ImagePoint, MotionParams, NormalFlowSample};
use nfseg::merging::{build_candidate, hierarchical_merge, MergeContext, MergeParams};
use nfseg::tracking::{SegmentObservation, Tracker, TrackerParams, BACKGROUND_ID};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Samples of a single rigid plane at depth 3 with random edge normals.
fn plane_samples(t: Vector3<f64>, n: usize, seed: u64) -> Vec<NormalFlowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = MotionParams::new(t, Vector3::zeros());
    (0..n)
        .map(|_| {
            let p = ImagePoint::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4));
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let n0 = Vector2::new(a.cos(), a.sin());
            NormalFlowSample::new(p, n0, normal_flow_at(p, &n0, &motion, 1.0 / 3.0)).unwrap()
        })
        .collect()
}

fn partition(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().insert(i);
    }
    groups.into_values().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svm_direction_ignores_positive_flow_scaling(
        tx in -1.0..1.0f64, ty in -1.0..1.0f64, tz in -1.0..1.0f64,
        k in 0.01..100.0f64, seed in 0u64..1000,
    ) {
        let t = Vector3::new(tx, ty, tz);
        prop_assume!(t.norm() > 0.1);
        let samples = plane_samples(t, 400, seed);
        let scaled: Vec<_> = samples
            .iter()
            .map(|s| NormalFlowSample::new(s.point, s.n0, s.n * k).unwrap())
            .collect();
        let p = SvmParams::default();
        let a = estimate_translation_svm(&samples, &Vector3::zeros(), &p).unwrap();
        let b = estimate_translation_svm(&scaled, &Vector3::zeros(), &p).unwrap();
        prop_assert_eq!(a.direction, b.direction);
    }

    #[test]
    fn kmeans_relabels_under_event_permutation(seed in 0u64..1000, blobs in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        for b in 0..blobs {
            for _ in 0..20 {
                points.push([100.0 * b as f64 + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let params = KMeansParams { k: blobs, ..KMeansParams::default() };
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let shuffled: Vec<f64> = order.iter().flat_map(|&i| points[i]).collect();
        let a = kmeans(&flat, 2, &params).unwrap().clusters.labels;
        let b = kmeans(&shuffled, 2, &params).unwrap().clusters.labels;
        let mut back = vec![0; b.len()];
        for (j, &i) in order.iter().enumerate() {
            back[i] = b[j];
        }
        prop_assert_eq!(partition(&a), partition(&back));
    }

    #[test]
    fn merging_conserves_events_and_never_adds_clusters(
        seed in 0u64..1000, clusters in 1usize..8, threshold in -2.0..0.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = plane_samples(Vector3::new(0.5, 0.1, 0.2), 40 * clusters, seed);
        let pixels: Vec<[f64; 2]> = (0..samples.len())
            .map(|_| [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)])
            .collect();
        let residuals: Vec<f64> = (0..samples.len()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let ctx = MergeContext { samples: &samples, pixels: &pixels, residuals: &residuals, w: Vector3::zeros(), map: None };
        let params = MergeParams { threshold, ..MergeParams::default() };
        let cands: Vec<_> = (0..clusters)
            .filter_map(|c| build_candidate(&ctx, (40 * c..40 * (c + 1)).collect(), vec![c], &params))
            .collect();
        let merged = hierarchical_merge(cands, &ctx, &params);
        prop_assert!(merged.len() <= clusters && !merged.is_empty());
        let mut events: Vec<usize> = merged.iter().flat_map(|m| m.event_indices.iter().copied()).collect();
        events.sort_unstable();
        prop_assert_eq!(events, (0..40 * clusters).collect::<Vec<_>>());
        for m in &merged {
            prop_assert!(m.event_indices.iter().all(|&i| m.bbox.contains(&pixels[i])));
        }
    }

    #[test]
    fn tracker_ids_are_fresh_and_covariances_stay_positive(
        frames in proptest::collection::vec(
            proptest::collection::vec((0.0..300.0f64, 0.0..200.0f64, proptest::bool::weighted(0.2)), 0..5),
            1..25,
        ),
    ) {
        let mut tracker = Tracker::new(TrackerParams::default());
        let mut retired: BTreeSet<u32> = BTreeSet::new();
        for frame in frames {
            let obs: Vec<_> = frame
                .iter()
                .map(|&(x, y, bg)| SegmentObservation { centroid: Vector2::new(x, y), is_background: bg })
                .collect();
            let live_before: BTreeSet<u32> = tracker.tracks.iter().map(|t| t.id).collect();
            let ids = tracker.step(&obs, 0.025);
            for (o, id) in obs.iter().zip(&ids) {
                prop_assert_eq!(o.is_background, *id == BACKGROUND_ID);
                prop_assert!(!retired.contains(id));
            }
            let fg: Vec<u32> = ids.iter().copied().filter(|&i| i != BACKGROUND_ID).collect();
            prop_assert_eq!(fg.iter().collect::<BTreeSet<_>>().len(), fg.len());
            let live: BTreeSet<u32> = tracker.tracks.iter().map(|t| t.id).collect();
            retired.extend(live_before.difference(&live));
            for t in &tracker.tracks {
                let p = t.covariance;
                prop_assert!((p - p.transpose()).amax() < 1e-9);
                prop_assert!(p.cholesky().is_some());
            }
        }
    }

    #[test]
    fn binary_iou_is_symmetric(
        pairs in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY), 1..200),
    ) {
        let a: Vec<u32> = pairs.iter().map(|p| p.0 as u32).collect();
        let b: Vec<u32> = pairs.iter().map(|p| p.1 as u32).collect();
        let (ab, ba) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        if let (Some(x), Some(y)) = (ab, ba) {
            prop_assert!((x - y).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
