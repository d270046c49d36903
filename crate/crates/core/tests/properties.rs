use nalgebra::Vector3;
use proptest::prelude::*;

use beliefsweep::bp::NormalizationContext;
use beliefsweep::fusion::{consistency_mask, FusionParams, FusionView};
use beliefsweep::geometry::{homography_for_plane, CameraModel};
use beliefsweep::io::{read_pfm, read_volume, write_pfm, write_volume};
use beliefsweep::pipeline::{auto_intervals, level_loss, refine_hypotheses};
use beliefsweep::raster::Image;
use beliefsweep::synth::depth_error_metrics;
use beliefsweep::volumes::{DepthMap, ScoreVolume};

fn camera(x: f64) -> CameraModel {
    CameraModel::simple(30.0, 11.5, 8.5, 1.0, 10.0)
        .unwrap()
        .with_center(Vector3::new(x, 0.05 * x, 0.0))
        .unwrap()
}

fn view(x: f64, depths: Vec<f64>) -> FusionView {
    FusionView {
        camera: camera(x),
        depth: DepthMap::from_depths(18, 24, depths).unwrap(),
        image: Image::from_fn(1, 18, 24, |_, i, j| ((i + j) % 5) as f64 / 5.0).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn consistency_mask_is_monotone(
        noise in proptest::collection::vec(-0.02f64..0.02, 3 * 18 * 24),
        tau in 0.01f64..1.0,
        extra in 0.0f64..1.0,
        n in 1usize..=2,
    ) {
        let views: Vec<FusionView> = (0..3)
            .map(|k| {
                let d = (0..18 * 24).map(|px| 4.0 * (1.0 + noise[k * 18 * 24 + px])).collect();
                view(0.2 * k as f64, d)
            })
            .collect();
        let others = [&views[1], &views[2]];
        let base = consistency_mask(&views[0], &others, &FusionParams::new(n, tau, 0.01).unwrap()).unwrap();
        let looser = consistency_mask(&views[0], &others, &FusionParams::new(n, tau + extra, 0.01).unwrap()).unwrap();
        let fewer = consistency_mask(&views[0], &others, &FusionParams::new(1, tau, 0.01).unwrap()).unwrap();
        for k in 0..base.kept.len() {
            prop_assert!(!base.kept[k] || looser.kept[k]);
            prop_assert!(!base.kept[k] || fewer.kept[k]);
        }
    }

    #[test]
    fn refined_windows_are_centered_and_evenly_spaced(
        depths in proptest::collection::vec(0.5f64..30.0, 12),
        half in 1usize..6,
    ) {
        let labels = 2 * half;
        let d_hat = DepthMap::from_depths(3, 4, depths).unwrap();
        let ctx = NormalizationContext::new(80.0, 0.5, 1.0).unwrap();
        let intervals = auto_intervals(&d_hat, &ctx);
        let fallback: Vec<f64> = (1..=labels).map(|k| k as f64).collect();
        let r = refine_hypotheses(&d_hat, &intervals, labels, 1e-3, &fallback).unwrap();
        for px in 0..12 {
            let (i, j) = (px / 4, px % 4);
            let col: Vec<f64> = (0..labels).map(|p| r.volume.get(p, i, j)).collect();
            prop_assert_eq!(col[half], d_hat.get(i, j));
            let step = intervals.interval[px];
            // spacing equals I wherever no clamping happened
            if d_hat.get(i, j) - half as f64 * step > 1e-3 {
                for w in col.windows(2) {
                    prop_assert!(((w[1] - w[0]) - step).abs() <= 1e-12 * d_hat.get(i, j).max(1.0) * labels as f64);
                }
            }
        }
    }

    #[test]
    fn level_loss_is_zero_only_on_agreement(
        a in proptest::collection::vec(1.0f64..5.0, 9),
        b in proptest::collection::vec(1.0f64..5.0, 9),
    ) {
        let da = DepthMap::from_depths(3, 3, a.clone()).unwrap();
        let db = DepthMap::from_depths(3, 3, b.clone()).unwrap();
        let l = level_loss(&da, &db, 1.0).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
        prop_assert_eq!(level_loss(&da, &da, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn metrics_monotone_and_symmetric(
        a in proptest::collection::vec(0.0f64..50.0, 16),
        b in proptest::collection::vec(0.0f64..50.0, 16),
    ) {
        let da = DepthMap::from_depths(4, 4, a.iter().map(|v| v + 1.0).collect()).unwrap();
        let db = DepthMap::from_depths(4, 4, b.iter().map(|v| v + 1.0).collect()).unwrap();
        let t = [2.0, 4.0, 8.0, 20.0];
        let m = depth_error_metrics(&da, &db, &t).unwrap();
        prop_assert!(m.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(m, depth_error_metrics(&db, &da, &t).unwrap());
    }

    #[test]
    fn homography_to_self_is_identity(x in -2.0f64..2.0, d in 0.1f64..100.0) {
        let c = camera(x);
        let h = homography_for_plane(&c, &c, d).unwrap();
        let h = h / h[(2, 2)];
        prop_assert!((h - nalgebra::Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn pfm_and_volume_round_trip(
        values in proptest::collection::vec(0.1f32..100.0, 12),
        holes in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let depth: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        let d = DepthMap::new(3, 4, depth.clone(), holes.iter().map(|h| !h).collect()).unwrap();
        let path = dir.path().join("d.pfm");
        write_pfm(&path, &d).unwrap();
        let back = read_pfm(&path).unwrap();
        prop_assert_eq!(back.valid_mask(), d.valid_mask());
        for (k, &z) in depth.iter().enumerate() {
            if d.valid_mask()[k] {
                prop_assert_eq!(back.depths()[k], z);
            }
        }
        let v = ScoreVolume::new(2, 2, 3, depth).unwrap();
        let path = dir.path().join("v.bin");
        write_volume(&path, &v).unwrap();
        prop_assert_eq!(read_volume(&path).unwrap(), v);
    }
}
