//! Metrics against brute-force recounts.

use mfst_core::BBox;
use mfst_harness::ope::Aggregate;
use mfst_harness::{frame_metrics, precision_curve, success_curve, EvalResult};
use proptest::prelude::*;

/// IoU by counting unit cells of integer-aligned boxes.
fn raster_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
    let inside =
        |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[0] + r[2] && y >= r[1] && y < r[1] + r[3];
    let (mut inter, mut union) = (0u32, 0u32);
    for y in -5..70 {
        for x in -5..70 {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            inter += (p && q) as u32;
            union += (p || q) as u32;
        }
    }
    inter as f64 / union as f64
}

fn int_box() -> impl Strategy<Value = [i32; 4]> {
    (0i32..40, 0i32..40, 1i32..25, 1i32..25).prop_map(|(x, y, w, h)| [x, y, w, h])
}

fn to_bbox(r: [i32; 4]) -> BBox {
    BBox::from_top_left(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn iou_and_cle_match_rasterized_counts(a in int_box(), b in int_box()) {
        let (cle, iou) = frame_metrics(&to_bbox(a), &to_bbox(b));
        prop_assert!((iou - raster_iou(a, b)).abs() <= 1e-9);
        let dx = (a[0] as f64 + a[2] as f64 / 2.0) - (b[0] as f64 + b[2] as f64 / 2.0);
        let dy = (a[1] as f64 + a[3] as f64 / 2.0) - (b[1] as f64 + b[3] as f64 / 2.0);
        prop_assert!((cle - (dx * dx + dy * dy).sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn curves_match_recounts_and_are_monotone(cles in prop::collection::vec(0.0f64..80.0, 1..60),
                                               ious in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let (p, p20) = precision_curve(&cles).unwrap();
        prop_assert_eq!(p.len(), 51);
        for (t, &v) in p.iter().enumerate() {
            let mut hits = 0;
            for &c in &cles {
                if c <= t as f64 { hits += 1; }
            }
            prop_assert_eq!(v, hits as f64 / cles.len() as f64);
        }
        prop_assert_eq!(p20, p[20]);
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));

        let (s, auc) = success_curve(&ious).unwrap();
        prop_assert_eq!(s.len(), 21);
        for (k, &v) in s.iter().enumerate() {
            let hits = ious.iter().filter(|&&u| u >= k as f64 / 20.0).count();
            prop_assert_eq!(v, hits as f64 / ious.len() as f64);
        }
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((auc - s.iter().sum::<f64>() / 21.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn aggregate_is_frame_weighted(lists in prop::collection::vec(prop::collection::vec((int_box(), int_box()), 1..12), 1..5)) {
        let results: Vec<EvalResult> = lists
            .iter()
            .map(|pairs| {
                let (p, g): (Vec<BBox>, Vec<BBox>) = pairs.iter().map(|&(a, b)| (to_bbox(a), to_bbox(b))).unzip();
                EvalResult::from_boxes(&p, &g, 1.0).unwrap()
            })
            .collect();
        let agg = Aggregate::from_results(&results).unwrap();
        let total: usize = results.iter().map(|r| r.frames()).sum();
        prop_assert_eq!(agg.frames, total);
        for t in 0..51 {
            let want: f64 = results.iter().map(|r| r.frames() as f64 * r.precision_curve[t]).sum::<f64>() / total as f64;
            prop_assert!((agg.precision_curve[t] - want).abs() <= 1e-12);
        }
        // pooled recount equals the weighted mean
        let pooled: Vec<f64> = results.iter().flat_map(|r| r.per_frame_iou.iter().copied()).collect();
        let (s, auc) = success_curve(&pooled).unwrap();
        for (a, b) in agg.success_curve.iter().zip(&s) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((agg.auc - auc).abs() <= 1e-12);
    }
}
