//! Property tests for the spec-level invariants that hold over whole input
//! families rather than single examples.

use proptest::prelude::*;

use nowcast_core::evaluation::{categorical_scores, contingency, continuous_scores, ContingencyTable};
use nowcast_core::grid::{
    inverse_transform, transform, window, GridFrame, Sequence, WindowConfig,
};
use nowcast_core::tensor::ConvSpec;

fn sequence_of(total: usize) -> Sequence {
    let frames: Vec<GridFrame> = (0..total)
        .map(|i| GridFrame::new(vec![i as f64; 4], 2, 2, i as i64 * 1800).unwrap())
        .collect();
    Sequence::new(frames, 1800).unwrap()
}

proptest! {
    #[test]
    fn window_count_and_coverage(total in 1usize..40, n_in in 1usize..6, n_out in 1usize..4) {
        let cfg = WindowConfig { n_in, n_out, stride: 1 };
        let seq = sequence_of(total);
        let samples = window(&seq, &cfg).unwrap();
        if total < n_in + n_out {
            prop_assert!(samples.is_empty());
        } else {
            prop_assert_eq!(samples.len(), total - n_in - n_out + 1);
            // Every source frame appears in at least one sample.
            let mut seen = vec![false; total];
            for s in &samples {
                for f in s.input.iter().chain(s.target.iter()) {
                    seen[(f.timestamp / 1800) as usize] = true;
                }
            }
            prop_assert!(seen.iter().all(|&v| v));
        }
    }

    #[test]
    fn window_count_respects_stride(total in 12usize..60, stride in 1usize..5) {
        let cfg = WindowConfig { n_in: 9, n_out: 3, stride };
        let samples = window(&sequence_of(total), &cfg).unwrap();
        prop_assert_eq!(samples.len(), (total - 12) / stride + 1);
    }

    #[test]
    fn transform_roundtrip_and_monotonicity(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let ta = transform(a).unwrap();
        let back = inverse_transform(ta);
        prop_assert!((back - a).abs() <= 1e-6 * a.max(1.0));
        if a < b {
            prop_assert!(ta < transform(b).unwrap());
        }
    }

    #[test]
    fn conv_shape_law_over_small_grid(
        d in 1usize..7, k in 1usize..4, s in 1usize..4, p in 0usize..3,
    ) {
        prop_assume!(d + 2 * p >= k);
        let spec = ConvSpec::new((k, k, k), (s, s, s), (p, p, p), 1, 1).unwrap();
        let (ot, oh, ow) = spec.out_dims((d, d, d)).unwrap();
        let want = (d + 2 * p - k) / s + 1;
        prop_assert_eq!((ot, oh, ow), (want, want, want));
        // Transposed direction follows its closed form whenever the result
        // is a positive size.
        if (want - 1) * s + k > 2 * p {
            let grown = spec.transpose_out_dims((want, want, want)).unwrap();
            prop_assert_eq!(grown.0, (want - 1) * s + k - 2 * p);
        } else {
            prop_assert!(spec.transpose_out_dims((want, want, want)).is_err());
        }
    }

    #[test]
    fn contingency_partitions_pixels(
        pred in prop::collection::vec(0.0f64..2.0, 1..64),
        thr in 0.01f64..1.5,
    ) {
        let obs: Vec<f64> = pred.iter().rev().copied().collect();
        let t = contingency(&pred, &obs, thr).unwrap();
        prop_assert_eq!(t.total() as usize, pred.len());
    }

    #[test]
    fn categorical_scores_stay_in_range(h in 0u64..200, f in 0u64..200, m in 0u64..200, z in 0u64..200) {
        prop_assume!(h + f + m + z > 0);
        let t = ContingencyTable { hits: h, false_alarms: f, misses: m, correct_negatives: z };
        let s = categorical_scores(&t);
        for v in [s.pod, s.far, s.acc].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(hss) = s.hss {
            prop_assert!(hss <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn cc_affine_invariant_and_bias_equivariant(
        obs in prop::collection::vec(0.1f64..5.0, 8..32),
        scale in 0.1f64..4.0,
        shift in -2.0f64..2.0,
    ) {
        // Estimates correlate with observations but are not identical.
        let est: Vec<f64> = obs.iter().enumerate().map(|(i, &o)| o * 0.8 + (i % 3) as f64 * 0.2).collect();
        let base = continuous_scores(&est, &obs, false).unwrap();
        prop_assume!(base.cc.is_some());
        let affine: Vec<f64> = est.iter().map(|&e| scale * e + shift).collect();
        let moved = continuous_scores(&affine, &obs, false).unwrap();
        prop_assert!((base.cc.unwrap() - moved.cc.unwrap()).abs() < 1e-9);
        let scaled: Vec<f64> = est.iter().map(|&e| scale * e).collect();
        let scaled_scores = continuous_scores(&scaled, &obs, false).unwrap();
        prop_assert!((scaled_scores.bias.unwrap() - scale * base.bias.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn hss_is_one_iff_no_misclassification() {
    for h in 1..5u64 {
        for z in 1..5u64 {
            for f in 0..3u64 {
                for m in 0..3u64 {
                    let t = ContingencyTable {
                        hits: h,
                        false_alarms: f,
                        misses: m,
                        correct_negatives: z,
                    };
                    let hss = categorical_scores(&t).hss.unwrap();
                    if f == 0 && m == 0 {
                        assert_eq!(hss, 1.0);
                    } else {
                        assert!(hss < 1.0);
                    }
                    if h * z == f * m {
                        assert_eq!(hss, 0.0);
                    }
                }
            }
        }
    }
}
