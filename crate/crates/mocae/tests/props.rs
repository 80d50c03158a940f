//! Property tests: algebraic invariants over randomized inputs, and
//! no-panic guarantees for the text/binary decoders (complementing the
//! fuzz targets with in-tree coverage).

use proptest::prelude::*;

use mocae::adapters::{normalize_weights, DimensionTag, TaskVector};
use mocae::config::parse_run_config;
use mocae::data::parse_example_line;
use mocae::io::{decode_model, decode_task_vector, encode_task_vector};
use mocae::metrics::ece;
use mocae::numeric::ops::softmax_temperature;
use mocae::numeric::tensor::{Tensor1, Tensor2};
use mocae::router::fuse_weights;

fn finite_vec(len: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, len)
}

proptest! {
    #[test]
    fn softmax_is_a_simplex_point(
        logits in finite_vec(5, 20.0),
        tau in 0.05f64..10.0,
    ) {
        let pi = softmax_temperature(&Tensor1::new(logits), tau).unwrap();
        prop_assert!(pi.data.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!((pi.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant(
        logits in finite_vec(4, 10.0),
        shift in -50.0f64..50.0,
        tau in 0.1f64..5.0,
    ) {
        let base = softmax_temperature(&Tensor1::new(logits.clone()), tau).unwrap();
        let shifted = softmax_temperature(
            &Tensor1::new(logits.iter().map(|z| z + shift).collect()),
            tau,
        )
        .unwrap();
        for (a, b) in base.data.iter().zip(&shifted.data) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn fused_weights_renormalized_sum_to_one(
        logits in finite_vec(3, 5.0),
        raw in prop::collection::vec(0.01f64..10.0, 3),
    ) {
        let pi = softmax_temperature(&Tensor1::new(logits), 0.7).unwrap();
        let gamma = normalize_weights(&raw).unwrap();
        let alpha = fuse_weights(&pi, &gamma.normalized, true).unwrap();
        prop_assert!((alpha.sum() - 1.0).abs() < 1e-9);
        // Without renormalization the mass is bounded by the largest gamma.
        let plain = fuse_weights(&pi, &gamma.normalized, false).unwrap();
        let max_gamma = gamma
            .normalized
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(plain.sum() <= max_gamma + 1e-12);
    }

    #[test]
    fn normalize_weights_invariants(raw in prop::collection::vec(0.01f64..100.0, 1..6)) {
        let w = normalize_weights(&raw).unwrap();
        prop_assert!((w.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Order preserved.
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    prop_assert!(w.normalized[i] <= w.normalized[j]);
                }
            }
        }
        // Scale invariant.
        let scaled: Vec<f64> = raw.iter().map(|r| r * 3.5).collect();
        let ws = normalize_weights(&scaled).unwrap();
        for (a, b) in w.normalized.iter().zip(&ws.normalized) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn task_vector_binary_round_trip(
        tag_idx in 0usize..3,
        out_dim in 1usize..6,
        in_dim in 1usize..6,
        rank in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = mocae::numeric::rng::Rng::new(seed);
        let tag = DimensionTag::ALL[tag_idx];
        let down = Tensor2 {
            rows: rank,
            cols: in_dim,
            data: (0..rank * in_dim).map(|_| rng.uniform(-3.0, 3.0)).collect(),
        };
        let up = Tensor2 {
            rows: out_dim,
            cols: rank,
            data: (0..out_dim * rank).map(|_| rng.uniform(-3.0, 3.0)).collect(),
        };
        let tv = TaskVector::new(tag, down, up).unwrap();
        let decoded = decode_task_vector(&encode_task_vector(&tv)).unwrap();
        prop_assert_eq!(tv, decoded);
    }

    #[test]
    fn task_vector_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_task_vector(&bytes);
    }

    #[test]
    fn model_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = decode_model(&bytes);
    }

    #[test]
    fn corpus_line_parser_never_panics(line in ".{0,200}") {
        let _ = parse_example_line(&line, 1);
    }

    #[test]
    fn run_config_parser_never_panics(text in ".{0,200}") {
        let _ = parse_run_config(&text);
    }

    #[test]
    fn ece_is_bounded(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40),
        bins in 1usize..20,
    ) {
        let e = ece(&pairs, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e), "ece {e}");
    }
}
