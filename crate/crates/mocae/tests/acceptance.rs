//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line.
//!
//! Criterion 1 checks every complete row of the source table's composite
//! average against the printed value at ±0.005. Seven printed cells are
//! inconsistent with their own (WR, SS, TI) triples (five are truncated
//! rather than rounded, two appear to be typos), so that test fails by
//! design rather than weakening the stated tolerance; the per-row
//! output names each offending cell.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use mocae::adapters::{delta_weight, negate, normalize_weights, DimensionTag, TaskVector};
use mocae::bank::{Backbone, ExpertAdapter, ExpertBank};
use mocae::config::RunConfig;
use mocae::data::{fit_tfidf, synth_corpus, Split};
use mocae::metrics::{avg_alignment, brier, ece};
use mocae::numeric::ops::{softmax_temperature, Mode};
use mocae::numeric::rng::Rng;
use mocae::numeric::tensor::Tensor1;
use mocae::router::{initial_state, route, Router, RouteOptions};
use mocae::training::model::{Head, Model};
use mocae::training::{
    build_model, entropy_loss, evaluate, kl_loss, prepare_examples, train, update_task_weights,
    LossConfig, TrainExample,
};

fn report(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {status} — {detail}");
}

/// Every row of the comparison table with all of WR/SS/TI printed:
/// (section, method, wr, ss, ti, printed avg).
const TABLE1: &[(&str, &str, f64, f64, f64, f64)] = &[
    ("base", "H3Fusion", 13.79, 42.00, 18.82, -3.13),
    ("base", "LLaMA-2-7B", 36.75, 41.03, 40.66, 12.12),
    ("base", "Mistral-7B", 83.42, 38.10, 74.83, 40.05),
    ("base", "Gemma-7B", 80.17, 39.55, 72.14, 37.58),
    ("base", "DeepSeek-7B", 82.96, 37.89, 75.92, 40.33),
    ("helpfulness", "H3Fusion", 66.52, 46.00, 26.89, 15.80),
    ("helpfulness", "LLaMA-2-7B", 88.98, 33.33, 40.65, 32.10),
    ("helpfulness", "Mistral-7B", 85.17, 36.44, 78.55, 42.42),
    ("helpfulness", "Gemma-7B", 82.66, 37.22, 75.83, 40.42),
    ("helpfulness", "DeepSeek-7B", 86.40, 35.88, 79.10, 43.20),
    ("harmlessness", "H3Fusion", 59.86, 33.00, 32.03, 19.63),
    ("harmlessness", "LLaMA-2-7B", 81.50, 23.10, 80.17, 46.19),
    ("harmlessness", "Mistral-7B", 87.00, 34.62, 81.28, 44.53),
    ("harmlessness", "Gemma-7B", 84.05, 35.70, 77.65, 42.00),
    ("harmlessness", "DeepSeek-7B", 88.76, 33.88, 82.44, 45.77),
    ("honesty", "H3Fusion", 6.80, 3.20, 41.10, 14.90),
    ("honesty", "LLaMA-2-7B", 85.51, 2.13, 63.01, 48.69),
    ("honesty", "Mistral-7B", 89.20, 32.19, 85.75, 47.58),
    ("honesty", "Gemma-7B", 86.11, 33.77, 82.99, 45.11),
    ("honesty", "DeepSeek-7B", 90.30, 31.44, 87.88, 48.91),
];

#[test]
fn criterion_01_table1_arithmetic_oracle() {
    let mut bad = Vec::new();
    for (section, method, wr, ss, ti, printed) in TABLE1 {
        let computed = avg_alignment(*wr, *ss, *ti);
        if (computed - printed).abs() > 0.005 {
            bad.push(format!(
                "{section}/{method}: computed {computed:.4} vs printed {printed:.2}"
            ));
        }
    }
    let pass = bad.is_empty();
    report(
        1,
        pass,
        &format!(
            "{} of {} printed Avg cells within ±0.005{}",
            TABLE1.len() - bad.len(),
            TABLE1.len(),
            if pass {
                String::new()
            } else {
                format!("; inconsistent cells: {}", bad.join("; "))
            }
        ),
    );
    assert!(
        pass,
        "printed Avg cells inconsistent with their own WR/SS/TI triples: {}",
        bad.join("; ")
    );
}

#[test]
fn criterion_02_routing_simplex_suite() {
    let mut rng = Rng::new(2002);
    // Logits and shifts live on a 2^-20 grid so z + c is exact in f64 and
    // shift invariance is not polluted by input rounding.
    let grid = |v: f64| (v * (1u64 << 20) as f64).round() / (1u64 << 20) as f64;
    for trial in 0..10_000 {
        let n = 2 + (trial % 7);
        let tau = rng.uniform(0.01, 10.0);
        // Bound the logit spread by the temperature: once a scaled gap
        // passes ~36 the minor exp terms fall below one ulp of the major
        // one, and the normalized maximum rounds to exactly 1.0 in f64.
        // A gap of at most 28·tau keeps every component strictly inside
        // (0, 1).
        let span = (14.0 * tau).min(10.0);
        let z = Tensor1::new((0..n).map(|_| grid(rng.uniform(-span, span))).collect());
        let pi = softmax_temperature(&z, tau).unwrap();
        let sum: f64 = pi.data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "sum {sum} at trial {trial}");
        for p in &pi.data {
            assert!(*p > 0.0 && *p < 1.0, "component {p} at trial {trial}");
        }
        let c = grid(rng.uniform(-50.0, 50.0));
        let shifted = Tensor1::new(z.data.iter().map(|v| v + c).collect());
        let pi2 = softmax_temperature(&shifted, tau).unwrap();
        for (a, b) in pi.data.iter().zip(&pi2.data) {
            assert!((a - b).abs() < 1e-12, "shift variance at trial {trial}");
        }
    }
    report(2, true, "10000 (logits, tau) pairs: simplex + shift invariance");
}

fn random_simplex(n: usize, rng: &mut Rng) -> Tensor1 {
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform(1e-6, 1.0)).collect();
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    Tensor1::new(v)
}

#[test]
fn criterion_03_regularizer_bounds() {
    let mut rng = Rng::new(2003);
    for trial in 0..10_000 {
        let n = 2 + (trial % 5);
        let pi = random_simplex(n, &mut rng);
        let prev = random_simplex(n, &mut rng);
        let h = entropy_loss(&pi).unwrap();
        assert!(h >= 0.0, "entropy {h} at trial {trial}");
        assert!(h <= (n as f64).ln() + 1e-9, "entropy {h} over bound at trial {trial}");
        let kl = kl_loss(&pi, &prev).unwrap();
        assert!(kl >= -1e-12, "kl {kl} at trial {trial}");
    }
    let uniform = Tensor1::filled(3, 1.0 / 3.0);
    assert!((entropy_loss(&uniform).unwrap() - 3f64.ln()).abs() < 1e-9);
    let pi = random_simplex(4, &mut rng);
    assert!(kl_loss(&pi, &pi).unwrap() <= 1e-12);
    report(3, true, "10000 simplex pairs: entropy/KL bounds + equality cases");
}

/// A 2-expert model with randomized parameters for gradient checking.
fn two_expert_model(seed: u64) -> Model {
    let mut rng = Rng::new(seed);
    let backbone = Backbone::new(5, 8, &mut rng);
    let experts = vec![
        ExpertAdapter::new(DimensionTag::Helpful, 8, 6, 2, &mut rng),
        ExpertAdapter::new(DimensionTag::Harmless, 8, 6, 2, &mut rng),
    ];
    let bank = ExpertBank::new(backbone, experts).unwrap();
    let router = Router::new(2, 8, 0.7, 0.1).unwrap();
    let head = Head::new(2, 8);
    let mut model = Model { bank, router, head };
    let mut p = model.params();
    for v in &mut p {
        *v += rng.uniform(-0.3, 0.3);
    }
    model.set_params(&p).unwrap();
    model
}

#[test]
fn criterion_04_gradient_correctness() {
    // Ablation arms: plain task loss, + gating loss, + regularizers.
    let arms = [
        ("MoCaE", false, false),
        ("+GL", true, false),
        ("+GL+RL", true, true),
    ];
    let mut worst_overall: f64 = 0.0;
    for (name, gl, rl) in arms {
        let cfg = LossConfig {
            enable_gl: gl,
            enable_rl: rl,
            ..LossConfig::default()
        };
        for seed in 0..20u64 {
            let model = two_expert_model(4000 + seed);
            let mut rng = Rng::new(seed ^ 0x5EED);
            let features = Tensor1::new((0..5).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let pi_prev = Tensor1::new(vec![0.6, 0.4]);
            let active = [0usize, 1usize];
            let fp = model
                .forward(&features, 0, 1, &active, &pi_prev, &cfg, Mode::Train, &mut Rng::new(7))
                .unwrap();
            let analytic = model.backward(&fp, &cfg).unwrap();
            let params = model.params();
            let mut probe = model.clone();
            let loss = |flat: &[f64]| -> mocae::Result<f64> {
                probe.set_params(flat)?;
                let fp = probe.forward(
                    &features,
                    0,
                    1,
                    &active,
                    &pi_prev,
                    &cfg,
                    Mode::Train,
                    &mut Rng::new(7),
                )?;
                Ok(fp.breakdown.total)
            };
            let worst = mocae::numeric::grad_check(loss, &params, &analytic, 1e-5).unwrap();
            assert!(
                worst < 1e-4,
                "arm {name}, seed {seed}: worst relative error {worst:.3e}"
            );
            worst_overall = worst_overall.max(worst);
        }
    }
    report(
        4,
        true,
        &format!("3 arms x 20 seeds, worst relative error {worst_overall:.3e} < 1e-4"),
    );
}

#[test]
fn criterion_05_negation_round_trip() {
    let mut rng = Rng::new(2005);
    for trial in 0..20 {
        let d_model = 6;
        let hidden = 5;
        let rank = 2;
        let mut expert = ExpertAdapter::new(DimensionTag::Honest, d_model, hidden, rank, &mut rng);
        let t = expert.task_vector.clone();
        expert.task_vector = TaskVector::zeros_rect(DimensionTag::Honest, d_model, hidden, rank);
        let h = Tensor1::new((0..d_model).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let y_base = expert.forward(&h).unwrap();
        // Apply t and negate(t) additively to the same layer.
        let mut both = expert.clone();
        both.w2 = both
            .w2
            .add(&delta_weight(&t).unwrap())
            .unwrap()
            .add(&delta_weight(&negate(&t)).unwrap())
            .unwrap();
        let y_both = both.forward(&h).unwrap();
        for (a, b) in y_base.data.iter().zip(&y_both.data) {
            assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
        }
    }
    report(5, true, "20 random task vectors: t + negate(t) recovers base output");
}

#[test]
fn criterion_06_gamma_invariance_and_update() {
    let mut rng = Rng::new(2006);
    let backbone = Backbone::new(6, 4, &mut rng);
    let experts = DimensionTag::ALL
        .iter()
        .map(|tag| ExpertAdapter::new(*tag, 4, 5, 2, &mut rng))
        .collect();
    let mut bank = ExpertBank::new(backbone, experts).unwrap();
    let router = Router::new(3, 4, 0.7, 0.0).unwrap();
    let h = Tensor1::new(vec![0.3, -0.2, 0.5, 0.1]);
    let state = initial_state(3).unwrap();

    let raw = vec![2.0, 1.0, 0.5];
    for c in [0.1, 1.0, 7.5, 1000.0] {
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        let w1 = normalize_weights(&raw).unwrap();
        let w2 = normalize_weights(&scaled).unwrap();
        for (a, b) in w1.normalized.iter().zip(&w2.normalized) {
            assert!((a - b).abs() < 1e-12);
        }
        bank.weights = w1;
        let (y1, s1) = route(&router, &h, &bank, &state, Mode::Eval, &mut Rng::new(0), RouteOptions::default()).unwrap();
        bank.weights = w2;
        let (y2, s2) = route(&router, &h, &bank, &state, Mode::Eval, &mut Rng::new(0), RouteOptions::default()).unwrap();
        assert_eq!(s1.alpha.argmax(), s2.alpha.argmax());
        for (a, b) in y1.data.iter().zip(&y2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // Equal losses preserve uniform weights exactly (losses of 0.1 make
    // scale/loss exactly 1.0, so raw weights stay bit-identical).
    let uniform = normalize_weights(&[1.0, 1.0, 1.0]).unwrap();
    let updated = update_task_weights(&uniform, &[0.1, 0.1, 0.1], 0.1, 0.5).unwrap();
    assert_eq!(updated.raw, uniform.raw);
    assert_eq!(updated.normalized, vec![1.0 / 3.0; 3]);
    report(6, true, "gamma scale invariance within 1e-12; uniform preserved under equal losses");
}

fn featurized_split(seed: u64, per_dim: usize) -> (Vec<TrainExample>, Vec<TrainExample>) {
    let corpus = synth_corpus(seed, per_dim, 2).unwrap();
    let train_set: Vec<_> = corpus.iter().filter(|e| e.split == Split::Train).cloned().collect();
    let test_set: Vec<_> = corpus.iter().filter(|e| e.split == Split::Test).cloned().collect();
    let tfidf = fit_tfidf(&train_set, 500).unwrap();
    (
        prepare_examples(&train_set, &tfidf),
        prepare_examples(&test_set, &tfidf),
    )
}

#[test]
fn criterion_07_end_to_end_training() {
    let cfg = LossConfig::default();
    // Accuracy thresholds at the documented seed.
    let (train_data, test_data) = featurized_split(42, 200);
    let mut rng = Rng::new(42);
    let mut model = build_model(500, 64, 128, 8, 2, 0.7, 0.1, &mut rng).unwrap();
    let report42 = train(&mut model, &train_data, &cfg, &mut rng).unwrap();
    let held_out = evaluate(&model, &test_data, &cfg).unwrap();

    // Strict epoch-over-epoch loss decrease across 20 seeds.
    let mut decreasing = 0;
    for seed in 0..20u64 {
        let mut rng = Rng::new(seed);
        let mut m = build_model(500, 64, 128, 8, 2, 0.7, 0.1, &mut rng).unwrap();
        let rep = train(&mut m, &train_data, &cfg, &mut rng).unwrap();
        if rep.epoch_losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    let pass = held_out.routing_accuracy >= 0.90 && held_out.task_accuracy >= 0.85 && decreasing >= 18;
    report(
        7,
        pass,
        &format!(
            "seed 42 held-out routing {:.3} (>=0.90), task {:.3} (>=0.85); loss strictly decreasing in {decreasing}/20 seeds (>=18); final-epoch train loss {:.4}",
            held_out.routing_accuracy,
            held_out.task_accuracy,
            report42.epoch_losses.last().unwrap()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_calibration_metrics() {
    // Perfectly calibrated construction: within each bin, accuracy equals
    // the shared confidence exactly.
    let mut samples = Vec::new();
    for (conf, correct_of_ten) in [(0.1, 1), (0.5, 5), (0.8, 8), (1.0, 10)] {
        for i in 0..10 {
            samples.push((conf, i < correct_of_ten));
        }
    }
    let calibrated = ece(&samples, 10).unwrap();
    assert!(calibrated <= 1e-9, "calibrated ECE {calibrated}");

    let perfect: Vec<Tensor1> = (0..5).map(|i| {
        let mut d = vec![0.0; 3];
        d[i % 3] = 1.0;
        Tensor1::new(d)
    }).collect();
    let labels: Vec<usize> = (0..5).map(|i| i % 3).collect();
    assert_eq!(brier(&perfect, &labels).unwrap(), 0.0);

    let two = vec![(0.8, true), (0.6, false)];
    assert!((ece(&two, 10).unwrap() - 0.4).abs() < 1e-12);
    let uniform = vec![Tensor1::new(vec![0.5, 0.5])];
    assert!((brier(&uniform, &[0]).unwrap() - 0.5).abs() < 1e-12);
    assert!((avg_alignment(88.98, 33.33, 40.65) - 32.10).abs() < 0.005);
    report(8, true, "calibrated ECE <= 1e-9; Brier and hand cases within 1e-12");
}

#[test]
fn criterion_09_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = RunConfig {
        synth_per_dimension: Some(60),
        out_dir: out_dir.to_string_lossy().into_owned(),
        ..RunConfig::default()
    };
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let read_artifacts = |dir: &Path| {
        (
            fs::read(dir.join("train_report.json")).unwrap(),
            fs::read(dir.join("model.mce")).unwrap(),
            fs::read(dir.join("model.mce.json")).unwrap(),
        )
    };
    mocae::cli::cmd_train(&config_path).unwrap();
    let first = read_artifacts(&out_dir);
    mocae::cli::cmd_train(&config_path).unwrap();
    let second = read_artifacts(&out_dir);
    let pass = first == second;
    report(9, pass, "two identical train runs: byte-identical report, checkpoint, sidecar");
    assert!(pass);
}

#[test]
fn criterion_10_gating_ablation_monotone() {
    let (train_data, _) = featurized_split(42, 100);
    let run = |enable_gl: bool| {
        let cfg = LossConfig {
            enable_gl,
            ..LossConfig::default()
        };
        let mut rng = Rng::new(42);
        let mut model = build_model(500, 64, 128, 8, 2, 0.7, 0.1, &mut rng).unwrap();
        train(&mut model, &train_data, &cfg, &mut rng).unwrap();
        evaluate(&model, &train_data, &cfg).unwrap().mean_gating
    };
    let with_gl = run(true);
    let without_gl = run(false);
    let pass = with_gl < without_gl;
    report(
        10,
        pass,
        &format!("final-epoch mean gating loss {with_gl:.4} with GL vs {without_gl:.4} without"),
    );
    assert!(pass);
}

#[test]
fn table1_exemplar_rows_verify_exactly() {
    // The two rows quoted as oracles are internally consistent.
    let rows: BTreeSet<&str> = TABLE1.iter().map(|r| r.1).collect();
    assert!(rows.contains("H3Fusion"));
    assert!((avg_alignment(88.98, 33.33, 40.65) - 32.10).abs() < 0.005);
    assert!((avg_alignment(13.79, 42.00, 18.82) - (-3.13)).abs() < 0.005);
}
