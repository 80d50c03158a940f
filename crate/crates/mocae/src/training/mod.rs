//! Composite objective and the two-phase training loop: each expert is
//! first trained alone on its own dimension's examples, then all experts
//! train jointly with the router, regularizers, and gating supervision.
//! Task weights are refreshed once per epoch from per-dimension losses.

pub mod model;

use serde::{Deserialize, Serialize};

use crate::adapters::{normalize_weights, WeightVector};
use crate::data::{Example, TfidfModel};
use crate::error::{Error, Result};
use crate::numeric::ops::{Mode, EPS_LOG};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::Tensor1;
use crate::training::model::Model;

/// Sign convention for the entropy regularizer in the total objective.
/// `Paper` adds +lambda1·H (penalizing routing diversity); `Prose` adds
/// -lambda1·H (encouraging it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropySign {
    Paper,
    Prose,
}

/// Which gating loss supervises the router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingVariant {
    /// -ln(pi[dimension label] + eps): route to the example's dimension.
    Supervised,
    /// n·Σ(pi_i - 1/n)², the squared coefficient of variation of the
    /// routing distribution, computed per example.
    LoadBalance,
}

/// Loss coefficients, optimizer settings, and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Entropy regularizer coefficient (lambda_1).
    pub lambda1: f64,
    /// KL-to-previous-step coefficient (lambda_2).
    pub lambda2: f64,
    /// Gating loss coefficient.
    pub gating_coeff: f64,
    pub learning_rate: f64,
    /// Total epochs, expert pre-training included.
    pub epochs: usize,
    /// Leading epochs in which each expert trains alone on its dimension.
    pub expert_epochs: usize,
    pub batch_size: usize,
    /// Epochs of backbone pre-training before it is frozen.
    pub backbone_epochs: usize,
    pub renormalize_alpha: bool,
    /// Gating-loss ablation switch.
    pub enable_gl: bool,
    /// Regularizer (entropy + KL) ablation switch.
    pub enable_rl: bool,
    pub entropy_sign: EntropySign,
    pub gating_variant: GatingVariant,
    /// Target scale for the inverse-loss task-weight update.
    pub gamma_scale: f64,
    /// EMA rate of the task-weight update (1 replaces, 0 freezes).
    pub gamma_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.1,
            lambda2: 0.01,
            gating_coeff: 0.1,
            learning_rate: 0.05,
            epochs: 3,
            expert_epochs: 1,
            batch_size: 8,
            backbone_epochs: 3,
            renormalize_alpha: false,
            enable_gl: true,
            enable_rl: true,
            entropy_sign: EntropySign::Paper,
            gating_variant: GatingVariant::Supervised,
            gamma_scale: 0.1,
            gamma_beta: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda2.is_finite() && self.gating_coeff.is_finite())
        {
            return Err(Error::Config("loss coefficients must be finite".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.expert_epochs > self.epochs {
            return Err(Error::Config(format!(
                "expert_epochs {} exceeds epochs {}",
                self.expert_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_beta) {
            return Err(Error::Config(format!(
                "gamma_beta must be in [0, 1], got {}",
                self.gamma_beta
            )));
        }
        if self.gamma_scale <= 0.0 || !self.gamma_scale.is_finite() {
            return Err(Error::Config(format!(
                "gamma_scale must be > 0, got {}",
                self.gamma_scale
            )));
        }
        Ok(())
    }
}

/// One evaluation of the composite objective, term by term. `entropy`
/// stores the signed contribution actually added (H under the paper
/// convention, -H under prose), so
/// total = task + lambda1·entropy + lambda2·kl + gating_coeff·gating
/// holds exactly regardless of configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub entropy: f64,
    pub kl: f64,
    pub gating: f64,
    pub total: f64,
}

/// Shannon entropy H(pi) = -Σ pi ln pi with 0·ln0 := 0. The input must
/// lie on the probability simplex to within 1e-6.
pub fn entropy_loss(pi: &Tensor1) -> Result<f64> {
    validate_simplex(pi, "entropy_loss")?;
    Ok(-pi
        .data
        .iter()
        .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>())
}

/// KL(pi ‖ pi_prev) with the epsilon-guarded denominator.
pub fn kl_loss(pi: &Tensor1, pi_prev: &Tensor1) -> Result<f64> {
    if pi.len() != pi_prev.len() {
        return Err(Error::Shape(format!(
            "kl_loss: lengths {} vs {}",
            pi.len(),
            pi_prev.len()
        )));
    }
    validate_simplex(pi, "kl_loss")?;
    validate_simplex(pi_prev, "kl_loss (previous)")?;
    Ok(pi
        .data
        .iter()
        .zip(&pi_prev.data)
        .map(|(p, q)| {
            if *p > 0.0 {
                p * (p / (q + EPS_LOG)).ln()
            } else {
                0.0
            }
        })
        .sum())
}

/// Supervised gating loss: cross-entropy of the routing distribution
/// against the example's dimension label.
pub fn gating_loss(pi: &Tensor1, label: usize) -> Result<f64> {
    validate_simplex(pi, "gating_loss")?;
    if label >= pi.len() {
        return Err(Error::Index(format!(
            "gating_loss: label {label} out of range for {} experts",
            pi.len()
        )));
    }
    Ok(-(pi.data[label] + EPS_LOG).ln())
}

/// Load-balance gating variant: n·Σ(pi_i - 1/n)².
pub fn load_balance_loss(pi: &Tensor1) -> Result<f64> {
    validate_simplex(pi, "load_balance_loss")?;
    let n = pi.len() as f64;
    Ok(n * pi
        .data
        .iter()
        .map(|p| (p - 1.0 / n) * (p - 1.0 / n))
        .sum::<f64>())
}

fn validate_simplex(pi: &Tensor1, ctx: &str) -> Result<()> {
    if pi.len() == 0 {
        return Err(Error::Argument(format!("{ctx}: empty distribution")));
    }
    let mut sum = 0.0;
    for p in &pi.data {
        if !p.is_finite() || *p < 0.0 {
            return Err(Error::Domain(format!(
                "{ctx}: probability {p} outside [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "{ctx}: probabilities sum to {sum}, off the simplex"
        )));
    }
    Ok(())
}

/// Combine the four terms under the configured signs and switches.
/// `entropy_h` is the raw (always non-negative) entropy H(pi).
pub fn total_loss(
    task: f64,
    entropy_h: f64,
    kl: f64,
    gating: f64,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    for (name, v) in [("task", task), ("entropy", entropy_h), ("kl", kl), ("gating", gating)] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("total_loss: non-finite {name} term {v}")));
        }
    }
    let signed_h = match cfg.entropy_sign {
        EntropySign::Paper => entropy_h,
        EntropySign::Prose => -entropy_h,
    };
    let entropy = if cfg.enable_rl { signed_h } else { 0.0 };
    let kl = if cfg.enable_rl { kl } else { 0.0 };
    let gating = if cfg.enable_gl { gating } else { 0.0 };
    let total = task + cfg.lambda1 * entropy + cfg.lambda2 * kl + cfg.gating_coeff * gating;
    Ok(LossBreakdown {
        task,
        entropy,
        kl,
        gating,
        total,
    })
}

/// Inverse-loss task-weight refresh:
/// raw_i <- (1-beta)·raw_i + beta·scale/max(L̄_i, 1e-6), then convex
/// renormalization.
pub fn update_task_weights(
    weights: &WeightVector,
    avg_losses: &[f64],
    scale: f64,
    beta: f64,
) -> Result<WeightVector> {
    if avg_losses.len() != weights.len() {
        return Err(Error::Shape(format!(
            "update_task_weights: {} losses for {} weights",
            avg_losses.len(),
            weights.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!(
            "update_task_weights: beta {beta} outside [0, 1]"
        )));
    }
    let mut raw = Vec::with_capacity(weights.len());
    for (w, l) in weights.raw.iter().zip(avg_losses) {
        if !l.is_finite() {
            return Err(Error::Numerical(format!(
                "update_task_weights: non-finite average loss {l}"
            )));
        }
        raw.push((1.0 - beta) * w + beta * scale / l.max(1e-6));
    }
    normalize_weights(&raw)
}

/// A featurized training example: TF-IDF features, the alignment
/// dimension as an expert index, and the class label within it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: Tensor1,
    pub dimension: usize,
    pub class: usize,
}

/// Featurize corpus examples against a fitted TF-IDF model.
pub fn prepare_examples(examples: &[Example], tfidf: &TfidfModel) -> Vec<TrainExample> {
    examples
        .iter()
        .map(|e| TrainExample {
            features: tfidf.featurize(&e.text),
            dimension: e.dimension.index(),
            class: e.class_label,
        })
        .collect()
}

/// Training summary. `epoch_losses` and `expert_task_losses` are
/// evaluation-mode means over the full training set at the end of each
/// epoch; `gamma_trajectory` holds the normalized task weights after
/// each epoch's refresh (length equals epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub expert_task_losses: Vec<Vec<f64>>,
    pub gamma_trajectory: Vec<Vec<f64>>,
    pub routing_accuracy: f64,
    pub task_accuracy: f64,
}

/// Evaluation-mode statistics over a dataset with all experts active.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean_total: f64,
    pub mean_task: f64,
    /// Mean unweighted gating term, even when its coefficient is off.
    pub mean_gating: f64,
    /// Mean task loss over each dimension's examples.
    pub per_dim_task: Vec<f64>,
    /// Fraction of examples whose routing argmax matches the dimension.
    pub routing_accuracy: f64,
    /// Fraction of examples whose head argmax matches the class.
    pub task_accuracy: f64,
}

/// Full-pass evaluation: composite loss with a uniform previous routing
/// distribution, dropout disabled.
pub fn evaluate(model: &Model, data: &[TrainExample], cfg: &LossConfig) -> Result<EvalStats> {
    if data.is_empty() {
        return Err(Error::Argument("evaluate: empty dataset".into()));
    }
    let n = model.bank.n();
    let active: Vec<usize> = (0..n).collect();
    let uniform = Tensor1::filled(n, 1.0 / n as f64);
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    let mut task = 0.0;
    let mut gating = 0.0;
    let mut dim_task = vec![0.0; n];
    let mut dim_count = vec![0usize; n];
    let mut route_hits = 0usize;
    let mut task_hits = 0usize;
    for ex in data {
        let fp = model.forward(
            &ex.features,
            ex.dimension,
            ex.class,
            &active,
            &uniform,
            cfg,
            Mode::Eval,
            &mut rng,
        )?;
        total += fp.breakdown.total;
        task += fp.breakdown.task;
        gating += -(fp.pi.data[ex.dimension] + EPS_LOG).ln();
        dim_task[ex.dimension] += fp.breakdown.task;
        dim_count[ex.dimension] += 1;
        if fp.pi.argmax() == ex.dimension {
            route_hits += 1;
        }
        if fp.class_probs.argmax() == ex.class {
            task_hits += 1;
        }
    }
    let m = data.len() as f64;
    let per_dim_task = dim_task
        .iter()
        .zip(&dim_count)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
        .collect();
    Ok(EvalStats {
        mean_total: total / m,
        mean_task: task / m,
        mean_gating: gating / m,
        per_dim_task,
        routing_accuracy: route_hits as f64 / m,
        task_accuracy: task_hits as f64 / m,
    })
}

/// Pre-train the input projection on the pooled corpus with a temporary
/// linear head over joint (dimension, class) labels, then freeze it. The
/// joint labels force the projected state to separate dimensions, which
/// the frozen-backbone routing phase depends on.
fn pretrain_backbone(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<()> {
    let d_model = model.bank.backbone.d_model();
    let classes = model.head.classes();
    let joint = model.bank.n() * classes;
    let mut head_w = crate::numeric::tensor::Tensor2::zeros(joint, d_model);
    let mut head_b = Tensor1::zeros(joint);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.backbone_epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let ex = &data[i];
            let label = ex.dimension * classes + ex.class;
            let h = model.bank.backbone.input_projection(&ex.features)?;
            let logits = crate::numeric::ops::linear_forward(&head_w, &head_b, &h)?;
            let probs = crate::numeric::ops::softmax_temperature(&logits, 1.0)?;
            let mut g_logits = probs;
            g_logits.data[label] -= 1.0;
            // Head gradient and backprop through tanh into W_in, b_in.
            let g_h = head_w.matvec_t(&g_logits)?;
            let lr = cfg.learning_rate;
            for c in 0..joint {
                let row = &mut head_w.data[c * d_model..(c + 1) * d_model];
                for (w, hv) in row.iter_mut().zip(&h.data) {
                    *w -= lr * g_logits.data[c] * hv;
                }
                head_b.data[c] -= lr * g_logits.data[c];
            }
            let d_feat = model.bank.backbone.d_feat();
            for r in 0..d_model {
                let g_pre = g_h.data[r] * (1.0 - h.data[r] * h.data[r]);
                if g_pre == 0.0 {
                    continue;
                }
                let row = &mut model.bank.backbone.w_in.data[r * d_feat..(r + 1) * d_feat];
                for (w, x) in row.iter_mut().zip(&ex.features.data) {
                    *w -= lr * g_pre * x;
                }
                model.bank.backbone.b_in.data[r] -= lr * g_pre;
            }
        }
    }
    model.bank.backbone.frozen = true;
    Ok(())
}

/// Two-phase training. The first `expert_epochs` epochs train each
/// expert alone on its dimension's examples (the router receives no
/// gradient there); the remaining epochs train everything jointly with
/// the previous batch's mean routing distribution feeding the KL term.
pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &LossConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("train: empty dataset".into()));
    }
    let n = model.bank.n();
    if !model.bank.backbone.frozen {
        pretrain_backbone(model, data, cfg, rng)?;
    }

    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        expert_task_losses: Vec::new(),
        gamma_trajectory: Vec::new(),
        routing_accuracy: 0.0,
        task_accuracy: 0.0,
    };
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        if epoch < cfg.expert_epochs {
            // Phase 1: each expert alone on its own dimension.
            for e in 0..n {
                let mut idx: Vec<usize> =
                    (0..data.len()).filter(|i| data[*i].dimension == e).collect();
                rng.shuffle(&mut idx);
                let single_prev = Tensor1::new(vec![1.0]);
                for &i in &idx {
                    let ex = &data[i];
                    let fp = model.forward(
                        &ex.features,
                        ex.dimension,
                        ex.class,
                        &[e],
                        &single_prev,
                        cfg,
                        Mode::Train,
                        rng,
                    )?;
                    let grads = model.backward(&fp, cfg)?;
                    check_finite(&grads, step)?;
                    model.apply_gradients(&grads, cfg.learning_rate)?;
                    step += 1;
                }
            }
        } else {
            // Phase 2: joint training over all experts.
            let active: Vec<usize> = (0..n).collect();
            let mut order: Vec<usize> = (0..data.len()).collect();
            rng.shuffle(&mut order);
            let mut pi_prev = Tensor1::filled(n, 1.0 / n as f64);
            for batch in order.chunks(cfg.batch_size) {
                let mut acc: Option<Vec<f64>> = None;
                let mut pi_mean = vec![0.0; n];
                for &i in batch {
                    let ex = &data[i];
                    let fp = model.forward(
                        &ex.features,
                        ex.dimension,
                        ex.class,
                        &active,
                        &pi_prev,
                        cfg,
                        Mode::Train,
                        rng,
                    )?;
                    if !fp.breakdown.total.is_finite() {
                        return Err(Error::Numerical(format!(
                            "train: non-finite loss at step {step}"
                        )));
                    }
                    let grads = model.backward(&fp, cfg)?;
                    for (p, g) in pi_mean.iter_mut().zip(&fp.pi.data) {
                        *p += g / batch.len() as f64;
                    }
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(a) => {
                            for (av, gv) in a.iter_mut().zip(&grads) {
                                *av += gv;
                            }
                        }
                    }
                }
                let mut grads = acc.expect("non-empty batch");
                for g in &mut grads {
                    *g /= batch.len() as f64;
                }
                check_finite(&grads, step)?;
                model.apply_gradients(&grads, cfg.learning_rate)?;
                pi_prev = Tensor1::new(pi_mean);
                step += 1;
            }
        }

        // End of epoch: evaluation-mode statistics and the task-weight
        // refresh from per-dimension losses.
        let stats = evaluate(model, data, cfg)?;
        report.epoch_losses.push(stats.mean_total);
        report.expert_task_losses.push(stats.per_dim_task.clone());
        model.bank.weights = update_task_weights(
            &model.bank.weights,
            &stats.per_dim_task,
            cfg.gamma_scale,
            cfg.gamma_beta,
        )?;
        report.gamma_trajectory.push(model.bank.weights.normalized.clone());
        report.routing_accuracy = stats.routing_accuracy;
        report.task_accuracy = stats.task_accuracy;
    }
    Ok(report)
}

fn check_finite(grads: &[f64], step: u64) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "train: non-finite gradient at step {step}"
        )));
    }
    Ok(())
}

/// Assemble an untrained model: random backbone and experts, zeroed
/// router heads, zeroed head, uniform task weights.
pub fn build_model(
    d_feat: usize,
    d_model: usize,
    hidden: usize,
    rank: usize,
    classes: usize,
    tau: f64,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<Model> {
    use crate::adapters::DimensionTag;
    use crate::bank::{Backbone, ExpertAdapter, ExpertBank};
    use crate::router::Router;
    use crate::training::model::Head;

    let backbone = Backbone::new(d_feat, d_model, rng);
    let experts = DimensionTag::ALL
        .iter()
        .map(|tag| ExpertAdapter::new(*tag, d_model, hidden, rank, rng))
        .collect();
    let bank = ExpertBank::new(backbone, experts)?;
    let router = Router::new(bank.n(), d_model, tau, dropout_p)?;
    let head = Head::new(classes, d_model);
    Ok(Model { bank, router, head })
}
