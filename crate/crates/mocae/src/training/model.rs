//! The joint model (bank + router + classification head) with manual
//! analytic gradients for the composite objective. A forward pass can be
//! restricted to an active subset of experts: expert pre-training runs
//! with a single active expert, the joint phase with all of them.

use serde::{Deserialize, Serialize};

use crate::bank::ExpertBank;
use crate::error::{Error, Result};
use crate::numeric::ops::{
    dropout_mask, linear_forward, softmax_temperature, Mode, EPS_LOG, LN_EPS,
};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::{outer, Tensor1, Tensor2};
use crate::router::Router;
use crate::training::{total_loss, EntropySign, GatingVariant, LossBreakdown, LossConfig};

/// Linear classification head over the calibrated embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Tensor2,
    pub b: Tensor1,
}

impl Head {
    pub fn new(classes: usize, d_model: usize) -> Self {
        Head {
            w: Tensor2::zeros(classes, d_model),
            b: Tensor1::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows
    }
}

/// Bank + router + head. The backbone inside the bank is frozen during
/// joint training; everything else is trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub bank: ExpertBank,
    pub router: Router,
    pub head: Head,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardPass {
    pub active: Vec<usize>,
    pub h: Tensor1,
    pre1: Vec<Tensor1>,
    act: Vec<Tensor1>,
    pub expert_outputs: Vec<Tensor1>,
    pub logits: Tensor1,
    pub pi: Tensor1,
    pi_prev: Tensor1,
    pub alpha: Tensor1,
    alpha_sum: f64,
    sigma: f64,
    xhat: Tensor1,
    mask: Option<Tensor1>,
    pub y_cal: Tensor1,
    pub class_probs: Tensor1,
    class_label: usize,
    gate_label: Option<usize>,
    pub breakdown: LossBreakdown,
}

impl Model {
    /// Composite-loss forward over the active expert subset.
    ///
    /// `pi_prev` must have the active set's length (uniform at step 0).
    /// `gate_dim` is the example's alignment-dimension expert index in
    /// bank order; it contributes a gating term only when that expert is
    /// active.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        features: &Tensor1,
        gate_dim: usize,
        class_label: usize,
        active: &[usize],
        pi_prev: &Tensor1,
        cfg: &LossConfig,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardPass> {
        if active.is_empty() {
            return Err(Error::Argument("forward: empty active expert set".into()));
        }
        if pi_prev.len() != active.len() {
            return Err(Error::Shape(format!(
                "forward: pi_prev length {} vs {} active experts",
                pi_prev.len(),
                active.len()
            )));
        }
        if class_label >= self.head.classes() {
            return Err(Error::Index(format!(
                "forward: class label {class_label} out of range for {} classes",
                self.head.classes()
            )));
        }
        let h = self.bank.backbone.input_projection(features)?;

        // Active-expert FFN paths, keeping pre-activations for backward.
        let mut pre1 = Vec::with_capacity(active.len());
        let mut act = Vec::with_capacity(active.len());
        let mut expert_outputs = Vec::with_capacity(active.len());
        for &e in active {
            let expert = self
                .bank
                .experts
                .get(e)
                .ok_or_else(|| Error::Index(format!("forward: expert {e} out of range")))?;
            let p = linear_forward(&expert.w1, &expert.b1, &h)?;
            let a = Tensor1::new(p.data.iter().map(|v| v.max(0.0)).collect());
            let mut y = linear_forward(&expert.w2, &expert.b2, &a)?;
            let da = expert.task_vector.down.matvec(&a)?;
            let dy = expert.task_vector.up.matvec(&da)?;
            for (yv, dv) in y.data.iter_mut().zip(&dy.data) {
                *yv += dv;
            }
            pre1.push(p);
            act.push(a);
            expert_outputs.push(y);
        }

        // Routing over the active subset.
        let mut z = Tensor1::zeros(active.len());
        for (j, &e) in active.iter().enumerate() {
            let mut acc = self.router.b_r.data[e];
            for (w, hv) in self.router.w_r.row(e).iter().zip(&h.data) {
                acc += w * hv;
            }
            z.data[j] = acc;
        }
        if !z.all_finite() {
            return Err(Error::Numerical("forward: non-finite router logits".into()));
        }
        let pi = softmax_temperature(&z, self.router.tau)?;
        let gamma: Vec<f64> = active
            .iter()
            .map(|&e| self.bank.weights.normalized[e])
            .collect();
        let mut alpha: Vec<f64> = pi.data.iter().zip(&gamma).map(|(p, g)| p * g).collect();
        let alpha_sum: f64 = alpha.iter().sum();
        if cfg.renormalize_alpha {
            if alpha_sum <= 0.0 {
                return Err(Error::Numerical("forward: zero alpha mass".into()));
            }
            for a in &mut alpha {
                *a /= alpha_sum;
            }
        }
        let alpha = Tensor1::new(alpha);

        // Fusion, residual, layer norm, dropout.
        let mut fused = Tensor1::zeros(h.len());
        for (a, y) in alpha.data.iter().zip(&expert_outputs) {
            for (f, v) in fused.data.iter_mut().zip(&y.data) {
                *f += a * v;
            }
        }
        let u = fused.add(&h)?;
        let n = u.len() as f64;
        let mean = u.sum() / n;
        let var = u.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sigma = (var + LN_EPS).sqrt();
        let xhat = Tensor1::new(u.data.iter().map(|v| (v - mean) / sigma).collect());
        let normed = Tensor1::new(
            xhat.data
                .iter()
                .zip(self.router.gain.data.iter().zip(&self.router.bias.data))
                .map(|(x, (g, b))| g * x + b)
                .collect(),
        );
        let (mask, y_cal) = match mode {
            Mode::Eval => (None, normed),
            Mode::Train => {
                let m = dropout_mask(normed.len(), self.router.dropout_p, rng)?;
                let dropped = Tensor1::new(
                    normed.data.iter().zip(&m.data).map(|(v, mv)| v * mv).collect(),
                );
                (Some(m), dropped)
            }
        };

        // Task head.
        let class_logits = linear_forward(&self.head.w, &self.head.b, &y_cal)?;
        let class_probs = softmax_temperature(&class_logits, 1.0)?;
        let task = -(class_probs.data[class_label] + EPS_LOG).ln();

        // Regularizers over the routing distribution.
        let entropy_h = -pi
            .data
            .iter()
            .map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();
        let kl = pi
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
            .sum::<f64>();
        let gate_label = active.iter().position(|&e| e == gate_dim);
        let gating = match (gate_label, cfg.gating_variant) {
            (Some(g), GatingVariant::Supervised) => -(pi.data[g] + EPS_LOG).ln(),
            (_, GatingVariant::LoadBalance) => {
                let k = pi.len() as f64;
                k * pi
                    .data
                    .iter()
                    .map(|p| (p - 1.0 / k) * (p - 1.0 / k))
                    .sum::<f64>()
            }
            (None, GatingVariant::Supervised) => 0.0,
        };

        let breakdown = total_loss(task, entropy_h, kl, gating, cfg)?;

        Ok(ForwardPass {
            active: active.to_vec(),
            h,
            pre1,
            act,
            expert_outputs,
            logits: z,
            pi,
            pi_prev: pi_prev.clone(),
            alpha,
            alpha_sum,
            sigma,
            xhat,
            mask,
            y_cal,
            class_probs,
            class_label,
            gate_label,
            breakdown,
        })
    }

    /// Analytic gradient of the composite loss from a forward pass, as a
    /// flat vector in the `params()` layout. Inactive experts receive
    /// zero gradients; the frozen backbone carries no parameters here.
    pub fn backward(&self, fp: &ForwardPass, cfg: &LossConfig) -> Result<Vec<f64>> {
        let d_model = self.bank.backbone.d_model();
        let n_active = fp.active.len();
        let mut grads = Grads::zeros(self);

        // Task head. d(-ln(p_t + eps))/dlogit via the softmax identity,
        // with the exact eps correction factor.
        let p_t = fp.class_probs.data[fp.class_label];
        let eps_scale = p_t / (p_t + EPS_LOG);
        let mut g_logits = fp.class_probs.clone();
        g_logits.data[fp.class_label] -= 1.0;
        let g_logits = g_logits.scale(eps_scale);
        grads.head_w = outer(&g_logits, &fp.y_cal);
        grads.head_b = g_logits.clone();
        let g_ycal = self.head.w.matvec_t(&g_logits)?;

        // Dropout.
        let g_normed = match &fp.mask {
            Some(m) => Tensor1::new(
                g_ycal.data.iter().zip(&m.data).map(|(g, mv)| g * mv).collect(),
            ),
            None => g_ycal,
        };

        // LayerNorm affine + normalization.
        grads.gain = Tensor1::new(
            g_normed
                .data
                .iter()
                .zip(&fp.xhat.data)
                .map(|(g, x)| g * x)
                .collect(),
        );
        grads.bias = g_normed.clone();
        let g_xhat = Tensor1::new(
            g_normed
                .data
                .iter()
                .zip(&self.router.gain.data)
                .map(|(g, gn)| g * gn)
                .collect(),
        );
        let nd = d_model as f64;
        let m1 = g_xhat.sum() / nd;
        let m2 = g_xhat
            .data
            .iter()
            .zip(&fp.xhat.data)
            .map(|(g, x)| g * x)
            .sum::<f64>()
            / nd;
        let g_u = Tensor1::new(
            g_xhat
                .data
                .iter()
                .zip(&fp.xhat.data)
                .map(|(g, x)| (g - m1 - x * m2) / fp.sigma)
                .collect(),
        );
        // g_u is also the gradient into the fused output; the residual
        // branch into h stops at the frozen backbone.

        // Fusion: alpha and expert outputs.
        let mut g_alpha = vec![0.0; n_active];
        for (j, y) in fp.expert_outputs.iter().enumerate() {
            g_alpha[j] = g_u.dot(y)?;
        }
        let mut g_pi = vec![0.0; n_active];
        let gamma: Vec<f64> = fp
            .active
            .iter()
            .map(|&e| self.bank.weights.normalized[e])
            .collect();
        if cfg.renormalize_alpha {
            // alpha_j = pi_j g_j / s with s = sum pi g.
            let dot: f64 = g_alpha
                .iter()
                .zip(&fp.alpha.data)
                .map(|(g, a)| g * a)
                .sum();
            for j in 0..n_active {
                g_pi[j] = gamma[j] / fp.alpha_sum * (g_alpha[j] - dot);
            }
        } else {
            for j in 0..n_active {
                g_pi[j] = gamma[j] * g_alpha[j];
            }
        }

        // Regularizer gradients on pi.
        if cfg.enable_rl {
            let ent_sign = match cfg.entropy_sign {
                EntropySign::Paper => 1.0,
                EntropySign::Prose => -1.0,
            };
            for j in 0..n_active {
                let p = fp.pi.data[j];
                if p > 0.0 {
                    g_pi[j] += cfg.lambda1 * ent_sign * (-(p.ln()) - 1.0);
                    g_pi[j] += cfg.lambda2 * ((p / (fp.pi_prev.data[j] + EPS_LOG)).ln() + 1.0);
                }
            }
        }
        if cfg.enable_gl {
            match cfg.gating_variant {
                GatingVariant::Supervised => {
                    if let Some(g) = fp.gate_label {
                        g_pi[g] += cfg.gating_coeff * (-1.0 / (fp.pi.data[g] + EPS_LOG));
                    }
                }
                GatingVariant::LoadBalance => {
                    let k = n_active as f64;
                    for j in 0..n_active {
                        g_pi[j] += cfg.gating_coeff * 2.0 * k * (fp.pi.data[j] - 1.0 / k);
                    }
                }
            }
        }

        // Temperature softmax backward.
        let inner: f64 = g_pi.iter().zip(&fp.pi.data).map(|(g, p)| g * p).sum();
        let g_z: Vec<f64> = fp
            .pi
            .data
            .iter()
            .zip(&g_pi)
            .map(|(p, g)| p * (g - inner) / self.router.tau)
            .collect();

        // Router heads (only active rows receive gradient).
        for (j, &e) in fp.active.iter().enumerate() {
            let row = &mut grads.router_w.data[e * d_model..(e + 1) * d_model];
            for (r, hv) in row.iter_mut().zip(&fp.h.data) {
                *r += g_z[j] * hv;
            }
            grads.router_b.data[e] += g_z[j];
        }

        // Expert FFN paths.
        for (j, &e) in fp.active.iter().enumerate() {
            let expert = &self.bank.experts[e];
            let g_ye = g_u.scale(fp.alpha.data[j]);
            let a = &fp.act[j];
            let eg = &mut grads.experts[e];
            // W2eff = W2 + up·down; the outer product feeds both the base
            // weight and the factor gradients.
            let g_w2eff = outer(&g_ye, a);
            eg.w2 = eg.w2.add(&g_w2eff)?;
            eg.b2 = eg.b2.add(&g_ye)?;
            eg.up = eg.up.add(&g_w2eff.matmul_transpose_b(&expert.task_vector.down)?)?;
            eg.down = eg
                .down
                .add(&expert.task_vector.up.transpose_matmul(&g_w2eff)?)?;
            // g_a = W2^T g_ye + down^T (up^T g_ye)
            let mut g_a = expert.w2.matvec_t(&g_ye)?;
            let tmp = expert.task_vector.up.matvec_t(&g_ye)?;
            let g_a2 = expert.task_vector.down.matvec_t(&tmp)?;
            for (ga, g2) in g_a.data.iter_mut().zip(&g_a2.data) {
                *ga += g2;
            }
            let g_pre1 = Tensor1::new(
                g_a.data
                    .iter()
                    .zip(&fp.pre1[j].data)
                    .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
                    .collect(),
            );
            eg.w1 = eg.w1.add(&outer(&g_pre1, &fp.h))?;
            eg.b1 = eg.b1.add(&g_pre1)?;
        }

        Ok(grads.flatten())
    }

    /// Flat parameter vector over the trainable set, in a fixed layout:
    /// per expert (w1, b1, w2, b2, down, up), then router (w_r, b_r,
    /// gain, bias), then head (w, b). The frozen backbone is excluded.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.bank.experts {
            out.extend_from_slice(&e.w1.data);
            out.extend_from_slice(&e.b1.data);
            out.extend_from_slice(&e.w2.data);
            out.extend_from_slice(&e.b2.data);
            out.extend_from_slice(&e.task_vector.down.data);
            out.extend_from_slice(&e.task_vector.up.data);
        }
        out.extend_from_slice(&self.router.w_r.data);
        out.extend_from_slice(&self.router.b_r.data);
        out.extend_from_slice(&self.router.gain.data);
        out.extend_from_slice(&self.router.bias.data);
        out.extend_from_slice(&self.head.w.data);
        out.extend_from_slice(&self.head.b.data);
        out
    }

    /// Write a flat vector (same layout as `params`) back into the model.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.params().len();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "set_params: {} values for {expected} parameters",
                flat.len()
            )));
        }
        let mut pos = 0;
        let take = |dst: &mut [f64], pos: &mut usize| {
            dst.copy_from_slice(&flat[*pos..*pos + dst.len()]);
            *pos += dst.len();
        };
        for e in &mut self.bank.experts {
            take(&mut e.w1.data, &mut pos);
            take(&mut e.b1.data, &mut pos);
            take(&mut e.w2.data, &mut pos);
            take(&mut e.b2.data, &mut pos);
            take(&mut e.task_vector.down.data, &mut pos);
            take(&mut e.task_vector.up.data, &mut pos);
        }
        take(&mut self.router.w_r.data, &mut pos);
        take(&mut self.router.b_r.data, &mut pos);
        take(&mut self.router.gain.data, &mut pos);
        take(&mut self.router.bias.data, &mut pos);
        take(&mut self.head.w.data, &mut pos);
        take(&mut self.head.b.data, &mut pos);
        Ok(())
    }

    /// SGD step: params -= lr · grads.
    pub fn apply_gradients(&mut self, grads: &[f64], lr: f64) -> Result<()> {
        let mut p = self.params();
        if grads.len() != p.len() {
            return Err(Error::Shape(format!(
                "apply_gradients: {} gradients for {} parameters",
                grads.len(),
                p.len()
            )));
        }
        for (pv, gv) in p.iter_mut().zip(grads) {
            *pv -= lr * gv;
        }
        self.set_params(&p)
    }
}

struct ExpertGrads {
    w1: Tensor2,
    b1: Tensor1,
    w2: Tensor2,
    b2: Tensor1,
    down: Tensor2,
    up: Tensor2,
}

struct Grads {
    experts: Vec<ExpertGrads>,
    router_w: Tensor2,
    router_b: Tensor1,
    gain: Tensor1,
    bias: Tensor1,
    head_w: Tensor2,
    head_b: Tensor1,
}

impl Grads {
    fn zeros(model: &Model) -> Self {
        let experts = model
            .bank
            .experts
            .iter()
            .map(|e| ExpertGrads {
                w1: Tensor2::zeros(e.w1.rows, e.w1.cols),
                b1: Tensor1::zeros(e.b1.len()),
                w2: Tensor2::zeros(e.w2.rows, e.w2.cols),
                b2: Tensor1::zeros(e.b2.len()),
                down: Tensor2::zeros(e.task_vector.down.rows, e.task_vector.down.cols),
                up: Tensor2::zeros(e.task_vector.up.rows, e.task_vector.up.cols),
            })
            .collect();
        Grads {
            experts,
            router_w: Tensor2::zeros(model.router.w_r.rows, model.router.w_r.cols),
            router_b: Tensor1::zeros(model.router.b_r.len()),
            gain: Tensor1::zeros(model.router.gain.len()),
            bias: Tensor1::zeros(model.router.bias.len()),
            head_w: Tensor2::zeros(model.head.w.rows, model.head.w.cols),
            head_b: Tensor1::zeros(model.head.b.len()),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.experts {
            out.extend_from_slice(&e.w1.data);
            out.extend_from_slice(&e.b1.data);
            out.extend_from_slice(&e.w2.data);
            out.extend_from_slice(&e.b2.data);
            out.extend_from_slice(&e.down.data);
            out.extend_from_slice(&e.up.data);
        }
        out.extend_from_slice(&self.router_w.data);
        out.extend_from_slice(&self.router_b.data);
        out.extend_from_slice(&self.gain.data);
        out.extend_from_slice(&self.bias.data);
        out.extend_from_slice(&self.head_w.data);
        out.extend_from_slice(&self.head_b.data);
        out
    }
}

impl Tensor2 {
    /// self · other^T.
    fn matmul_transpose_b(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_transpose_b: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for c in 0..other.rows {
                let mut acc = 0.0;
                for (a, b) in self.row(r).iter().zip(other.row(c)) {
                    acc += a * b;
                }
                out.set(r, c, acc);
            }
        }
        Ok(out)
    }

    /// self^T · other.
    fn transpose_matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "transpose_matmul: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for r in 0..self.cols {
                let a = self.get(k, r);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }
}
