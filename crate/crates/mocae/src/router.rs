//! Calibrated routing: per-expert logit heads, temperature softmax,
//! alpha fusion with the normalized task weights, and the residual +
//! LayerNorm + Dropout calibrated embedding. Routing state carries the
//! previous step's probabilities for the KL penalty.

use serde::{Deserialize, Serialize};

use crate::bank::ExpertBank;
use crate::error::{Error, Result};
use crate::numeric::ops::{dropout, layer_norm, linear_forward, softmax_temperature, Mode, LN_EPS};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::Tensor1;
use crate::numeric::Tensor2;

/// Router parameters: one logit head per expert (stacked as an
/// n x d_model matrix, semantically independent heads), temperature,
/// layer-norm affine parameters, and the dropout probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Router {
    pub w_r: Tensor2,
    pub b_r: Tensor1,
    pub tau: f64,
    pub gain: Tensor1,
    pub bias: Tensor1,
    pub dropout_p: f64,
}

impl Router {
    pub fn new(n: usize, d_model: usize, tau: f64, dropout_p: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::Domain(format!("router tau must be > 0, got {tau}")));
        }
        Ok(Router {
            w_r: Tensor2::zeros(n, d_model),
            b_r: Tensor1::zeros(n),
            tau,
            gain: Tensor1::filled(d_model, 1.0),
            bias: Tensor1::zeros(d_model),
            dropout_p,
        })
    }

    pub fn n(&self) -> usize {
        self.w_r.rows
    }

    /// Selection logits z_i = W_r^(i)·h + b_r^(i).
    pub fn logits(&self, h: &Tensor1) -> Result<Tensor1> {
        linear_forward(&self.w_r, &self.b_r, h)
    }
}

/// Routing state for one forward step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    pub logits: Tensor1,
    pub probs: Tensor1,
    pub prev_probs: Tensor1,
    pub alpha: Tensor1,
    pub step: u64,
}

/// State at step 0: prev_probs uniform, everything else zeroed.
pub fn initial_state(n: usize) -> Result<RoutingState> {
    if n == 0 {
        return Err(Error::Argument("initial_state: expert count must be >= 1".into()));
    }
    Ok(RoutingState {
        logits: Tensor1::zeros(n),
        probs: Tensor1::zeros(n),
        prev_probs: Tensor1::filled(n, 1.0 / n as f64),
        alpha: Tensor1::zeros(n),
        step: 0,
    })
}

/// alpha_i = pi_i · gamma_tilde_i. With `renormalize` set the result is
/// divided by its sum; the default path applies no normalizer.
pub fn fuse_weights(pi: &Tensor1, gamma_tilde: &[f64], renormalize: bool) -> Result<Tensor1> {
    if pi.len() != gamma_tilde.len() {
        return Err(Error::Shape(format!(
            "fuse_weights: pi length {} vs gamma length {}",
            pi.len(),
            gamma_tilde.len()
        )));
    }
    let mut alpha: Vec<f64> = pi
        .data
        .iter()
        .zip(gamma_tilde)
        .map(|(p, g)| p * g)
        .collect();
    if renormalize {
        let sum: f64 = alpha.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numerical("fuse_weights: zero alpha mass".into()));
        }
        for a in &mut alpha {
            *a /= sum;
        }
    }
    Ok(Tensor1::new(alpha))
}

/// Pre-residual fusion Σ alpha_i · y_i, exposed so tests can check
/// route() against the decomposition.
pub fn fused_decomposition(alpha: &Tensor1, expert_outputs: &[Tensor1]) -> Result<Tensor1> {
    if alpha.len() != expert_outputs.len() {
        return Err(Error::Shape(format!(
            "fused_decomposition: {} weights vs {} outputs",
            alpha.len(),
            expert_outputs.len()
        )));
    }
    if expert_outputs.is_empty() {
        return Err(Error::Argument("fused_decomposition: no expert outputs".into()));
    }
    let d = expert_outputs[0].len();
    let mut y = Tensor1::zeros(d);
    for (a, yi) in alpha.data.iter().zip(expert_outputs) {
        if yi.len() != d {
            return Err(Error::Shape(format!(
                "fused_decomposition: output lengths {} vs {d}",
                yi.len()
            )));
        }
        for (acc, v) in y.data.iter_mut().zip(&yi.data) {
            *acc += a * v;
        }
    }
    Ok(y)
}

/// Options for a route() call. Defaults follow the dense formulation:
/// every expert evaluated, no alpha renormalization, no top-k.
#[derive(Debug, Clone, Copy, Default)]
pub struct RouteOptions {
    pub renormalize_alpha: bool,
    /// Keep only the k most probable experts; their pi is renormalized
    /// over the kept set. None evaluates all experts.
    pub top_k: Option<usize>,
}

/// One routing step: logits, temperature softmax, dense expert
/// evaluation, alpha fusion, then Dropout(LayerNorm(y + h)).
/// Returns the calibrated embedding and the advanced state.
pub fn route(
    router: &Router,
    h: &Tensor1,
    bank: &ExpertBank,
    state: &RoutingState,
    mode: Mode,
    rng: &mut Rng,
    options: RouteOptions,
) -> Result<(Tensor1, RoutingState)> {
    let n = bank.n();
    if router.n() != n {
        return Err(Error::Shape(format!(
            "route: router has {} heads but bank has {n} experts",
            router.n()
        )));
    }
    let z = router.logits(h)?;
    if !z.all_finite() {
        return Err(Error::Numerical("route: non-finite router logits".into()));
    }
    let mut pi = softmax_temperature(&z, router.tau)?;
    if let Some(k) = options.top_k {
        if k == 0 || k > n {
            return Err(Error::Argument(format!("route: top_k {k} out of range 1..={n}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| pi.data[*b].partial_cmp(&pi.data[*a]).unwrap());
        let kept: Vec<usize> = idx.into_iter().take(k).collect();
        let mass: f64 = kept.iter().map(|i| pi.data[*i]).sum();
        let mut sparse = vec![0.0; n];
        for i in kept {
            sparse[i] = pi.data[i] / mass;
        }
        pi = Tensor1::new(sparse);
    }
    let alpha = fuse_weights(&pi, &bank.weights.normalized, options.renormalize_alpha)?;
    let mut outputs = Vec::with_capacity(n);
    for e in &bank.experts {
        outputs.push(e.forward(h)?);
    }
    let y = fused_decomposition(&alpha, &outputs)?;
    let residual = y.add(h)?;
    let normed = layer_norm(&residual, &router.gain, &router.bias, LN_EPS)?;
    let y_cal = dropout(&normed, router.dropout_p, mode, rng)?;
    let new_state = RoutingState {
        logits: z,
        prev_probs: pi.clone(),
        probs: pi,
        alpha,
        step: state.step + 1,
    };
    Ok((y_cal, new_state))
}
