//! Neural primitives with fixed numerical conventions: max-subtracted
//! softmax, population-variance layer norm with eps inside the sqrt,
//! inverted dropout (eval is the identity), and a 1e-12 floor inside logs.

use crate::error::{Error, Result};
use crate::numeric::rng::Rng;
use crate::numeric::tensor::{Tensor1, Tensor2};

/// Floor added inside every logarithm.
pub const EPS_LOG: f64 = 1e-12;
/// Epsilon inside the layer-norm square root.
pub const LN_EPS: f64 = 1e-5;

/// Forward mode for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// W·x + b.
pub fn linear_forward(w: &Tensor2, b: &Tensor1, x: &Tensor1) -> Result<Tensor1> {
    if w.cols != x.len() {
        return Err(Error::Shape(format!(
            "linear_forward: W is {}x{} but x has length {}",
            w.rows,
            w.cols,
            x.len()
        )));
    }
    if b.len() != w.rows {
        return Err(Error::Shape(format!(
            "linear_forward: W has {} rows but b has length {}",
            w.rows,
            b.len()
        )));
    }
    let mut out = w.matvec(x)?;
    for (o, bv) in out.data.iter_mut().zip(&b.data) {
        *o += bv;
    }
    Ok(out)
}

/// Temperature-scaled softmax, stabilized by subtracting max(z)/tau.
pub fn softmax_temperature(z: &Tensor1, tau: f64) -> Result<Tensor1> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Domain(format!("softmax temperature must be > 0, got {tau}")));
    }
    if z.is_empty() {
        return Err(Error::Argument("softmax of empty vector".into()));
    }
    if !z.all_finite() {
        return Err(Error::Numerical("softmax input contains non-finite logits".into()));
    }
    let max = z.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
    let exps: Vec<f64> = z.data.iter().map(|v| (v / tau - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor1::new(exps.into_iter().map(|e| e / sum).collect()))
}

/// Normalize to zero mean / unit population variance, then gain·x̂ + bias.
pub fn layer_norm(x: &Tensor1, gain: &Tensor1, bias: &Tensor1, eps: f64) -> Result<Tensor1> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::Shape(format!(
            "layer_norm: lengths x={} gain={} bias={}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Domain(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = (var + eps).sqrt();
    let out = x
        .data
        .iter()
        .zip(gain.data.iter().zip(&bias.data))
        .map(|(v, (g, b))| g * (v - mean) / sigma + b)
        .collect();
    Ok(Tensor1::new(out))
}

/// Dropout mask: each entry is 0 with probability p, else 1/(1-p).
/// Applying the mask elementwise realizes inverted dropout.
pub fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Result<Tensor1> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout p must be in [0,1), got {p}")));
    }
    let keep = 1.0 / (1.0 - p);
    let mut mask = Vec::with_capacity(len);
    for _ in 0..len {
        mask.push(if rng.next_f64() < p { 0.0 } else { keep });
    }
    Ok(Tensor1::new(mask))
}

/// Inverted dropout. Eval mode is the identity bit-for-bit.
pub fn dropout(x: &Tensor1, p: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor1> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout p must be in [0,1), got {p}")));
    }
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train => {
            let mask = dropout_mask(x.len(), p, rng)?;
            Ok(Tensor1::new(
                x.data.iter().zip(&mask.data).map(|(v, m)| v * m).collect(),
            ))
        }
    }
}

/// −log(probs[target] + EPS_LOG).
pub fn cross_entropy(probs: &Tensor1, target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::Index(format!(
            "cross_entropy: target {} out of range for {} classes",
            target,
            probs.len()
        )));
    }
    debug_assert!(
        (probs.sum() - 1.0).abs() < 1e-9,
        "cross_entropy expects simplex input"
    );
    Ok(-(probs.data[target] + EPS_LOG).ln())
}
