//! The shared frozen input projection plus the per-dimension expert
//! feed-forward adapters. Experts map d_model -> hidden -> d_model with
//! the task-vector delta applied additively to the second linear layer,
//! so zeroing the delta recovers the base expert exactly.

use serde::{Deserialize, Serialize};

use crate::adapters::{DimensionTag, TaskVector, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::ops::linear_forward;
use crate::numeric::rng::Rng;
use crate::numeric::tensor::{Tensor1, Tensor2};

/// Frozen projection from feature space (d_feat) to the hidden state
/// space (d_model). Trained once on the pooled corpus, then locked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub w_in: Tensor2,
    pub b_in: Tensor1,
    pub frozen: bool,
}

impl Backbone {
    pub fn new(d_feat: usize, d_model: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (d_feat + d_model) as f64).sqrt();
        let w_in = Tensor2 {
            rows: d_model,
            cols: d_feat,
            data: (0..d_model * d_feat)
                .map(|_| rng.uniform(-bound, bound))
                .collect(),
        };
        Backbone {
            w_in,
            b_in: Tensor1::zeros(d_model),
            frozen: false,
        }
    }

    pub fn d_feat(&self) -> usize {
        self.w_in.cols
    }

    pub fn d_model(&self) -> usize {
        self.w_in.rows
    }

    /// h = tanh(W_in·features + b_in).
    pub fn input_projection(&self, features: &Tensor1) -> Result<Tensor1> {
        let mut h = linear_forward(&self.w_in, &self.b_in, features)?;
        for v in &mut h.data {
            *v = v.tanh();
        }
        Ok(h)
    }
}

/// One expert: base FFN weights plus its task vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAdapter {
    pub w1: Tensor2,
    pub b1: Tensor1,
    pub w2: Tensor2,
    pub b2: Tensor1,
    pub task_vector: TaskVector,
}

impl ExpertAdapter {
    pub fn new(tag: DimensionTag, d_model: usize, hidden: usize, rank: usize, rng: &mut Rng) -> Self {
        let init = |rows: usize, cols: usize, rng: &mut Rng| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Tensor2 {
                rows,
                cols,
                data: (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect(),
            }
        };
        // Task vector factors start small and nonzero so the delta is
        // trainable from the first step. The delta attaches to W2, so its
        // input width is the hidden size.
        let tv_bound = 0.05;
        let down = Tensor2 {
            rows: rank,
            cols: hidden,
            data: (0..rank * hidden)
                .map(|_| rng.uniform(-tv_bound, tv_bound))
                .collect(),
        };
        let up = Tensor2 {
            rows: d_model,
            cols: rank,
            data: (0..d_model * rank)
                .map(|_| rng.uniform(-tv_bound, tv_bound))
                .collect(),
        };
        ExpertAdapter {
            w1: init(hidden, d_model, rng),
            b1: Tensor1::zeros(hidden),
            w2: init(d_model, hidden, rng),
            b2: Tensor1::zeros(d_model),
            task_vector: TaskVector { tag, down, up },
        }
    }

    pub fn d_model(&self) -> usize {
        self.w1.cols
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows
    }

    /// y = (W2 + up·down)·relu(W1·h + b1) + b2.
    ///
    /// The delta is applied without densifying: up·(down·a) instead of
    /// (up·down)·a.
    pub fn forward(&self, h: &Tensor1) -> Result<Tensor1> {
        let mut a = linear_forward(&self.w1, &self.b1, h)?;
        for v in &mut a.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut y = linear_forward(&self.w2, &self.b2, &a)?;
        let da = self.task_vector.down.matvec(&a)?;
        let delta_y = self.task_vector.up.matvec(&da)?;
        for (yv, dv) in y.data.iter_mut().zip(&delta_y.data) {
            *yv += dv;
        }
        debug_assert_eq!(y.len(), h.len(), "expert output must match h length");
        Ok(y)
    }
}

/// Frozen backbone, ordered experts (helpful=0, harmless=1, honest=2),
/// and the current task weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertBank {
    pub backbone: Backbone,
    pub experts: Vec<ExpertAdapter>,
    pub weights: WeightVector,
}

impl ExpertBank {
    pub fn new(backbone: Backbone, experts: Vec<ExpertAdapter>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Argument("ExpertBank: no experts".into()));
        }
        let d_model = backbone.d_model();
        for (i, e) in experts.iter().enumerate() {
            if e.d_model() != d_model {
                return Err(Error::Shape(format!(
                    "ExpertBank: expert {i} d_model {} vs backbone {d_model}",
                    e.d_model()
                )));
            }
        }
        let n = experts.len();
        Ok(ExpertBank {
            backbone,
            experts,
            weights: WeightVector::uniform(n),
        })
    }

    pub fn n(&self) -> usize {
        self.experts.len()
    }
}

/// Shared-backbone projection, exposed at module level to mirror the
/// operation surface.
pub fn input_projection(backbone: &Backbone, features: &Tensor1) -> Result<Tensor1> {
    backbone.input_projection(features)
}

/// Expert transform, exposed at module level.
pub fn expert_forward(expert: &ExpertAdapter, h: &Tensor1) -> Result<Tensor1> {
    expert.forward(h)
}
