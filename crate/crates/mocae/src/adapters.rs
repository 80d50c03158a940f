//! Low-rank task vectors: one behavioral delta per alignment dimension,
//! stored as (down, up) factors so the dense delta up·down maps
//! d_model -> d_model. Includes inner-product weighting, convex
//! normalization, sign-flip negation, and the naive additive merge kept
//! only as an interference diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor2;

/// Positivity floor for raw task weights.
pub const EPS_POS: f64 = 1e-8;

/// Alignment dimension a task vector encodes. The expert order everywhere
/// in the crate is helpful=0, harmless=1, honest=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionTag {
    Helpful,
    Harmless,
    Honest,
}

impl DimensionTag {
    pub const ALL: [DimensionTag; 3] = [
        DimensionTag::Helpful,
        DimensionTag::Harmless,
        DimensionTag::Honest,
    ];

    pub fn index(self) -> usize {
        match self {
            DimensionTag::Helpful => 0,
            DimensionTag::Harmless => 1,
            DimensionTag::Honest => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DimensionTag::Helpful => "helpful",
            DimensionTag::Harmless => "harmless",
            DimensionTag::Honest => "honest",
        }
    }

    pub fn parse(s: &str) -> Option<DimensionTag> {
        match s {
            "helpful" => Some(DimensionTag::Helpful),
            "harmless" => Some(DimensionTag::Harmless),
            "honest" => Some(DimensionTag::Honest),
            _ => None,
        }
    }
}

/// Low-rank adapter factors for one alignment dimension. down is
/// (r x in_dim), up is (out_dim x r); the dense behavioral delta up·down
/// has shape (out_dim x in_dim). Standalone task vectors are square
/// (out_dim = in_dim = d_model) so they can map the hidden state to
/// itself; attached to an expert's second linear layer the in-dimension
/// is that layer's input width instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVector {
    pub tag: DimensionTag,
    pub down: Tensor2,
    pub up: Tensor2,
}

impl TaskVector {
    pub fn new(tag: DimensionTag, down: Tensor2, up: Tensor2) -> Result<Self> {
        if down.rows != up.cols {
            return Err(Error::Shape(format!(
                "TaskVector: down {}x{} rank-incompatible with up {}x{}",
                down.rows, down.cols, up.rows, up.cols
            )));
        }
        Ok(TaskVector { tag, down, up })
    }

    pub fn zeros(tag: DimensionTag, d_model: usize, rank: usize) -> Self {
        Self::zeros_rect(tag, d_model, d_model, rank)
    }

    pub fn zeros_rect(tag: DimensionTag, out_dim: usize, in_dim: usize, rank: usize) -> Self {
        TaskVector {
            tag,
            down: Tensor2::zeros(rank, in_dim),
            up: Tensor2::zeros(out_dim, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.down.rows
    }

    /// Output dimension of the dense delta.
    pub fn d_model(&self) -> usize {
        self.up.rows
    }

    pub fn in_dim(&self) -> usize {
        self.down.cols
    }
}

/// Raw and simplex-normalized task weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector {
            raw: vec![1.0; n],
            normalized: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Dense behavioral delta up·down.
pub fn delta_weight(t: &TaskVector) -> Result<Tensor2> {
    t.up.matmul(&t.down)
}

/// Frobenius inner product of the dense deltas, clamped below at EPS_POS
/// so the result is usable as a raw task weight.
pub fn similarity(t: &TaskVector, reference: &TaskVector) -> Result<f64> {
    if t.d_model() != reference.d_model() {
        return Err(Error::Shape(format!(
            "similarity: d_model {} vs {}",
            t.d_model(),
            reference.d_model()
        )));
    }
    let a = delta_weight(t)?;
    let b = delta_weight(reference)?;
    Ok(a.frobenius_dot(&b)?.max(EPS_POS))
}

/// How to pick the reference task vector for similarity weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// Mean of the dense deltas, re-factored exactly (see `reference_vector`).
    Centroid,
    /// Copy of bank[k].
    Index(usize),
    /// Caller-supplied vector, passed through.
    External(TaskVector),
}

/// Build the reference vector for a bank of task vectors.
///
/// Centroid mode averages the dense deltas. The mean (1/n)·Σ upᵢ·downᵢ
/// factors exactly as U·D with U the column-concatenation of the upᵢ and
/// D the row-stack of downᵢ/n, giving rank n·r. When n·r exceeds d_model
/// the mean is factored trivially as M·I instead (rank d_model). Both are
/// exact, so the centroid delta equals the elementwise mean of deltas.
pub fn reference_vector(bank: &[TaskVector], mode: &ReferenceMode) -> Result<TaskVector> {
    if bank.is_empty() {
        return Err(Error::Argument("reference_vector: empty bank".into()));
    }
    match mode {
        ReferenceMode::Index(k) => bank
            .get(*k)
            .cloned()
            .ok_or_else(|| Error::Argument(format!("reference_vector: index {k} out of range"))),
        ReferenceMode::External(t) => Ok(t.clone()),
        ReferenceMode::Centroid => {
            let out_dim = bank[0].d_model();
            let in_dim = bank[0].in_dim();
            for t in bank {
                if t.d_model() != out_dim || t.in_dim() != in_dim {
                    return Err(Error::Shape(format!(
                        "reference_vector: centroid needs uniform {out_dim}x{in_dim} deltas, got {}x{}",
                        t.d_model(),
                        t.in_dim()
                    )));
                }
            }
            let n = bank.len();
            let total_rank: usize = bank.iter().map(|t| t.rank()).sum();
            if total_rank <= in_dim {
                let mut down = Tensor2::zeros(total_rank, in_dim);
                let mut up = Tensor2::zeros(out_dim, total_rank);
                let mut row = 0;
                for t in bank {
                    for r in 0..t.rank() {
                        for c in 0..in_dim {
                            down.set(row + r, c, t.down.get(r, c) / n as f64);
                        }
                        for c in 0..out_dim {
                            up.set(c, row + r, t.up.get(c, r));
                        }
                    }
                    row += t.rank();
                }
                TaskVector::new(bank[0].tag, down, up)
            } else {
                let mut mean = Tensor2::zeros(out_dim, in_dim);
                for t in bank {
                    mean = mean.add(&delta_weight(t)?.scale(1.0 / n as f64))?;
                }
                TaskVector::new(bank[0].tag, Tensor2::identity(in_dim), mean)
            }
        }
    }
}

/// Convex normalization: each weight divided by the total.
pub fn normalize_weights(raw: &[f64]) -> Result<WeightVector> {
    if raw.is_empty() {
        return Err(Error::Argument("normalize_weights: empty input".into()));
    }
    for (i, v) in raw.iter().enumerate() {
        if !v.is_finite() || *v < EPS_POS {
            return Err(Error::Domain(format!(
                "normalize_weights: raw[{i}] = {v} below positivity floor {EPS_POS}"
            )));
        }
    }
    let sum: f64 = raw.iter().sum();
    Ok(WeightVector {
        raw: raw.to_vec(),
        normalized: raw.iter().map(|v| v / sum).collect(),
    })
}

/// Behavioral negation: flip the sign of one factor so the dense delta
/// negates exactly. Involutive at the delta level.
pub fn negate(t: &TaskVector) -> TaskVector {
    TaskVector {
        tag: t.tag,
        down: t.down.clone(),
        up: t.up.neg(),
    }
}

/// Elementwise theta0 + Σ deltas. Diagnostic only: this is the merge the
/// routed fusion is designed to avoid.
pub fn naive_merge(theta0: &Tensor2, deltas: &[Tensor2]) -> Result<Tensor2> {
    let mut merged = theta0.clone();
    for d in deltas {
        merged = merged.add(d)?;
    }
    Ok(merged)
}
