//! Binary containers and checkpoint persistence.
//!
//! Task vectors serialize to a "TVX1" container: magic, u32 out/in/rank
//! dimensions, a length-prefixed UTF-8 dimension tag, then the down and
//! up factors as row-major little-endian f64. The full model serializes
//! to an "MCE1" container: magic, a config block, backbone weights, each
//! expert with its embedded TVX1 record, then the task weights, router,
//! and classification head. A checkpoint is the MCE1 file plus a JSON
//! sidecar holding the resolved run config, the gamma trajectory, and
//! the fitted TF-IDF model.
//!
//! Decoders validate magic bytes and size fields before allocating, so
//! they are safe on untrusted input.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::{DimensionTag, TaskVector, WeightVector};
use crate::bank::{Backbone, ExpertAdapter, ExpertBank};
use crate::config::RunConfig;
use crate::data::TfidfModel;
use crate::error::{Error, Result};
use crate::numeric::tensor::{Tensor1, Tensor2};
use crate::router::Router;
use crate::training::model::{Head, Model};

pub const TASK_VECTOR_MAGIC: &[u8; 4] = b"TVX1";
pub const MODEL_MAGIC: &[u8; 4] = b"MCE1";

/// Upper bounds on size fields, enforced before any allocation.
const MAX_DIM: u32 = 1 << 16;
const MAX_TAG_LEN: u32 = 1 << 10;
const MAX_EXPERTS: u32 = 1 << 10;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| Error::Format("length overflow".into()))?;
        if end > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated input: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        // take() bounds the allocation by what is actually present.
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("f64 block length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn bounded_dim(&mut self, name: &str) -> Result<usize> {
        let v = self.u32()?;
        if v == 0 || v > MAX_DIM {
            return Err(Error::Format(format!(
                "{name} = {v} outside 1..={MAX_DIM}"
            )));
        }
        Ok(v as usize)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after container end",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize one task vector to TVX1 bytes.
pub fn encode_task_vector(t: &TaskVector) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TASK_VECTOR_MAGIC);
    push_u32(&mut out, t.d_model() as u32);
    push_u32(&mut out, t.in_dim() as u32);
    push_u32(&mut out, t.rank() as u32);
    let tag = t.tag.name().as_bytes();
    push_u32(&mut out, tag.len() as u32);
    out.extend_from_slice(tag);
    push_f64s(&mut out, &t.down.data);
    push_f64s(&mut out, &t.up.data);
    out
}

fn decode_task_vector_from(r: &mut Reader) -> Result<TaskVector> {
    r.magic(TASK_VECTOR_MAGIC)?;
    let out_dim = r.bounded_dim("d_model")?;
    let in_dim = r.bounded_dim("in_dim")?;
    let rank = r.bounded_dim("rank")?;
    let tag_len = r.u32()?;
    if tag_len > MAX_TAG_LEN {
        return Err(Error::Format(format!(
            "tag length {tag_len} exceeds {MAX_TAG_LEN}"
        )));
    }
    let tag_bytes = r.take(tag_len as usize)?;
    let tag_str = std::str::from_utf8(tag_bytes)
        .map_err(|_| Error::Format("dimension tag is not UTF-8".into()))?;
    let tag = DimensionTag::parse(tag_str)
        .ok_or_else(|| Error::Format(format!("unknown dimension tag {tag_str:?}")))?;
    let down = Tensor2::new(rank, in_dim, r.f64_vec(rank * in_dim)?)?;
    let up = Tensor2::new(out_dim, rank, r.f64_vec(out_dim * rank)?)?;
    TaskVector::new(tag, down, up)
}

/// Parse TVX1 bytes. Exposed for fuzzing; rejects any malformed input
/// with a Format error rather than panicking or over-allocating.
pub fn decode_task_vector(bytes: &[u8]) -> Result<TaskVector> {
    let mut r = Reader::new(bytes);
    let t = decode_task_vector_from(&mut r)?;
    r.done()?;
    Ok(t)
}

pub fn write_task_vector(path: &Path, t: &TaskVector) -> Result<()> {
    fs::write(path, encode_task_vector(t))?;
    Ok(())
}

pub fn read_task_vector(path: &Path) -> Result<TaskVector> {
    decode_task_vector(&fs::read(path)?)
}

fn encode_tensor2(out: &mut Vec<u8>, t: &Tensor2) {
    push_f64s(out, &t.data);
}

fn encode_tensor1(out: &mut Vec<u8>, t: &Tensor1) {
    push_f64s(out, &t.data);
}

/// Loss coefficients carried in the MCE1 config block. Redundant with
/// the sidecar but keeps the binary self-describing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHeader {
    pub d_feat: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub n: usize,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gating_coeff: f64,
}

/// Serialize the full model to MCE1 bytes.
pub fn encode_model(model: &Model, lambda1: f64, lambda2: f64, gating_coeff: f64) -> Vec<u8> {
    let d_feat = model.bank.backbone.d_feat();
    let d_model = model.bank.backbone.d_model();
    let hidden = model.bank.experts[0].hidden();
    let n = model.bank.n();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    // Config block.
    push_u32(&mut out, d_feat as u32);
    push_u32(&mut out, d_model as u32);
    push_u32(&mut out, hidden as u32);
    push_u32(&mut out, n as u32);
    push_f64s(
        &mut out,
        &[model.router.tau, lambda1, lambda2, gating_coeff],
    );
    // Backbone.
    encode_tensor2(&mut out, &model.bank.backbone.w_in);
    encode_tensor1(&mut out, &model.bank.backbone.b_in);
    out.push(u8::from(model.bank.backbone.frozen));
    // Experts with embedded task-vector containers.
    for e in &model.bank.experts {
        encode_tensor2(&mut out, &e.w1);
        encode_tensor1(&mut out, &e.b1);
        encode_tensor2(&mut out, &e.w2);
        encode_tensor1(&mut out, &e.b2);
        let tv = encode_task_vector(&e.task_vector);
        push_u32(&mut out, tv.len() as u32);
        out.extend_from_slice(&tv);
    }
    // Task weights, router, head.
    push_f64s(&mut out, &model.bank.weights.raw);
    push_f64s(&mut out, &model.bank.weights.normalized);
    encode_tensor2(&mut out, &model.router.w_r);
    encode_tensor1(&mut out, &model.router.b_r);
    encode_tensor1(&mut out, &model.router.gain);
    encode_tensor1(&mut out, &model.router.bias);
    push_f64s(&mut out, &[model.router.dropout_p]);
    push_u32(&mut out, model.head.classes() as u32);
    encode_tensor2(&mut out, &model.head.w);
    encode_tensor1(&mut out, &model.head.b);
    out
}

/// Parse MCE1 bytes. Exposed for fuzzing; never panics on malformed
/// input.
pub fn decode_model(bytes: &[u8]) -> Result<(Model, ModelHeader)> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let d_feat = r.bounded_dim("d_feat")?;
    let d_model = r.bounded_dim("d_model")?;
    let hidden = r.bounded_dim("hidden")?;
    let n = r.u32()?;
    if n == 0 || n > MAX_EXPERTS {
        return Err(Error::Format(format!("n = {n} outside 1..={MAX_EXPERTS}")));
    }
    let n = n as usize;
    let tau = r.f64()?;
    let lambda1 = r.f64()?;
    let lambda2 = r.f64()?;
    let gating_coeff = r.f64()?;
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Format(format!("tau = {tau} not a positive real")));
    }
    let w_in = Tensor2::new(d_model, d_feat, r.f64_vec(d_model * d_feat)?)?;
    let b_in = Tensor1::new(r.f64_vec(d_model)?);
    let frozen = r.u8()? != 0;
    let backbone = Backbone {
        w_in,
        b_in,
        frozen,
    };
    let mut experts = Vec::with_capacity(n);
    for _ in 0..n {
        let w1 = Tensor2::new(hidden, d_model, r.f64_vec(hidden * d_model)?)?;
        let b1 = Tensor1::new(r.f64_vec(hidden)?);
        let w2 = Tensor2::new(d_model, hidden, r.f64_vec(d_model * hidden)?)?;
        let b2 = Tensor1::new(r.f64_vec(d_model)?);
        let tv_len = r.u32()? as usize;
        let tv_bytes = r.take(tv_len)?;
        let task_vector = decode_task_vector(tv_bytes)?;
        if task_vector.d_model() != d_model || task_vector.in_dim() != hidden {
            return Err(Error::Format(format!(
                "embedded task vector maps {}->{}, expert expects {hidden}->{d_model}",
                task_vector.in_dim(),
                task_vector.d_model()
            )));
        }
        experts.push(ExpertAdapter {
            w1,
            b1,
            w2,
            b2,
            task_vector,
        });
    }
    let raw = r.f64_vec(n)?;
    let normalized = r.f64_vec(n)?;
    let weights = WeightVector { raw, normalized };
    let w_r = Tensor2::new(n, d_model, r.f64_vec(n * d_model)?)?;
    let b_r = Tensor1::new(r.f64_vec(n)?);
    let gain = Tensor1::new(r.f64_vec(d_model)?);
    let bias = Tensor1::new(r.f64_vec(d_model)?);
    let dropout_p = r.f64()?;
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Format(format!(
            "dropout_p = {dropout_p} outside [0, 1)"
        )));
    }
    let classes = r.bounded_dim("classes")?;
    let head_w = Tensor2::new(classes, d_model, r.f64_vec(classes * d_model)?)?;
    let head_b = Tensor1::new(r.f64_vec(classes)?);
    r.done()?;

    let mut bank = ExpertBank::new(backbone, experts)?;
    bank.weights = weights;
    let router = Router {
        w_r,
        b_r,
        tau,
        gain,
        bias,
        dropout_p,
    };
    let head = Head {
        w: head_w,
        b: head_b,
    };
    Ok((
        Model { bank, router, head },
        ModelHeader {
            d_feat,
            d_model,
            hidden,
            n,
            tau,
            lambda1,
            lambda2,
            gating_coeff,
        },
    ))
}

/// JSON sidecar next to the MCE1 binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: RunConfig,
    pub gamma_trajectory: Vec<Vec<f64>>,
    pub tfidf: TfidfModel,
}

/// A trained model with everything needed to evaluate or route new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub header: ModelHeader,
    pub sidecar: Sidecar,
}

fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut os = model_path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

/// Write `<path>` (MCE1) and `<path>.json` (sidecar).
pub fn save_checkpoint(path: &Path, model: &Model, sidecar: &Sidecar) -> Result<()> {
    let bytes = encode_model(
        model,
        sidecar.config.lambda1,
        sidecar.config.lambda2,
        sidecar.config.gating_coeff,
    );
    fs::write(path, bytes)?;
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (model, header) = decode_model(&fs::read(path)?)?;
    let text = fs::read_to_string(sidecar_path(path))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.tfidf.width() != header.d_feat {
        return Err(Error::Format(format!(
            "sidecar TF-IDF width {} does not match model d_feat {}",
            sidecar.tfidf.width(),
            header.d_feat
        )));
    }
    Ok(Checkpoint {
        model,
        header,
        sidecar,
    })
}
