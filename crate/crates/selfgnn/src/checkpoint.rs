//! Binary checkpoints for model parameters.
//!
//! Layout: magic bytes `SGNNCKPT`, a `u32` format version, then repeated
//! sections of `[name length u32 | name bytes | dtype tag u8 | rank u32 |
//! dims u64… | little-endian payload]`. Tensor sections carry the model's
//! scalar type (tag 1 = f32, 2 = f64); the small metadata sections
//! (activation choice, batch-norm ε/momentum) are always f64 so a reload
//! reproduces the exact hyperparameters regardless of training precision.

use std::path::Path;

use crate::autodiff::BatchNormState;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::model::{Activation, ConvLayer, EncoderParams, MlpParams, ModelParams};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SGNNCKPT";
pub const VERSION: u32 = 1;

const F64_TAG: u8 = <f64 as Scalar>::DTYPE_TAG;

/// Serialize to a file. See [`to_bytes`] for the section inventory.
pub fn save<F: Scalar>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    let bytes = to_bytes(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Deserialize from a file written by [`save`] with the same scalar type.
pub fn load<F: Scalar>(path: &Path) -> Result<ModelParams<F>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Scalar tag of the tensors in a checkpoint file (1 = f32, 2 = f64),
/// so a caller can dispatch to the right `load::<F>` instantiation.
pub fn stored_dtype(path: &Path) -> Result<u8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sections = parse_sections(&bytes)?;
    sections
        .iter()
        .find(|s| s.name.ends_with(".W"))
        .map(|s| s.dtype)
        .ok_or_else(|| Error::Data("checkpoint has no weight sections".into()))
}

/// Encode params into the checkpoint byte format.
///
/// Section names mirror the parameter tree: `student.enc.{i}.W`,
/// `student.enc.{i}.bn.{gamma,beta,running_mean,running_var,hyper}`,
/// `student.enc.{i}.slope`, the same under `teacher.`, and
/// `student.pred.{lin1,lin2,…}` / `{student,teacher}.proj.…` for the
/// predictor and optional projection heads. `meta.activation` holds the
/// shared activation choice.
pub fn to_bytes<F: Scalar>(params: &ModelParams<F>) -> Result<Vec<u8>> {
    let act = shared_activation(params)?;
    if params.student_projector.is_some() != params.teacher_projector.is_some() {
        return Err(Error::Config(
            "checkpoint: projector must exist on both student and teacher".into(),
        ));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let tag = match act {
        Activation::Prelu => 1.0,
        Activation::Relu => 2.0,
    };
    write_f64s(&mut out, "meta.activation", &[tag]);
    write_encoder(&mut out, "student.enc", &params.student);
    write_mlp(&mut out, "student.pred", &params.predictor);
    if let Some(p) = &params.student_projector {
        write_mlp(&mut out, "student.proj", p);
    }
    write_encoder(&mut out, "teacher.enc", &params.teacher);
    if let Some(p) = &params.teacher_projector {
        write_mlp(&mut out, "teacher.proj", p);
    }
    Ok(out)
}

/// Decode a checkpoint produced by [`to_bytes`].
pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<ModelParams<F>> {
    let sections = parse_sections(bytes)?;
    let mut reader = SectionMap::new(sections);

    let tag = reader.take_f64s("meta.activation", 1)?[0];
    let activation = match tag {
        t if t == 1.0 => Activation::Prelu,
        t if t == 2.0 => Activation::Relu,
        t => return Err(Error::Data(format!("checkpoint: unknown activation tag {t}"))),
    };

    let student = read_encoder::<F>(&mut reader, "student.enc", activation)?;
    let predictor = read_mlp::<F>(&mut reader, "student.pred", activation)?;
    let student_projector = if reader.contains("student.proj.lin1") {
        Some(read_mlp::<F>(&mut reader, "student.proj", activation)?)
    } else {
        None
    };
    let teacher = read_encoder::<F>(&mut reader, "teacher.enc", activation)?;
    let teacher_projector = if student_projector.is_some() {
        Some(read_mlp::<F>(&mut reader, "teacher.proj", activation)?)
    } else {
        None
    };
    reader.finish()?;
    Ok(ModelParams {
        student,
        predictor,
        student_projector,
        teacher,
        teacher_projector,
    })
}

fn shared_activation<F: Scalar>(params: &ModelParams<F>) -> Result<Activation> {
    let act = params.student.activation;
    let mut all = vec![params.teacher.activation, params.predictor.activation];
    all.extend(params.student_projector.iter().map(|p| p.activation));
    all.extend(params.teacher_projector.iter().map(|p| p.activation));
    if all.into_iter().any(|a| a != act) {
        return Err(Error::Config(
            "checkpoint: components disagree on activation".into(),
        ));
    }
    Ok(act)
}

// --- writing ---------------------------------------------------------

fn write_header(out: &mut Vec<u8>, name: &str, dtype: u8, dims: &[u64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

fn write_matrix<F: Scalar>(out: &mut Vec<u8>, name: &str, m: &Matrix<F>) {
    write_header(out, name, F::DTYPE_TAG, &[m.rows() as u64, m.cols() as u64]);
    for &v in m.data() {
        push_scalar(out, v);
    }
}

fn write_vector<F: Scalar>(out: &mut Vec<u8>, name: &str, v: &[F]) {
    write_header(out, name, F::DTYPE_TAG, &[v.len() as u64]);
    for &x in v {
        push_scalar(out, x);
    }
}

/// Metadata payloads stay f64 no matter the model precision.
fn write_f64s(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    write_header(out, name, F64_TAG, &[values.len() as u64]);
    for &x in values {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_scalar<F: Scalar>(out: &mut Vec<u8>, v: F) {
    match F::DTYPE_TAG {
        1 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
        _ => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
    }
}

fn write_bn<F: Scalar>(out: &mut Vec<u8>, prefix: &str, bn: &BatchNormState<F>) {
    write_matrix(out, &format!("{prefix}.gamma"), &bn.gamma);
    write_matrix(out, &format!("{prefix}.beta"), &bn.beta);
    write_vector(out, &format!("{prefix}.running_mean"), &bn.running_mean);
    write_vector(out, &format!("{prefix}.running_var"), &bn.running_var);
    write_f64s(out, &format!("{prefix}.hyper"), &[bn.epsilon, bn.momentum]);
}

fn write_encoder<F: Scalar>(out: &mut Vec<u8>, prefix: &str, enc: &EncoderParams<F>) {
    for (i, layer) in enc.layers.iter().enumerate() {
        write_matrix(out, &format!("{prefix}.{i}.W"), &layer.weight);
        write_bn(out, &format!("{prefix}.{i}.bn"), &layer.bn);
        write_matrix(out, &format!("{prefix}.{i}.slope"), &layer.slope);
    }
}

fn write_mlp<F: Scalar>(out: &mut Vec<u8>, prefix: &str, mlp: &MlpParams<F>) {
    write_matrix(out, &format!("{prefix}.lin1"), &mlp.linear1);
    write_bn(out, &format!("{prefix}.bn"), &mlp.bn);
    write_matrix(out, &format!("{prefix}.slope"), &mlp.slope);
    write_matrix(out, &format!("{prefix}.lin2"), &mlp.linear2);
}

// --- reading ---------------------------------------------------------

struct Section<'a> {
    name: String,
    dtype: u8,
    dims: Vec<u64>,
    payload: &'a [u8],
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("checkpoint: truncated section".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_sections(bytes: &[u8]) -> Result<Vec<Section<'_>>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Data("checkpoint: bad magic bytes".into()));
    }
    let version = cur.take_u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "checkpoint: unsupported version {version} (expected {VERSION})"
        )));
    }
    let mut sections = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.take_u32()? as usize;
        if name_len > 4096 {
            return Err(Error::Data("checkpoint: implausible section name length".into()));
        }
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Data("checkpoint: section name is not utf-8".into()))?
            .to_string();
        let dtype = cur.take(1)?[0];
        let width = match dtype {
            1 => 4,
            2 => 8,
            t => return Err(Error::Data(format!("checkpoint: unknown dtype tag {t}"))),
        };
        let rank = cur.take_u32()? as usize;
        if rank > 8 {
            return Err(Error::Data("checkpoint: implausible tensor rank".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.take_u64()?);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Data("checkpoint: tensor size overflow".into()))?;
        let payload = cur.take(count * width)?;
        sections.push(Section { name, dtype, dims, payload });
    }
    Ok(sections)
}

/// Sections indexed by name; every section must be consumed exactly once.
struct SectionMap<'a> {
    sections: Vec<Section<'a>>,
    used: Vec<bool>,
}

impl<'a> SectionMap<'a> {
    fn new(sections: Vec<Section<'a>>) -> Self {
        let used = vec![false; sections.len()];
        SectionMap { sections, used }
    }

    fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    fn take(&mut self, name: &str) -> Result<&Section<'a>> {
        let idx = self
            .sections
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint: missing section {name}")))?;
        if std::mem::replace(&mut self.used[idx], true) {
            return Err(Error::Data(format!("checkpoint: duplicate section {name}")));
        }
        Ok(&self.sections[idx])
    }

    fn take_matrix<F: Scalar>(&mut self, name: &str) -> Result<Matrix<F>> {
        let s = self.take(name)?;
        if s.dtype != F::DTYPE_TAG {
            return Err(Error::Data(format!(
                "checkpoint: section {name} has dtype tag {} but load requested {}",
                s.dtype,
                F::DTYPE_TAG
            )));
        }
        let [rows, cols] = s.dims[..] else {
            return Err(Error::Data(format!("checkpoint: section {name} is not rank 2")));
        };
        let data = decode_payload::<F>(s.payload);
        Ok(Matrix::from_vec(rows as usize, cols as usize, data))
    }

    fn take_vector<F: Scalar>(&mut self, name: &str) -> Result<Vec<F>> {
        let s = self.take(name)?;
        if s.dtype != F::DTYPE_TAG {
            return Err(Error::Data(format!(
                "checkpoint: section {name} has dtype tag {} but load requested {}",
                s.dtype,
                F::DTYPE_TAG
            )));
        }
        let [_len] = s.dims[..] else {
            return Err(Error::Data(format!("checkpoint: section {name} is not rank 1")));
        };
        Ok(decode_payload::<F>(s.payload))
    }

    fn take_f64s(&mut self, name: &str, expect: usize) -> Result<Vec<f64>> {
        let s = self.take(name)?;
        if s.dtype != F64_TAG || s.dims != [expect as u64] {
            return Err(Error::Data(format!("checkpoint: malformed section {name}")));
        }
        Ok(s.payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        for (s, used) in self.sections.iter().zip(&self.used) {
            if !used {
                return Err(Error::Data(format!(
                    "checkpoint: unrecognized section {}",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

fn decode_payload<F: Scalar>(payload: &[u8]) -> Vec<F> {
    match F::DTYPE_TAG {
        1 => payload
            .chunks_exact(4)
            .map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        _ => payload
            .chunks_exact(8)
            .map(|c| F::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    }
}

fn read_bn<F: Scalar>(reader: &mut SectionMap, prefix: &str) -> Result<BatchNormState<F>> {
    let gamma = reader.take_matrix(&format!("{prefix}.gamma"))?;
    let beta = reader.take_matrix(&format!("{prefix}.beta"))?;
    let running_mean = reader.take_vector(&format!("{prefix}.running_mean"))?;
    let running_var = reader.take_vector(&format!("{prefix}.running_var"))?;
    let hyper = reader.take_f64s(&format!("{prefix}.hyper"), 2)?;
    let width = gamma.cols();
    if beta.cols() != width || running_mean.len() != width || running_var.len() != width {
        return Err(Error::Data(format!("checkpoint: {prefix} widths disagree")));
    }
    let mut bn = BatchNormState::new(width);
    bn.gamma = gamma;
    bn.beta = beta;
    bn.running_mean = running_mean;
    bn.running_var = running_var;
    bn.epsilon = hyper[0];
    bn.momentum = hyper[1];
    Ok(bn)
}

fn read_encoder<F: Scalar>(
    reader: &mut SectionMap,
    prefix: &str,
    activation: Activation,
) -> Result<EncoderParams<F>> {
    let mut layers = Vec::new();
    while reader.contains(&format!("{prefix}.{}.W", layers.len())) {
        let i = layers.len();
        let weight = reader.take_matrix(&format!("{prefix}.{i}.W"))?;
        let bn = read_bn(reader, &format!("{prefix}.{i}.bn"))?;
        let slope = reader.take_matrix(&format!("{prefix}.{i}.slope"))?;
        layers.push(ConvLayer { weight, bn, slope });
    }
    if layers.is_empty() {
        return Err(Error::Data(format!("checkpoint: no layers under {prefix}")));
    }
    Ok(EncoderParams { layers, activation })
}

fn read_mlp<F: Scalar>(
    reader: &mut SectionMap,
    prefix: &str,
    activation: Activation,
) -> Result<MlpParams<F>> {
    let linear1 = reader.take_matrix(&format!("{prefix}.lin1"))?;
    let bn = read_bn(reader, &format!("{prefix}.bn"))?;
    let slope = reader.take_matrix(&format!("{prefix}.slope"))?;
    let linear2 = reader.take_matrix(&format!("{prefix}.lin2"))?;
    Ok(MlpParams {
        linear1,
        bn,
        slope,
        linear2,
        activation,
    })
}
