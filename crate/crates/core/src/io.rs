//! Binary model files.
//!
//! Layout (all integers u32 little-endian, all parameters f32 little-endian):
//!
//! ```text
//! "QVNN" | version | record count | records...
//! record = tag: u8 | extents: u32 x (fixed per tag) | payload
//! ```
//!
//! | tag | layer          | extents                                  | payload |
//! |-----|----------------|------------------------------------------|---------|
//! | 0   | input          | channels, height, width                  | none |
//! | 1   | dense          | out, in                                  | weight planes, bias planes |
//! | 2   | conv2d         | out, in, kh, kw, stride, padding         | kernel planes, bias planes |
//! | 3   | batch norm     | channels                                 | γ, β planes, running μ planes, running σ², ε, momentum |
//! | 4   | activation     | kind (0 = relu)                          | none |
//! | 5   | dropout        | none                                     | p |
//! | 6   | max-pool       | window, stride                           | none |
//! | 7   | norm/softmax   | classes                                  | none |
//!
//! Quaternion tensors are written plane by plane in r, i, j, k order, each
//! plane row-major. The first record is the input and the last the head.

use std::fs;
use std::path::Path;

use crate::error::{QvnnError, Result};
use crate::layers::{ActivationKind, Layer, QBatchNorm, QConv2d, QDense, QDropout, QMaxPool, SplitActivation};
use crate::model::Model;
use crate::quat::QTensor;

pub const MAGIC: [u8; 4] = *b"QVNN";
pub const VERSION: u32 = 1;

const TAG_INPUT: u8 = 0;
const TAG_DENSE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_BN: u8 = 3;
const TAG_ACTIVATION: u8 = 4;
const TAG_DROPOUT: u8 = 5;
const TAG_POOL: u8 = 6;
const TAG_HEAD: u8 = 7;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| QvnnError::Format(format!("extent {v} exceeds 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn reals(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f32(v));
    }

    fn header(&mut self, tag: u8, extents: &[usize]) -> Result<()> {
        self.0.push(tag);
        extents.iter().try_for_each(|&e| self.u32(e))
    }
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION as usize)?;
    w.u32(model.layers.len() + 2)?;
    let [c, h, wd] = match *model.input_shape {
        [c, h, wd] => [c, h, wd],
        _ => {
            return Err(QvnnError::Format(format!(
                "model input shape {:?} is not [channels, height, width]",
                model.input_shape
            )))
        }
    };
    w.header(TAG_INPUT, &[c, h, wd])?;
    for layer in &model.layers {
        match layer {
            Layer::Dense(l) => {
                w.header(TAG_DENSE, &[l.out_features(), l.in_features()])?;
                w.reals(l.weight.as_slice());
                w.reals(l.bias.as_slice());
            }
            Layer::Conv2d(l) => {
                let (kh, kw) = l.kernel_size();
                w.header(TAG_CONV, &[l.out_channels(), l.in_channels(), kh, kw, l.stride, l.padding])?;
                w.reals(l.kernels.as_slice());
                w.reals(l.bias.as_slice());
            }
            Layer::BatchNorm(l) => {
                w.header(TAG_BN, &[l.channels()])?;
                w.reals(&l.gamma);
                w.reals(l.beta.as_slice());
                w.reals(l.running_mean.as_slice());
                w.reals(&l.running_var);
                w.f32(l.epsilon);
                w.f32(l.momentum);
            }
            Layer::Activation(l) => w.header(TAG_ACTIVATION, &[l.kind.code() as usize])?,
            Layer::Dropout(l) => {
                w.header(TAG_DROPOUT, &[])?;
                w.f32(l.p);
            }
            Layer::MaxPool(l) => w.header(TAG_POOL, &[l.window, l.stride])?,
        }
    }
    w.header(TAG_HEAD, &[model.classes])?;
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(QvnnError::Truncated {
                what: what.into(),
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn extents<const N: usize>(&mut self, what: &str) -> Result<[usize; N]> {
        let mut out = [0; N];
        for e in &mut out {
            *e = self.u32(what)?;
        }
        Ok(out)
    }

    fn reals(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| QvnnError::Format(format!("{what}: {n} values overflow")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<QTensor> {
        let len = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| QvnnError::Format(format!("{what}: shape {shape:?} overflows")))?;
        QTensor::from_raw(shape, self.reals(len, what)?)
    }

    fn real(&mut self, what: &str) -> Result<f64> {
        Ok(self.reals(1, what)?[0])
    }
}

/// Parses a model from bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "model header")?;
    if magic != MAGIC {
        return Err(QvnnError::WrongMagic {
            what: "model file".into(),
            expected: u32::from_be_bytes(MAGIC),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32("model header")? as u32;
    if version != VERSION {
        return Err(QvnnError::UnsupportedVersion(version));
    }
    let count = r.u32("model header")?;
    if count < 2 {
        return Err(QvnnError::Format(format!("{count} records; input and head are required")));
    }
    if r.u8("input record")? != TAG_INPUT {
        return Err(QvnnError::Format("first record is not the input record".into()));
    }
    let input: [usize; 3] = r.extents("input record")?;
    let mut layers = Vec::new();
    let mut classes = None;
    for n in 1..count {
        let what = format!("record {n}");
        let what = what.as_str();
        let tag = r.u8(what)?;
        if classes.is_some() {
            return Err(QvnnError::Format("records after the head record".into()));
        }
        match tag {
            TAG_DENSE => {
                let [out, inp] = r.extents(what)?;
                let weight = r.tensor(&[out, inp], what)?;
                let bias = r.tensor(&[out], what)?;
                layers.push(Layer::Dense(QDense { weight, bias }));
            }
            TAG_CONV => {
                let [out, inp, kh, kw, stride, padding] = r.extents(what)?;
                let mut conv = QConv2d::zeros(out, inp, (kh, kw), stride, padding)
                    .map_err(|e| QvnnError::Format(format!("{what}: {e}")))?;
                conv.kernels = r.tensor(&[out, inp, kh, kw], what)?;
                conv.bias = r.tensor(&[out], what)?;
                layers.push(Layer::Conv2d(conv));
            }
            TAG_BN => {
                let [c] = r.extents(what)?;
                let gamma = r.reals(c, what)?;
                let beta = r.tensor(&[c], what)?;
                let running_mean = r.tensor(&[c], what)?;
                let running_var = r.reals(c, what)?;
                let epsilon = r.real(what)?;
                let momentum = r.real(what)?;
                layers.push(Layer::BatchNorm(QBatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    epsilon,
                    momentum,
                }));
            }
            TAG_ACTIVATION => {
                let [code] = r.extents(what)?;
                let kind = ActivationKind::from_code(code as u32)
                    .ok_or_else(|| QvnnError::Format(format!("{what}: unknown activation {code}")))?;
                layers.push(Layer::Activation(SplitActivation { kind }));
            }
            TAG_DROPOUT => {
                let p = r.real(what)?;
                layers.push(Layer::Dropout(
                    QDropout::new(p).map_err(|e| QvnnError::Format(format!("{what}: {e}")))?,
                ));
            }
            TAG_POOL => {
                let [window, stride] = r.extents(what)?;
                layers.push(Layer::MaxPool(QMaxPool { window, stride }));
            }
            TAG_HEAD => {
                let [c] = r.extents(what)?;
                classes = Some(c);
            }
            other => return Err(QvnnError::UnknownLayerTag(other)),
        }
    }
    let classes = classes.ok_or_else(|| QvnnError::Format("missing head record".into()))?;
    if r.pos != bytes.len() {
        return Err(QvnnError::Format(format!(
            "{} trailing bytes after the head record",
            bytes.len() - r.pos
        )));
    }
    Model::new(input.to_vec(), classes, layers).map_err(|e| QvnnError::Format(format!("inconsistent layers: {e}")))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
