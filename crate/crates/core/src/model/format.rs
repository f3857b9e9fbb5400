//! Binary model files.
//!
//! ```text
//! "SLIM"                      4-byte magic
//! version                     u32
//! input c, h, w               3 x u32
//! classes                     u32
//! layer count L               u32
//! layer table                 L x 25 bytes: kind u8, six u32 fields
//! parameters                  f32, declaration order
//! crc32                       u32 over every preceding byte
//! ```
//!
//! All integers and reals are little-endian. Layer fields by kind:
//!
//! | kind | code | fields                                        |
//! |------|------|-----------------------------------------------|
//! | conv | 1    | in, out, kh, kw, stride, padding              |
//! | bn   | 2    | channels, tau (f32 bits), momentum (f32 bits) |
//! | relu | 3    | -                                             |
//! | pool | 4    | size                                          |
//! | gap  | 5    | -                                             |
//! | lin  | 6    | in, out                                       |
//!
//! Parameter order per layer: conv weights then bias; batch norm scale,
//! shift, running mean, running variance; linear weights then bias. The
//! byte offset of any array is therefore computable from the table alone.

use std::fs;
use std::path::Path;

use super::{InputShape, Layer, ModelGraph};
use crate::error::FormatError;
use crate::layers::{BnParams, ConvParams, LinearParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SLIM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 4 + 4;
const ENTRY_LEN: usize = 1 + 6 * 4;
const CRC_LEN: usize = 4;

const KIND_CONV: u8 = 1;
const KIND_BN: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_MAXPOOL: u8 = 4;
const KIND_GAP: u8 = 5;
const KIND_LINEAR: u8 = 6;

fn param_count(layer: &Layer) -> usize {
    match layer {
        Layer::Conv(p) => p.weights.len() + p.bias.len(),
        Layer::BatchNorm(bn) => 4 * bn.channels(),
        Layer::Linear(p) => p.weights.len() + p.bias.len(),
        _ => 0,
    }
}

/// Exact size in bytes of the encoded model.
pub fn encoded_len(model: &ModelGraph) -> usize {
    HEADER_LEN
        + ENTRY_LEN * model.layers.len()
        + 4 * model.layers.iter().map(param_count).sum::<usize>()
        + CRC_LEN
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &ModelGraph) -> Vec<u8> {
    let mut buf = Vec::with_capacity(encoded_len(model));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [model.input.channels, model.input.height, model.input.width, model.classes, model.layers.len()] {
        put_u32(&mut buf, v);
    }
    for layer in &model.layers {
        let (kind, fields): (u8, [u32; 6]) = match layer {
            Layer::Conv(p) => {
                let (kh, kw) = p.kernel();
                (
                    KIND_CONV,
                    [p.in_channels(), p.out_channels(), kh, kw, p.stride, p.padding].map(|v| v as u32),
                )
            }
            Layer::BatchNorm(bn) => (
                KIND_BN,
                [bn.channels() as u32, bn.tau.to_bits(), bn.momentum.to_bits(), 0, 0, 0],
            ),
            Layer::Relu => (KIND_RELU, [0; 6]),
            Layer::MaxPool { size } => (KIND_MAXPOOL, [*size as u32, 0, 0, 0, 0, 0]),
            Layer::GlobalAvgPool => (KIND_GAP, [0; 6]),
            Layer::Linear(p) => (
                KIND_LINEAR,
                [p.in_features() as u32, p.out_features() as u32, 0, 0, 0, 0],
            ),
        };
        buf.push(kind);
        for f in fields {
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    for layer in &model.layers {
        match layer {
            Layer::Conv(p) => {
                put_f32s(&mut buf, p.weights.data());
                put_f32s(&mut buf, &p.bias);
            }
            Layer::BatchNorm(bn) => {
                for v in [&bn.scale, &bn.shift, &bn.running_mean, &bn.running_var] {
                    put_f32s(&mut buf, v);
                }
            }
            Layer::Linear(p) => {
                put_f32s(&mut buf, p.weights.data());
                put_f32s(&mut buf, &p.bias);
            }
            _ => {}
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// CRC32 of the encoded model, as lowercase hex.
pub fn model_hash(model: &ModelGraph) -> String {
    let bytes = encode_model(model);
    // CRC32 of everything before the trailer, i.e. the stored checksum.
    format!("{:08x}", crc32fast::hash(&bytes[..bytes.len() - CRC_LEN]))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

struct Entry {
    kind: u8,
    f: [usize; 6],
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

fn entry_params(i: usize, e: &Entry) -> Result<usize, FormatError> {
    let prod = |vals: &[usize]| {
        vals.iter()
            .try_fold(1usize, |acc, &v| acc.checked_mul(v))
            .ok_or_else(|| malformed(format!("layer {i}: extents overflow")))
    };
    match e.kind {
        KIND_CONV => {
            if e.f[..5].contains(&0) {
                return Err(malformed(format!("layer {i}: conv extents and stride must be positive")));
            }
            Ok(prod(&e.f[..4])?.checked_add(e.f[1]).ok_or_else(|| malformed("overflow"))?)
        }
        KIND_BN => {
            if e.f[0] == 0 {
                return Err(malformed(format!("layer {i}: batch norm needs channels")));
            }
            e.f[0].checked_mul(4).ok_or_else(|| malformed("overflow"))
        }
        KIND_RELU | KIND_GAP => Ok(0),
        KIND_MAXPOOL => {
            if e.f[0] == 0 {
                return Err(malformed(format!("layer {i}: pool size must be positive")));
            }
            Ok(0)
        }
        KIND_LINEAR => {
            if e.f[0] == 0 || e.f[1] == 0 {
                return Err(malformed(format!("layer {i}: linear extents must be positive")));
            }
            Ok(prod(&e.f[..2])?.checked_add(e.f[1]).ok_or_else(|| malformed("overflow"))?)
        }
        k => Err(malformed(format!("layer {i}: unknown kind code {k}"))),
    }
}

/// Parses a model file image. Checks run in order: magic, version, layer
/// table, total length (truncation), checksum, then graph validation.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let count = r.u32()? as usize;
    // Bound the table by the bytes actually present before allocating.
    let table_len = count
        .checked_mul(ENTRY_LEN)
        .ok_or_else(|| malformed("layer count overflows"))?;
    let table = r.take(table_len)?;
    let mut entries = Vec::with_capacity(count);
    for raw in table.chunks_exact(ENTRY_LEN) {
        let mut f = [0usize; 6];
        for (j, slot) in f.iter_mut().enumerate() {
            *slot = u32::from_le_bytes(raw[1 + 4 * j..5 + 4 * j].try_into().unwrap()) as usize;
        }
        entries.push(Entry { kind: raw[0], f });
    }
    let mut total = 0usize;
    for (i, e) in entries.iter().enumerate() {
        total = total
            .checked_add(entry_params(i, e)?)
            .ok_or_else(|| malformed("parameter count overflows"))?;
    }
    let expected = total
        .checked_mul(4)
        .and_then(|b| b.checked_add(r.pos + CRC_LEN))
        .ok_or_else(|| malformed("file size overflows"))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            needed: expected,
            available: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - CRC_LEN];
    let stored = u32::from_le_bytes(bytes[expected - CRC_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }

    let mut layers = Vec::with_capacity(count);
    for (i, e) in entries.iter().enumerate() {
        let f = e.f;
        let layer = match e.kind {
            KIND_CONV => {
                let weights = Tensor::from_vec(&[f[1], f[0], f[2], f[3]], r.f32s(f[0] * f[1] * f[2] * f[3])?)
                    .map_err(|e| malformed(e.to_string()))?;
                let bias = r.f32s(f[1])?;
                Layer::Conv(ConvParams::new(weights, bias, f[4], f[5]).map_err(|e| malformed(format!("layer {i}: {e}")))?)
            }
            KIND_BN => {
                let ch = f[0];
                let bn = BnParams {
                    scale: r.f32s(ch)?,
                    shift: r.f32s(ch)?,
                    running_mean: r.f32s(ch)?,
                    running_var: r.f32s(ch)?,
                    tau: f32::from_bits(f[1] as u32),
                    momentum: f32::from_bits(f[2] as u32),
                };
                Layer::BatchNorm(bn)
            }
            KIND_RELU => Layer::Relu,
            KIND_MAXPOOL => Layer::MaxPool { size: f[0] },
            KIND_GAP => Layer::GlobalAvgPool,
            KIND_LINEAR => {
                let weights = Tensor::from_vec(&[f[1], f[0]], r.f32s(f[0] * f[1])?).map_err(|e| malformed(e.to_string()))?;
                let bias = r.f32s(f[1])?;
                Layer::Linear(LinearParams::new(weights, bias).map_err(|e| malformed(format!("layer {i}: {e}")))?)
            }
            _ => unreachable!("kind codes checked above"),
        };
        layers.push(layer);
    }
    let model = ModelGraph {
        input: InputShape::new(c, h, w),
        classes,
        layers,
    };
    model.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &ModelGraph, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
