//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "ATCKPT\0\0"
//! version   u32 LE
//! hlen      u64 LE
//! header    hlen bytes of JSON
//! tensors   f64 LE, in header order, row-major
//! checksum  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, TaggerModel, DENSE_NAMES};
use crate::bilstm::{BiLstm, LstmParams};
use crate::corpus::label_order;
use crate::crf::CrfParams;
use crate::encoding::EmbeddingTable;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ATCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct TableHeader {
    vocab: Vec<String>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
pub(super) struct Header {
    label_order: String,
    config: ModelConfig,
    words: Option<TableHeader>,
    pos: Option<TableHeader>,
    tensors: Vec<TensorHeader>,
}

fn named_tensors(model: &TaggerModel) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::new();
    if let Some(t) = &model.words {
        out.push(("words".to_string(), t.vectors.clone().into_dyn()));
    }
    if let Some(t) = &model.pos {
        out.push(("pos".to_string(), t.vectors.clone().into_dyn()));
    }
    for (name, v) in DENSE_NAMES.iter().zip(model.dense()) {
        out.push((name.to_string(), v.to_owned()));
    }
    out
}

fn table_header(t: &Option<EmbeddingTable>) -> Option<TableHeader> {
    t.as_ref().map(|t| TableHeader {
        vocab: t.vocab().to_vec(),
        trainable: t.trainable,
    })
}

fn encode(header: &Header, tensors: &[(String, ArrayD<f64>)]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn to_bytes(model: &TaggerModel) -> Result<Vec<u8>> {
    let tensors = named_tensors(model);
    let header = Header {
        label_order: label_order(),
        config: model.config.clone(),
        words: table_header(&model.words),
        pos: table_header(&model.pos),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    encode(&header, &tensors)
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<TaggerModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(integrity("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 20 + DIGEST_LEN {
        return Err(integrity("checkpoint is truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(integrity("checksum mismatch (file is corrupt or truncated)"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body
        .get(20..20usize.saturating_add(hlen))
        .ok_or_else(|| integrity("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| integrity(format!("bad header: {e}")))?;
    if header.label_order != label_order() {
        return Err(Error::Incompatible(format!(
            "checkpoint label order {:?} differs from {:?}",
            header.label_order,
            label_order()
        )));
    }

    let mut data = &body[20 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let need = n.checked_mul(8).ok_or_else(|| integrity("tensor too large"))?;
        if data.len() < need {
            return Err(integrity(format!("tensor {} is truncated", t.name)));
        }
        let values: Vec<f64> = data[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[need..];
        let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), values).map_err(|e| integrity(e.to_string()))?;
        tensors.push((t.name.clone(), arr));
    }
    if !data.is_empty() {
        return Err(integrity("trailing bytes after tensors"));
    }
    assemble(header, tensors)
}

fn assemble(header: Header, tensors: Vec<(String, ArrayD<f64>)>) -> Result<TaggerModel> {
    let mut tensors = tensors.into_iter();
    let mut next = |expected: &str| -> Result<ArrayD<f64>> {
        match tensors.next() {
            Some((name, t)) if name == expected => Ok(t),
            Some((name, _)) => Err(Error::Incompatible(format!("expected tensor {expected}, found {name}"))),
            None => Err(Error::Incompatible(format!("missing tensor {expected}"))),
        }
    };
    fn two(t: ArrayD<f64>) -> Result<Array2<f64>> {
        t.into_dimensionality().map_err(|e| Error::Incompatible(e.to_string()))
    }
    fn one(t: ArrayD<f64>) -> Result<ndarray::Array1<f64>> {
        t.into_dimensionality().map_err(|e| Error::Incompatible(e.to_string()))
    }

    let words = match header.words {
        Some(h) => Some(EmbeddingTable::from_parts(h.vocab, two(next("words")?)?, h.trainable)?),
        None => None,
    };
    let pos = match header.pos {
        Some(h) => Some(EmbeddingTable::from_parts(h.vocab, two(next("pos")?)?, h.trainable)?),
        None => None,
    };
    let mut lstm_part = |prefix: &str| -> Result<LstmParams> {
        Ok(LstmParams {
            w: two(next(&format!("{prefix}.w"))?)?,
            u: two(next(&format!("{prefix}.u"))?)?,
            b: one(next(&format!("{prefix}.b"))?)?,
        })
    };
    let fwd = lstm_part("lstm.fwd")?;
    let bwd = lstm_part("lstm.bwd")?;
    let crf = CrfParams {
        emission_w: two(next("crf.emission_w")?)?,
        emission_b: one(next("crf.emission_b")?)?,
        transitions: two(next("crf.transitions")?)?,
        start: one(next("crf.start")?)?,
        end: one(next("crf.end")?)?,
        forbid_oi: header.config.forbid_oi,
    };
    if let Some((name, _)) = tensors.next() {
        return Err(Error::Incompatible(format!("unexpected tensor {name}")));
    }
    let model = TaggerModel {
        config: header.config,
        words,
        pos,
        lstm: BiLstm { fwd, bwd },
        crf,
    };
    model.config.validate()?;
    model.check_shapes()?;
    Ok(model)
}

pub fn save_checkpoint(model: &TaggerModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TaggerModel> {
    from_bytes(&std::fs::read(path)?)
}
