//! Model file format: magic bytes, version, JSON header, raw
//! little-endian parameter array, trailing CRC-32 of the payload.

use super::train::TrainConfig;
use super::{ModelDims, ModelParameters, NeuralError, NeuralModel, OutputMode};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_MAGIC: [u8; 4] = *b"XCNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    output_mode: OutputMode,
    parameter_count: usize,
    train_config: Option<TrainConfig>,
}

/// CRC-32 (IEEE, reflected) over the header and parameter bytes.
fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = {
        let mut table = [0u32; 256];
        let mut n = 0usize;
        while n < 256 {
            let mut c = n as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            table[n] = c;
            n += 1;
        }
        table
    };
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Serializes a model; the round trip through [`load_model`] is bit-exact.
pub fn save_model(model: &NeuralModel, path: &Path) -> Result<(), NeuralError> {
    let header = Header {
        dims: model.params.dims,
        output_mode: model.output_mode,
        parameter_count: model.params.data.len(),
        train_config: model.train_config.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| NeuralError::Format(format!("header serialization: {e}")))?;
    let mut payload = header_bytes.clone();
    payload.reserve(model.params.data.len() * 8);
    for v in &model.params.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = crc32(&payload);

    let mut file = std::fs::File::create(path)?;
    file.write_all(&MODEL_MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&payload)?;
    file.write_all(&checksum.to_le_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NeuralModel, NeuralError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || bytes[..4] != MODEL_MAGIC {
        return Err(NeuralError::Format("missing XCNN magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sized"));
    if version != FORMAT_VERSION {
        return Err(NeuralError::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("sized")) as usize;
    let payload_start = 12;
    let body = &bytes[payload_start..];
    if body.len() < header_len + 4 {
        return Err(NeuralError::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| NeuralError::Format(format!("header parse: {e}")))?;
    let expected = header.dims.parameter_count();
    if header.parameter_count != expected {
        return Err(NeuralError::Format(format!(
            "header reports {} parameters, architecture implies {expected}",
            header.parameter_count
        )));
    }
    let param_bytes = expected * 8;
    let total = header_len + param_bytes + 4;
    if body.len() != total {
        return Err(NeuralError::Format(format!(
            "expected {total} payload bytes, found {}",
            body.len()
        )));
    }
    let payload = &body[..header_len + param_bytes];
    let stored = u32::from_le_bytes(body[header_len + param_bytes..].try_into().expect("sized"));
    let computed = crc32(payload);
    if stored != computed {
        return Err(NeuralError::Format(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in payload[header_len..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().expect("sized")));
    }
    Ok(NeuralModel {
        params: ModelParameters { dims: header.dims, data },
        output_mode: header.output_mode,
        train_config: header.train_config,
    })
}
