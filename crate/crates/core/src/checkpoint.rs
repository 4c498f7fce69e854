//! Model files: one JSON header line followed by little-endian `f32`
//! parameters, convolution by convolution (weights then bias).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Conv2d;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model_kind: String,
    pub config: serde_json::Value,
    pub param_count: usize,
}

pub fn save<'a, C: Serialize>(
    path: &Path,
    model_kind: &str,
    config: &C,
    convs: impl IntoIterator<Item = &'a Conv2d>,
) -> Result<()> {
    let convs: Vec<&Conv2d> = convs.into_iter().collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        model_kind: model_kind.to_string(),
        config: serde_json::to_value(config)?,
        param_count: convs.iter().map(|c| c.param_count()).sum(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(header.param_count * 4);
    for c in &convs {
        for v in c.weight.iter().chain(&c.bias) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<Header> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    read_header_from(&mut reader, path)
}

fn read_header_from(reader: &mut impl BufRead, path: &Path) -> Result<Header> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Checkpoint(format!("{}: unreadable header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    Ok(header)
}

/// Loads parameters into `convs` after checking kind and configuration
/// against the model being restored.
pub fn load_into<'a, C: Serialize + DeserializeOwned + PartialEq>(
    path: &Path,
    model_kind: &str,
    expected: &C,
    convs: impl IntoIterator<Item = &'a mut Conv2d>,
) -> Result<()> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let header = read_header_from(&mut reader, path)?;
    if header.model_kind != model_kind {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds a {} model, expected {model_kind}",
            path.display(),
            header.model_kind
        )));
    }
    let stored: C = serde_json::from_value(header.config.clone())
        .map_err(|e| Error::CheckpointMismatch(format!("{}: config does not parse: {e}", path.display())))?;
    if &stored != expected || header.config != serde_json::to_value(expected)? {
        return Err(Error::CheckpointMismatch(format!(
            "{} was trained with a different {model_kind} configuration",
            path.display()
        )));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != header.param_count * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} parameters, found {} bytes",
            path.display(),
            header.param_count,
            payload.len()
        )));
    }
    let mut values = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut loaded = 0;
    for c in convs {
        for v in c.weight.iter_mut().chain(c.bias.iter_mut()) {
            *v = values
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("{}: truncated parameters", path.display())))?;
            loaded += 1;
        }
    }
    if loaded != header.param_count {
        return Err(Error::Checkpoint(format!(
            "{}: {} stored parameters for a {loaded}-parameter model",
            path.display(),
            header.param_count
        )));
    }
    Ok(())
}
