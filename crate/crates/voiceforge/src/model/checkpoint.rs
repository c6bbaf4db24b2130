//! Binary checkpoint format.
//!
//! Little-endian layout: magic `VFCK`, format version u32, header length u32,
//! JSON header (config, step counter, vocabulary layout version, named-array
//! directory with offsets and lengths), then the raw f32 arrays. A
//! vocabulary-layout JSON sidecar is written next to every checkpoint as
//! `<file>.vocab.json` and must match at load time.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{ModelConfig, ParamLayout, Params};
use super::train::AdamState;
use super::Model;
use crate::error::Error;
use crate::sequencer::{VocabularyLayout, LAYOUT_VERSION};
use crate::Result;

const MAGIC: &[u8; 4] = b"VFCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    vocab_layout_version: u32,
    has_optimizer: bool,
    arrays: Vec<ArrayEntry>,
}

/// Path of the vocabulary sidecar for a checkpoint path.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".vocab.json");
    PathBuf::from(s)
}

fn push_array(
    entries: &mut Vec<ArrayEntry>,
    data: &mut Vec<u8>,
    name: &str,
    values: &[f32],
) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::InvalidCheckpoint(format!(
                "array {name} holds a non-finite value"
            )));
        }
    }
    let offset = data.len() as u64;
    data.reserve(values.len() * 4);
    for v in values {
        data.extend_from_slice(&v.to_le_bytes());
    }
    entries.push(ArrayEntry {
        name: name.to_string(),
        offset,
        len: values.len() as u64,
    });
    Ok(())
}

/// Writes the checkpoint and its vocabulary sidecar.
pub fn save_checkpoint(model: &Model, opt: Option<&AdamState>, path: &Path) -> Result<()> {
    let layout = model.layout();
    let mut entries = Vec::new();
    let mut data = Vec::new();
    for (i, (name, _, _)) in layout.entries.iter().enumerate() {
        push_array(&mut entries, &mut data, name, &model.params.arrays[i])?;
    }
    if let Some(opt) = opt {
        for (i, (name, _, _)) in layout.entries.iter().enumerate() {
            push_array(&mut entries, &mut data, &format!("opt.m.{name}"), &opt.m.arrays[i])?;
        }
        for (i, (name, _, _)) in layout.entries.iter().enumerate() {
            push_array(&mut entries, &mut data, &format!("opt.v.{name}"), &opt.v.arrays[i])?;
        }
    }
    let header = Header {
        config: model.config,
        step: model.step,
        vocab_layout_version: LAYOUT_VERSION,
        has_optimizer: opt.is_some(),
        arrays: entries,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(12 + header_json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&data);

    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    std::fs::write(sidecar_path(path), model.vocab.layout().to_json())?;
    Ok(())
}

fn read_array(data: &[u8], entry: &ArrayEntry) -> Result<Vec<f32>> {
    let start = entry.offset as usize;
    let end = start + entry.len as usize * 4;
    if end > data.len() {
        return Err(Error::InvalidCheckpoint(format!(
            "array {} runs past the end of the file",
            entry.name
        )));
    }
    let mut out = Vec::with_capacity(entry.len as usize);
    for chunk in data[start..end].chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::InvalidCheckpoint(format!(
                "array {} holds a non-finite value",
                entry.name
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Loads a checkpoint and its sidecar, validating magic, versions, shapes,
/// finiteness, and the vocabulary layout.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<AdamState>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(Error::InvalidCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::InvalidCheckpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if 12 + hlen > bytes.len() {
        return Err(Error::InvalidCheckpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])?;
    let data = &bytes[12 + hlen..];

    if header.vocab_layout_version != LAYOUT_VERSION {
        return Err(Error::VocabularyMismatch(format!(
            "checkpoint vocabulary layout v{}, this build is v{LAYOUT_VERSION}",
            header.vocab_layout_version
        )));
    }
    let sidecar = std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
        Error::VocabularyMismatch(format!("missing vocabulary sidecar: {e}"))
    })?;
    let vocab = VocabularyLayout::from_json(&sidecar)?.open()?;

    header.config.validate()?;
    if vocab.size() as usize != header.config.vocab_size {
        return Err(Error::VocabularyMismatch(format!(
            "sidecar vocabulary size {} != model vocab_size {}",
            vocab.size(),
            header.config.vocab_size
        )));
    }

    let layout = ParamLayout::new(&header.config);
    let find = |name: &str| -> Result<&ArrayEntry> {
        header
            .arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidCheckpoint(format!("missing array {name}")))
    };

    let mut params: Params<f32> = Params::zeros(&layout);
    for (i, (name, r, c)) in layout.entries.iter().enumerate() {
        let entry = find(name)?;
        if entry.len as usize != r * c {
            return Err(Error::InvalidCheckpoint(format!(
                "array {name} has {} elements, layout expects {}",
                entry.len,
                r * c
            )));
        }
        params.arrays[i] = read_array(data, entry)?;
    }

    let opt = if header.has_optimizer {
        let mut state = AdamState::new(&layout);
        for (i, (name, _, _)) in layout.entries.iter().enumerate() {
            state.m.arrays[i] = read_array(data, find(&format!("opt.m.{name}"))?)?;
            state.v.arrays[i] = read_array(data, find(&format!("opt.v.{name}"))?)?;
        }
        Some(state)
    } else {
        None
    };

    Ok((
        Model {
            config: header.config,
            vocab,
            params,
            step: header.step,
        },
        opt,
    ))
}
