//! Checkpoint archive: named parameter arrays plus the model config and a
//! format-version integer, in one little-endian binary file.
//!
//! Layout:
//! ```text
//! magic  b"SSTC"
//! u32    format version (1)
//! u32    config JSON length, then the JSON bytes
//! u32    section count
//!   per section: string name, u32 entry count,
//!     per entry: string name, u8 ndim, u32 dims..., f64 data...
//! u32    meta count, then (string key, string value) pairs
//! ```
//! Strings are u32 length + UTF-8 bytes. Loading validates entry names and
//! shapes against the layout implied by the stored config.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{init_parameters, ModelConfig, ModelParameters};
use crate::nn::ParamEntry;

const MAGIC: &[u8; 4] = b"SSTC";
pub const FORMAT_VERSION: u32 = 1;

/// A decoded checkpoint: sections of named arrays plus metadata.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub sections: Vec<(String, Vec<ParamEntry>)>,
    pub meta: BTreeMap<String, String>,
}

impl CheckpointData {
    pub fn section(&self, name: &str) -> Option<&[ParamEntry]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e.as_slice())
    }

    pub fn take_section(&mut self, name: &str) -> Option<Vec<ParamEntry>> {
        let idx = self.sections.iter().position(|(n, _)| n == name)?;
        Some(self.sections.remove(idx).1)
    }
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(format_err(path, format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| format_err(path, "non-UTF8 string"))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: message.into(),
    }
}

fn write_entries(w: &mut impl Write, entries: &[ParamEntry]) -> Result<()> {
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for e in entries {
        write_string(w, &e.name)?;
        w.write_u8(e.shape.len() as u8)?;
        for &d in &e.shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &e.data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_entries(r: &mut impl Read, path: &Path) -> Result<Vec<ParamEntry>> {
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count > 1 << 16 {
        return Err(format_err(path, format!("implausible entry count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r, path)?;
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let len: usize = shape.iter().product();
        if len > 1 << 28 {
            return Err(format_err(path, format!("implausible array size {len}")));
        }
        let mut data = vec![0.0; len];
        for v in &mut data {
            *v = r.read_f64::<LittleEndian>()?;
        }
        out.push(ParamEntry::new(name, shape, data));
    }
    Ok(out)
}

/// Writes a checkpoint archive.
pub fn write_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let config_json =
        serde_json::to_string(&data.config).map_err(|e| Error::Internal(e.to_string()))?;
    write_string(&mut file, &config_json)?;
    file.write_u32::<LittleEndian>(data.sections.len() as u32)?;
    for (name, entries) in &data.sections {
        write_string(&mut file, name)?;
        write_entries(&mut file, entries)?;
    }
    file.write_u32::<LittleEndian>(data.meta.len() as u32)?;
    for (k, v) in &data.meta {
        write_string(&mut file, k)?;
        write_string(&mut file, v)?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a checkpoint archive.
pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut file = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("checkpoint not found: {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad checkpoint magic"));
    }
    let version = file.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(format_err(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let config_json = read_string(&mut file, path)?;
    let config: ModelConfig = serde_json::from_str(&config_json)
        .map_err(|e| format_err(path, format!("bad config json: {e}")))?;
    let n_sections = file.read_u32::<LittleEndian>()? as usize;
    if n_sections > 64 {
        return Err(format_err(path, "implausible section count"));
    }
    let mut sections = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let name = read_string(&mut file, path)?;
        let entries = read_entries(&mut file, path)?;
        sections.push((name, entries));
    }
    let n_meta = file.read_u32::<LittleEndian>()? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..n_meta {
        let k = read_string(&mut file, path)?;
        let v = read_string(&mut file, path)?;
        meta.insert(k, v);
    }
    Ok(CheckpointData {
        config,
        sections,
        meta,
    })
}

/// Validates a section against the layout implied by `config` and wraps it
/// as model parameters.
pub fn params_from_section(
    config: &ModelConfig,
    entries: Vec<ParamEntry>,
    buffers: Vec<ParamEntry>,
    path: &Path,
) -> Result<ModelParameters> {
    let loaded = ModelParameters::from_parts(*config, entries, buffers);
    let reference = init_parameters(config, 0);
    reference.check_same_structure(&loaded).map_err(|e| {
        format_err(
            path,
            format!("checkpoint does not match its own config: {e}"),
        )
    })?;
    Ok(loaded)
}

/// Writes a plain model checkpoint (one parameter set).
pub fn write_model_checkpoint(path: &Path, params: &ModelParameters) -> Result<()> {
    let data = CheckpointData {
        config: *params.config(),
        sections: vec![
            ("params".to_string(), params.entries().to_vec()),
            ("buffers".to_string(), params.buffers().to_vec()),
        ],
        meta: BTreeMap::from([("kind".to_string(), "model".to_string())]),
    };
    write_checkpoint(path, &data)
}

/// Reads a plain model checkpoint, validating names and shapes.
pub fn read_model_checkpoint(path: &Path) -> Result<ModelParameters> {
    let mut data = read_checkpoint(path)?;
    let entries = data
        .take_section("params")
        .ok_or_else(|| format_err(path, "missing params section"))?;
    let buffers = data.take_section("buffers").unwrap_or_default();
    params_from_section(&data.config, entries, buffers, path)
}
