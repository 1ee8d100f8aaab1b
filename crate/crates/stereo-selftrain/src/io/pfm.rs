//! Single-channel PFM codec.
//!
//! Format: ASCII header `Pf`, a dimensions line `width height`, and a
//! scale line whose sign encodes endianness (negative = little-endian),
//! followed by `width * height` 32-bit floats stored bottom-up. Color
//! (`PF`) files are rejected; this codec is single-channel by contract.
//!
//! On read, non-finite or negative payload values become invalid-mask
//! entries (with value 0), so sentinel encodings never enter arithmetic.
//! On write, invalid pixels are stored as `+inf`. Round-trips are
//! bit-exact for finite 32-bit floats.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::types::{DisparityMap, Grid, Mask};

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

/// Writes a grid as little-endian PFM; pixels where `mask` is false are
/// stored as `+inf`.
pub fn write_pfm(grid: &Grid, mask: Option<&Mask>, path: &Path) -> Result<()> {
    let w = grid.width();
    let h = grid.height();
    if let Some(m) = mask {
        if m.width() != w || m.height() != h {
            return Err(Error::shape(
                grid.shape_str(),
                format!("{}x{}", m.height(), m.width()),
            ));
        }
    }
    let mut out = Vec::with_capacity(64 + w * h * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", w, h).as_bytes());
    let mut buf = [0u8; 4];
    // Bottom-up row order.
    for y in (0..h).rev() {
        for x in 0..w {
            let valid = mask.map_or(true, |m| m.get(x, y));
            let v = if valid {
                grid.get(x, y) as f32
            } else {
                f32::INFINITY
            };
            LittleEndian::write_f32(&mut buf, v);
            out.extend_from_slice(&buf);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a single-channel PFM as a disparity map plus validity mask.
pub fn read_pfm(path: &Path) -> Result<(DisparityMap, Mask)> {
    let bytes = fs::read(path)?;
    let mut pos: usize = 0;

    let magic = read_token(&bytes, &mut pos)
        .ok_or_else(|| format_err(path, 0, "missing PFM magic"))?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => {
            return Err(format_err(
                path,
                0,
                "color PFM (PF) not supported; expected single-channel Pf",
            ))
        }
        other => {
            return Err(format_err(
                path,
                0,
                format!("bad PFM magic {:?}", other),
            ))
        }
    }
    let w_at = pos as u64;
    let width: usize = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err(path, w_at, "bad or missing width"))?;
    let h_at = pos as u64;
    let height: usize = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err(path, h_at, "bad or missing height"))?;
    if width == 0 || height == 0 {
        return Err(format_err(path, w_at, "zero dimension"));
    }
    let s_at = pos as u64;
    let scale: f64 = read_token(&bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err(path, s_at, "bad or missing scale"))?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(format_err(path, s_at, format!("invalid scale {}", scale)));
    }
    // Exactly one whitespace byte separates the header from the payload;
    // read_token already consumed it.
    let little_endian = scale < 0.0;
    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: need {} bytes after offset {}, have {}",
                need,
                pos,
                bytes.len() - pos
            ),
        ));
    }

    let mut map = DisparityMap::new(width, height);
    let mut mask = Mask::filled(width, height, true);
    let payload = &bytes[pos..pos + need];
    for row in 0..height {
        let y = height - 1 - row; // stored bottom-up
        for x in 0..width {
            let off = (row * width + x) * 4;
            let raw = &payload[off..off + 4];
            let v = if little_endian {
                LittleEndian::read_f32(raw)
            } else {
                BigEndian::read_f32(raw)
            } as f64;
            if v.is_finite() && v >= 0.0 {
                map.set(x, y, v);
            } else {
                map.set(x, y, 0.0);
                mask.set(x, y, false);
            }
        }
    }
    Ok((map, mask))
}

/// Reads one whitespace-delimited ASCII token, consuming one trailing
/// whitespace byte.
fn read_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() && (bytes[*pos] as char).is_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !(bytes[*pos] as char).is_whitespace() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    let token = std::str::from_utf8(&bytes[start..*pos]).ok()?.to_string();
    if *pos < bytes.len() {
        *pos += 1; // single whitespace separator
    }
    Some(token)
}
