//! Middlebury `.flo` container: f32 magic, i32 width, i32 height, then
//! interleaved f32 pairs in row-major order, all little-endian.
//!
//! Motion-boundary files reuse the layout with a different magic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLOW_MAGIC: f32 = 202021.25;
pub const MOTION_BOUNDARY_MAGIC: f32 = 202021.5;

/// Raw two-channel field as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoChannelField {
    pub width: usize,
    pub height: usize,
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

pub fn encode(magic: f32, field: &TwoChannelField, mut out: impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(12 + field.first.len() * 8);
    buf.extend_from_slice(&magic.to_le_bytes());
    buf.extend_from_slice(&(field.width as i32).to_le_bytes());
    buf.extend_from_slice(&(field.height as i32).to_le_bytes());
    for (a, b) in field.first.iter().zip(&field.second) {
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn decode(magic: f32, mut input: impl Read, origin: &Path) -> Result<TwoChannelField> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(origin, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(origin, "shorter than the 12-byte header"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let found = f32::from_le_bytes(word(0));
    if found != magic {
        return Err(Error::format(
            origin,
            format!("magic {found} does not match expected {magic}"),
        ));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::format(origin, format!("invalid size {width}x{height}")));
    }
    let n = width as usize * height as usize;
    if bytes.len() != 12 + n * 8 {
        return Err(Error::format(
            origin,
            format!("expected {} payload bytes, found {}", n * 8, bytes.len() - 12),
        ));
    }
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for pair in bytes[12..].chunks_exact(8) {
        first.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
        second.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
    }
    Ok(TwoChannelField {
        width: width as usize,
        height: height as usize,
        first,
        second,
    })
}

pub(crate) fn write_file(path: &Path, magic: f32, field: &TwoChannelField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(magic, field, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path, magic: f32) -> Result<TwoChannelField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(magic, BufReader::new(file), path)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_file(path, FLOW_MAGIC, &flow.to_raw())
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let raw = read_file(path, FLOW_MAGIC)?;
    FlowField::new(raw.width, raw.height, raw.first, raw.second)
        .map_err(|e| Error::format(path, e.to_string()))
}

impl FlowField {
    pub(crate) fn to_raw(&self) -> TwoChannelField {
        TwoChannelField {
            width: self.width,
            height: self.height,
            first: self.u.clone(),
            second: self.v.clone(),
        }
    }
}
