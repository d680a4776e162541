//! `.svox` volume files.
//!
//! Little-endian layout:
//!
//! | bytes | content                              |
//! |-------|--------------------------------------|
//! | 8     | magic `SVOX0001`                     |
//! | 1     | dtype (0 = float32, 1 = uint8 mask)  |
//! | 12    | dims `nx, ny, nz` as u32             |
//! | 12    | spacing `dx, dy, dz` in mm as f32    |
//! | ...   | raw payload, x-fastest               |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result, SvoxError};
use crate::voxgrid::{Dims, MaskVolume, Spacing, VolumeGrid};

pub const MAGIC: &[u8; 8] = b"SVOX0001";
const HEADER_LEN: usize = 8 + 1 + 12 + 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Svox {
    Scalar(VolumeGrid),
    Mask(MaskVolume),
}

impl From<VolumeGrid> for Svox {
    fn from(v: VolumeGrid) -> Self {
        Svox::Scalar(v)
    }
}

impl From<MaskVolume> for Svox {
    fn from(m: MaskVolume) -> Self {
        Svox::Mask(m)
    }
}

fn header(out: &mut Vec<u8>, dtype: u8, dims: Dims, spacing: Spacing) {
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    for n in dims.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for s in spacing.as_array() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
}

pub fn encode_volume(vol: &VolumeGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * vol.data().len());
    header(&mut out, 0, vol.dims(), vol.spacing());
    for v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &MaskVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + mask.data().len());
    header(&mut out, 1, mask.dims(), mask.spacing());
    out.extend_from_slice(mask.data());
    out
}

pub fn encode(v: &Svox) -> Vec<u8> {
    match v {
        Svox::Scalar(g) => encode_volume(g),
        Svox::Mask(m) => encode_mask(m),
    }
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode(bytes: &[u8]) -> Result<Svox, SvoxError> {
    if bytes.len() < MAGIC.len() || &bytes[..8] != MAGIC {
        return Err(SvoxError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(SvoxError::ShortHeader);
    }
    let dtype = bytes[8];
    let elem = match dtype {
        0 => 4,
        1 => 1,
        other => return Err(SvoxError::BadDtype(other)),
    };
    let (nx, ny, nz) = (le_u32(&bytes[9..]), le_u32(&bytes[13..]), le_u32(&bytes[17..]));
    let dims = Dims::new(nx as usize, ny as usize, nz as usize).map_err(|_| SvoxError::BadDims(nx, ny, nz))?;
    let spacing = Spacing::new(
        le_f32(&bytes[21..]) as f64,
        le_f32(&bytes[25..]) as f64,
        le_f32(&bytes[29..]) as f64,
    )
    .map_err(|_| SvoxError::BadSpacing)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = dims
        .nx
        .checked_mul(dims.ny)
        .and_then(|v| v.checked_mul(dims.nz))
        .and_then(|v| v.checked_mul(elem))
        .ok_or(SvoxError::BadDims(nx, ny, nz))?;
    if payload.len() < expected {
        return Err(SvoxError::ShortPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(SvoxError::TrailingBytes);
    }
    match dtype {
        0 => {
            let data: Vec<f32> = payload.chunks_exact(4).map(le_f32).collect();
            VolumeGrid::new(dims, spacing, data)
                .map(Svox::Scalar)
                .map_err(|_| SvoxError::NonFinite)
        }
        _ => {
            if let Some(&v) = payload.iter().find(|&&v| v > 1) {
                return Err(SvoxError::NonBinaryMask(v));
            }
            Ok(Svox::Mask(
                MaskVolume::new(dims, spacing, payload.to_vec()).expect("validated payload"),
            ))
        }
    }
}

pub fn write_svox(v: &Svox, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(v)).map_err(|e| Error::io(path, e))
}

pub fn write_volume(v: &VolumeGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(v)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(m)).map_err(|e| Error::io(path, e))
}

pub fn read_svox(path: impl AsRef<Path>) -> Result<Svox> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Svox {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeGrid> {
    let path = path.as_ref();
    match read_svox(path)? {
        Svox::Scalar(v) => Ok(v),
        Svox::Mask(m) => Ok(m.to_volume()),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    match read_svox(path)? {
        Svox::Mask(m) => Ok(m),
        Svox::Scalar(_) => Err(Error::Svox {
            path: path.to_path_buf(),
            source: SvoxError::BadDtype(0),
        }),
    }
}
