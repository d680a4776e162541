//! Model checkpoints: a text descriptor header followed by little-endian f32
//! parameters in canonical order.

use std::path::Path;

use crate::error::{Error, Result};

use super::phnn::{PhnnDescriptor, PhnnParams};
use super::tensor::Tensor;

const MAGIC: &str = "CTVFORGE-PHNN 1";
const END: &str = "END";

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn encode_checkpoint(params: &PhnnParams<f32>) -> Vec<u8> {
    let d = &params.desc;
    let header = format!(
        "{MAGIC}\nin_channels {}\nchannels {}\nconvs {}\nlayout_checksum {}\nparams {}\n{END}\n",
        d.in_channels,
        join(&d.channels),
        join(&d.convs),
        d.layout_checksum,
        params.count()
    );
    let mut out = header.into_bytes();
    for t in &params.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PhnnParams<f32>> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not text"))?;
        pos += nl + 1;
        if line == END {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 16 {
            return Err(bad("header too long"));
        }
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("bad magic"));
    }
    let field = |key: &str| -> Result<&str> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(format!("missing {key}")))
    };
    let nums = |s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad number {t:?}"))))
            .collect()
    };
    let desc = PhnnDescriptor {
        in_channels: field("in_channels")?.parse().map_err(|_| bad("bad in_channels"))?,
        channels: nums(field("channels")?)?,
        convs: nums(field("convs")?)?,
        layout_checksum: field("layout_checksum")?.parse().map_err(|_| bad("bad layout_checksum"))?,
    };
    let count: usize = field("params")?.parse().map_err(|_| bad("bad params"))?;
    let mut params = PhnnParams::<f32>::zeros(desc)?;
    if params.count() != count {
        return Err(bad(format!("descriptor implies {} params, header says {count}", params.count())));
    }
    let payload = &bytes[pos..];
    if payload.len() != count * 4 {
        return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), count * 4)));
    }
    let mut vals = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for t in &mut params.tensors {
        let data: Vec<f32> = vals.by_ref().take(t.len()).collect();
        *t = Tensor::from_vec(t.shape(), data)?;
    }
    if params.tensors.iter().any(|t| !t.all_finite()) {
        return Err(bad("non-finite parameter"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &PhnnParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PhnnParams<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::phnn::SideInit;

    #[test]
    fn round_trip_is_exact() {
        let p = PhnnParams::<f32>::init(PhnnDescriptor::toy(5, 0xdead_beef), 3, SideInit::Random).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let p = PhnnParams::<f32>::init(PhnnDescriptor::toy(2, 7), 3, SideInit::Zero).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(&bytes[3..]).is_err());
        let text = String::from_utf8_lossy(&bytes[..60]).replace("channels 8", "channels 9");
        let mut edited = text.into_bytes();
        edited.extend_from_slice(&bytes[60..]);
        assert!(decode_checkpoint(&edited).is_err());
    }
}
