//! Binary checkpoint format:
//!
//! ```text
//! magic "CSEGCKPT" | version u32 | config length u32 | config JSON
//! | entry count u32 | entries
//! entry: name length u32 | name | rank u32 | dims u64 x rank | values f64 x numel
//! ```
//!
//! All integers and reals are little-endian. Values are stored bit-exactly.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

use super::tensor::{ParamSet, Tensor};
use super::unet::{MiniUNet, UNetConfig};

const MAGIC: &[u8; 8] = b"CSEGCKPT";
const VERSION: u32 = 1;
const BUFFER_PREFIX: &str = "buffer:";

pub fn encode(net: &MiniUNet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&net.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let entries: Vec<(String, &Tensor)> = net
        .params
        .iter()
        .map(|(k, v)| (k.clone(), v))
        .chain(net.buffers.iter().map(|(k, v)| (format!("{BUFFER_PREFIX}{k}"), v)))
        .collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(buf)
}

fn take_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn take_bytes(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<MiniUNet> {
    let mut r = Cursor::new(bytes);
    if &take::<8>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = take_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = take_u32(&mut r)? as usize;
    let config: UNetConfig = serde_json::from_slice(&take_bytes(&mut r, cfg_len)?)?;
    let count = take_u32(&mut r)?;
    let mut params = ParamSet::new();
    let mut buffers = ParamSet::new();
    for _ in 0..count {
        let name_len = take_u32(&mut r)? as usize;
        let name = String::from_utf8(take_bytes(&mut r, name_len)?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = take_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take_bytes(&mut r, numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("entry too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::from_vec(&shape, data)?;
        match name.strip_prefix(BUFFER_PREFIX) {
            Some(b) => buffers.insert(b, t),
            None => params.insert(name, t),
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    let template = MiniUNet::zeroed(config)?;
    if !template.params.same_layout(&params) || !template.buffers.same_layout(&buffers) {
        return Err(Error::Checkpoint("entries do not match the stored architecture".into()));
    }
    Ok(MiniUNet { config, params, buffers })
}

pub fn save(net: &MiniUNet, path: &Path) -> Result<()> {
    fs::write(path, encode(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MiniUNet> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::unet::{Downsample, NormKind, Upsample};
    use crate::rng::stream_rng;

    #[test]
    fn round_trip_is_bit_exact() {
        for norm in [NormKind::GroupNorm, NormKind::BatchNorm] {
            let cfg = UNetConfig { norm, down: Downsample::ConvStride, up: Upsample::PixelShuffle, aspp: true, ..UNetConfig::default() };
            let mut net = MiniUNet::new(cfg, &mut stream_rng(9, 1)).unwrap();
            net.params.get_mut("head.bias").unwrap().data_mut()[0] = f64::MIN_POSITIVE / 3.0;
            let back = decode(&encode(&net).unwrap()).unwrap();
            assert_eq!(back.config, net.config);
            let a: Vec<u64> = net.params.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.flatten().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.buffers, net.buffers);
        }
    }

    #[test]
    fn rejects_corruption() {
        let net = MiniUNet::new(UNetConfig::default(), &mut stream_rng(9, 1)).unwrap();
        let bytes = encode(&net).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
    }
}
