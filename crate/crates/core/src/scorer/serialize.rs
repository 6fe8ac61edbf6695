//! SVQP parameter blobs: magic `"SVQP"`, `u16` version, then tensors as
//! `(u16 name length, name, u8 rank, u32 dims × rank, f64 values)`, all
//! little-endian, until end of stream.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tinynet::{TinyNetDims, TinyNetParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SVQP_MAGIC: [u8; 4] = *b"SVQP";
pub const SVQP_VERSION: u16 = 1;

pub fn write_params<T: Scalar, W: Write>(params: &TinyNetParams<T>, sink: &mut W) -> Result<()> {
    let io = |source| Error::Io {
        bytes_written: 0,
        source,
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(&SVQP_MAGIC);
    buf.extend_from_slice(&SVQP_VERSION.to_le_bytes());
    for (name, shape, values) in params.tensors() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for d in &shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    sink.write_all(&buf).map_err(io)?;
    sink.flush().map_err(io)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(Error::Truncated {
        expected: n as u64,
        found: bytes.len().saturating_sub(*pos) as u64,
    })?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

pub fn read_params<T: Scalar, R: Read>(source: &mut R) -> Result<TinyNetParams<T>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes).map_err(|source| Error::Io {
        bytes_written: 0,
        source,
    })?;
    let mut pos = 0;
    if take(&bytes, &mut pos, 4)? != SVQP_MAGIC {
        return Err(Error::Format("bad magic, expected SVQP".into()));
    }
    let version = u16::from_le_bytes(take(&bytes, &mut pos, 2)?.try_into().unwrap());
    if version != SVQP_VERSION {
        return Err(Error::Unsupported(format!("SVQP version {version}")));
    }
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    while pos < bytes.len() {
        let len = u16::from_le_bytes(take(&bytes, &mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&bytes, &mut pos, len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = take(&bytes, &mut pos, 1)?[0] as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| take(&bytes, &mut pos, 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let values = take(&bytes, &mut pos, count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }

    let lead = |name: &str| -> Result<usize> {
        tensors
            .get(name)
            .and_then(|(s, _)| s.first().copied())
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    };
    let dims = TinyNetDims {
        d_intra: lead("intra_proj.weight")?,
        d_inter: lead("inter_proj.weight")?,
        d_hidden: lead("inter_to_intra.0.weight")?,
        head_hidden: lead("head.0.weight")?,
    };
    let mut params = TinyNetParams::<T>::zeros(dims);
    let layout: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if layout.len() != tensors.len() {
        return Err(Error::Format(format!("expected {} tensors, found {}", layout.len(), tensors.len())));
    }
    for ((name, shape), dst) in layout.iter().zip(params.tensors_mut()) {
        let (s, v) = tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if s != shape {
            return Err(Error::Model(format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        for (d, &x) in dst.iter_mut().zip(v) {
            *d = T::lit(x);
        }
    }
    Ok(params)
}

pub fn write_params_file<T: Scalar>(params: &TinyNetParams<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::path_io(path, e))?;
    write_params(params, &mut BufWriter::new(file))
}

pub fn read_params_file<T: Scalar>(path: &Path) -> Result<TinyNetParams<T>> {
    let file = File::open(path).map_err(|e| Error::path_io(path, e))?;
    read_params(&mut BufReader::new(file))
}
