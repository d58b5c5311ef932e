//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MIMGNET\0"
//! version    u32      1
//! conv_dim   u8       0 = none, 1 = conv1d, 2 = conv2d
//! head       u8       0 = two-node, 1 = one-node
//! depth      u32
//! width      u32
//! channels   u32
//! height     u32
//! in_width   u32
//! fc_hidden  u32      0 = none
//! tensors    u32
//! per tensor: len u32, then len f32 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::Network;
use super::real::Real;
use super::spec::{Architecture, ConvDim, Head, NetworkSpec, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MIMGNET\0";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(b[0])
}

pub fn write_checkpoint<T: Real, W: Write>(net: &Network<T>, mut w: W) -> std::io::Result<()> {
    let spec = net.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let conv = match spec.conv_dim() {
        ConvDim::None => 0u8,
        ConvDim::Conv1d => 1,
        ConvDim::Conv2d => 2,
    };
    let head = match spec.head {
        Head::TwoNode => 0u8,
        Head::OneNode => 1,
    };
    w.write_all(&[conv, head])?;
    for v in [
        spec.depth(),
        spec.width(),
        spec.input.channels,
        spec.input.height,
        spec.input.width,
        spec.fc_hidden.unwrap_or(0),
        net.params().len(),
    ] {
        put_u32(&mut w, v)?;
    }
    for tensor in net.params() {
        put_u32(&mut w, tensor.len())?;
        for v in tensor {
            let v = v.to_f32().unwrap_or(f32::NAN);
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads a checkpoint; when `expected` is given the stored spec must equal it.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R, expected: Option<&NetworkSpec>) -> Result<Network<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let conv_dim = match get_u8(&mut r)? {
        0 => ConvDim::None,
        1 => ConvDim::Conv1d,
        2 => ConvDim::Conv2d,
        v => return Err(Error::Checkpoint(format!("unknown convolution kind {v}"))),
    };
    let head = match get_u8(&mut r)? {
        0 => Head::TwoNode,
        1 => Head::OneNode,
        v => return Err(Error::Checkpoint(format!("unknown head {v}"))),
    };
    let mut fields = [0usize; 7];
    for f in fields.iter_mut() {
        *f = get_u32(&mut r)? as usize;
    }
    let [depth, width, channels, height, in_width, hidden, tensors] = fields;
    let arch = Architecture { conv_dim, depth, width };
    let spec = NetworkSpec {
        arch,
        head,
        input: Shape::new(channels, height, in_width),
        fc_hidden: (hidden > 0).then_some(hidden),
    };
    if let Some(want) = expected {
        if *want != spec {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {arch} ({head}, input {}), expected {} ({}, input {})",
                spec.input, want.arch, want.head, want.input
            )));
        }
    }
    let mut net = Network::<T>::zeros(&spec)?;
    if tensors != net.params().len() {
        return Err(Error::Checkpoint(format!(
            "{tensors} parameter tensors, architecture needs {}",
            net.params().len()
        )));
    }
    let mut params = Vec::with_capacity(tensors);
    for (i, want) in net.params().iter().map(Vec::len).enumerate() {
        let len = get_u32(&mut r)? as usize;
        if len != want {
            return Err(Error::Checkpoint(format!(
                "tensor {i} has {len} values, expected {want}"
            )));
        }
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} truncated")))?;
        params.push(
            bytes
                .chunks_exact(4)
                .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect(),
        );
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(net, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path, expected: Option<&NetworkSpec>) -> Result<Network<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f), expected)
}
