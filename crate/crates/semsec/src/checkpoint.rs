//! Versioned binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"SEMSEC01" (the trailing 01 is the format version)
//! 8       4     u32 layer count L
//! 12      9*L   per layer: u8 kind, u32 dim0, u32 dim1
//! 12+9L   8     u64 parameter count P
//! 20+9L   8*P   f64 parameters, flat, in layer order (dense: weights
//!               row-major (in x out), then biases)
//! ```
//!
//! Layer kinds: 0 = dense (dim0 = in_features, dim1 = out_features),
//! 1 = relu, 2 = tanh, 3 = sigmoid (dims zero), 4 = reshape
//! (dim0 = rows, dim1 = cols).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"SEMSEC01";

fn layer_code(layer: &LayerSpec) -> (u8, u32, u32) {
    match layer {
        LayerSpec::Dense {
            in_features,
            out_features,
        } => (0, *in_features as u32, *out_features as u32),
        LayerSpec::Relu => (1, 0, 0),
        LayerSpec::Tanh => (2, 0, 0),
        LayerSpec::Sigmoid => (3, 0, 0),
        LayerSpec::Reshape { rows, cols } => (4, *rows as u32, *cols as u32),
    }
}

fn layer_from_code(kind: u8, d0: u32, d1: u32) -> Result<LayerSpec> {
    Ok(match kind {
        0 => LayerSpec::Dense {
            in_features: d0 as usize,
            out_features: d1 as usize,
        },
        1 => LayerSpec::Relu,
        2 => LayerSpec::Tanh,
        3 => LayerSpec::Sigmoid,
        4 => LayerSpec::Reshape {
            rows: d0 as usize,
            cols: d1 as usize,
        },
        other => {
            return Err(Error::Config(format!(
                "checkpoint: unknown layer kind {other}"
            )))
        }
    })
}

pub fn write_network(net: &Network, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        let (kind, d0, d1) = layer_code(layer);
        w.write_all(&[kind])?;
        w.write_all(&d0.to_le_bytes())?;
        w.write_all(&d1.to_le_bytes())?;
    }
    w.write_all(&(net.params().len() as u64).to_le_bytes())?;
    for p in net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!(
            "checkpoint: bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let n_layers = u32::from_le_bytes(u32buf) as usize;
    if n_layers > 1024 {
        return Err(Error::Config(format!(
            "checkpoint: implausible layer count {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        r.read_exact(&mut u32buf)?;
        let d0 = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let d1 = u32::from_le_bytes(u32buf);
        layers.push(layer_from_code(kind[0], d0, d1)?);
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n_params = u64::from_le_bytes(u64buf) as usize;
    let mut params = Vec::with_capacity(n_params);
    let mut f64buf = [0u8; 8];
    for _ in 0..n_params {
        r.read_exact(&mut f64buf)?;
        params.push(f64::from_le_bytes(f64buf));
    }
    Network::from_parts(layers, params)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let mut r = BufReader::new(File::open(path)?);
    read_network(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;

    #[test]
    fn roundtrip_preserves_everything() {
        let net = init_network(
            &[
                LayerSpec::dense(6, 4),
                LayerSpec::Relu,
                LayerSpec::Reshape { rows: 2, cols: 2 },
                LayerSpec::dense(4, 3),
                LayerSpec::Sigmoid,
            ],
            11,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let loaded = read_network(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.layers(), net.layers());
        assert_eq!(loaded.params(), net.params());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let net = init_network(&[LayerSpec::dense(2, 2)], 0).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(read_network(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let net = init_network(&[LayerSpec::dense(2, 2)], 0).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(read_network(&mut buf.as_slice()).is_err());
    }
}
