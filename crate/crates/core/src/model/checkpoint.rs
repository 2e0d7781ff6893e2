// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Checkpoint container. Layout (all integers little-endian u32 unless noted):
//!
//! ```text
//! magic      8 bytes  "COPALCKP"
//! version    u32      1
//! vocab      u32
//! d_model    u32
//! n_layers   u32
//! table      n_layers x { kind: u8, a: u32, b: u32 }
//!              kind 0 linear      a = out_dim, b = in_dim
//!              kind 1 activation  a = 0 relu | 1 gelu | 2 tanh, b = 0
//!              kind 2 layer_norm  a = dim, b = 0
//! payload    f64 LE, row-major:
//!              embedding (vocab x d_model)
//!              then per layer in order: linear weight (out x in),
//!              layer_norm gain (dim) followed by bias (dim)
//! ```
//!
//! Nothing may follow the payload.

use std::fs;
use std::path::Path;

use super::{Activation, Layer, Network};
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COPALCKP";
const VERSION: u32 = 1;

pub fn write_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(VERSION);
    w.u32_len(net.vocab_size(), "vocab")?;
    w.u32_len(net.d_model(), "d_model")?;
    w.u32_len(net.layers().len(), "n_layers")?;
    for layer in net.layers() {
        match layer {
            Layer::Linear { weight } => {
                w.u8(0);
                w.u32_len(weight.rows(), "out_dim")?;
                w.u32_len(weight.cols(), "in_dim")?;
            }
            Layer::Activation(a) => {
                w.u8(1);
                w.u32(a.code() as u32);
                w.u32(0);
            }
            Layer::LayerNorm { gain, .. } => {
                w.u8(2);
                w.u32_len(gain.len(), "dim")?;
                w.u32(0);
            }
        }
    }
    w.f64s(net.embed().as_slice());
    for layer in net.layers() {
        match layer {
            Layer::Linear { weight } => w.f64s(weight.as_slice()),
            Layer::Activation(_) => {}
            Layer::LayerNorm { gain, bias } => {
                w.f64s(gain);
                w.f64s(bias);
            }
        }
    }
    Ok(w.buf)
}

enum Entry {
    Linear(usize, usize),
    Activation(Activation),
    Norm(usize),
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let vocab = r.u32("vocab")? as usize;
    let d = r.u32("d_model")? as usize;
    let n_layers = r.u32("n_layers")? as usize;
    if vocab == 0 || d == 0 {
        return Err(Error::format("vocab/d_model", "dimensions must be positive"));
    }
    if n_layers > r.remaining() / 9 {
        return Err(Error::format("n_layers", format!("{n_layers} entries cannot fit in the file")));
    }

    let mut table = Vec::with_capacity(n_layers);
    let mut expected_floats = vocab as u128 * d as u128;
    for i in 0..n_layers {
        let field = format!("layer[{i}]");
        let kind = r.u8(&format!("{field}.kind"))?;
        let a = r.u32(&format!("{field}.a"))? as usize;
        let b = r.u32(&format!("{field}.b"))? as usize;
        let entry = match kind {
            0 => {
                if a == 0 || b == 0 {
                    return Err(Error::format(format!("{field}.shape"), "linear dimensions must be positive"));
                }
                expected_floats += a as u128 * b as u128;
                Entry::Linear(a, b)
            }
            1 => Entry::Activation(
                u8::try_from(a)
                    .ok()
                    .and_then(Activation::from_code)
                    .ok_or_else(|| Error::format(format!("{field}.activation"), format!("unknown code {a}")))?,
            ),
            2 => {
                if a == 0 {
                    return Err(Error::format(format!("{field}.dim"), "layer_norm width must be positive"));
                }
                expected_floats += 2 * a as u128;
                Entry::Norm(a)
            }
            k => return Err(Error::format(format!("{field}.kind"), format!("unknown layer kind {k}"))),
        };
        table.push(entry);
    }

    let have = r.remaining() as u128;
    if expected_floats * 8 != have {
        return Err(Error::format(
            "payload",
            format!("shape table declares {} bytes of weights, file carries {have}", expected_floats * 8),
        ));
    }

    let embed = Matrix::new(vocab, d, r.f64s(vocab * d, "embedding")?)
        .map_err(|e| Error::format("embedding", e.to_string()))?;
    let mut layers = Vec::with_capacity(n_layers);
    for (i, entry) in table.into_iter().enumerate() {
        let layer = match entry {
            Entry::Linear(out, inp) => {
                Layer::Linear { weight: Matrix::new(out, inp, r.f64s(out * inp, &format!("layer[{i}].weight"))?)? }
            }
            Entry::Activation(a) => Layer::Activation(a),
            Entry::Norm(dim) => Layer::LayerNorm {
                gain: r.f64s(dim, &format!("layer[{i}].gain"))?,
                bias: r.f64s(dim, &format!("layer[{i}].bias"))?,
            },
        };
        layers.push(layer);
    }
    r.expect_end("payload")?;
    Network::new(embed, layers).map_err(|e| Error::format("layer table", e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkSpec;

    fn net() -> Network {
        let spec = NetworkSpec { vocab_size: 12, d_model: 4, hidden: 6, blocks: 1, activation: Activation::Gelu };
        Network::init(&spec, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let bytes = write_checkpoint(&n).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, n);
        assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = write_checkpoint(&net()).unwrap();
        for cut in [0, 5, 12, 25, 40, bytes.len() - 1] {
            let err = read_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn declared_shape_mismatch_is_format_error() {
        let mut bytes = write_checkpoint(&net()).unwrap();
        // first table entry starts after magic + 4 u32 fields; bump its out_dim
        let off = 8 + 16 + 1;
        bytes[off] += 1;
        match read_checkpoint(&bytes).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "payload"),
            e => panic!("unexpected {e}"),
        }
        let mut extra = write_checkpoint(&net()).unwrap();
        extra.extend_from_slice(&[0; 8]);
        assert!(matches!(read_checkpoint(&extra), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_kind() {
        let mut bytes = write_checkpoint(&net()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Format { field, .. }) if field == "magic"));
        let mut bytes = write_checkpoint(&net()).unwrap();
        bytes[8 + 16] = 7;
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Format { field, .. }) if field == "layer[0].kind"));
    }
}
