//! Binary checkpoint format.
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes   "ASNCFLAE"
//! version    u32       1
//! seed       u64       initialization seed
//! n_layers   u32
//!   kind u8, in_channels u32, out_channels u32, kernel_h u32, kernel_w u32,
//!   stride u32, activation u8                     (repeated n_layers times)
//! n_ranges   u32       trainable mask as (start u64, len u64) ranges
//! n_params   u64
//! params     f64 x n_params, canonical order
//! ```
//!
//! Layer kinds: 0 conv2d, 1 maxpool, 2 dense, 3 maxunpool, 4 convtranspose2d.
//! Activations: 0 none, 1 relu, 2 sigmoid.

use std::io::{Read, Write};

use super::{architecture, Activation, Autoencoder, LayerKind, LayerSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASNCFLAE";
pub const CHECKPOINT_VERSION: u32 = 1;

fn kind_code(k: LayerKind) -> u8 {
    match k {
        LayerKind::Conv2d => 0,
        LayerKind::MaxPool => 1,
        LayerKind::Dense => 2,
        LayerKind::MaxUnpool => 3,
        LayerKind::ConvTranspose2d => 4,
    }
}

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
    }
}

pub fn write_checkpoint<W: Write>(model: &Autoencoder, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + model.param_count() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.seed().to_le_bytes());
    buf.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for l in model.layers() {
        buf.push(kind_code(l.kind));
        for v in [l.in_channels, l.out_channels, l.kernel.0, l.kernel.1, l.stride] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(act_code(l.activation));
    }
    let ranges = model.trainable_ranges();
    buf.extend_from_slice(&(ranges.len() as u32).to_le_bytes());
    for (s, n) in ranges {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(bad("unexpected end of file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Autoencoder> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let seed = c.u64()?;
    let expected = architecture();
    let n_layers = c.u32()? as usize;
    if n_layers != expected.len() {
        return Err(bad(format!("{n_layers} layers, expected {}", expected.len())));
    }
    for (i, want) in expected.iter().enumerate() {
        let kind = c.u8()?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = c.u32()? as usize;
        }
        let act = c.u8()?;
        let got = (kind, dims, act);
        let exp: (u8, [usize; 5], u8) = (
            kind_code(want.kind),
            [want.in_channels, want.out_channels, want.kernel.0, want.kernel.1, want.stride],
            act_code(want.activation),
        );
        if got != exp {
            return Err(bad(format!("layer {i} does not match the architecture: {:?}", describe(want))));
        }
    }
    let n_ranges = c.u32()? as usize;
    let mut ranges = Vec::with_capacity(n_ranges);
    for _ in 0..n_ranges {
        ranges.push((c.u64()? as usize, c.u64()? as usize));
    }
    let n = c.u64()? as usize;
    let raw = c.take(n.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)?;
    if c.pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Autoencoder::from_parts(seed, params, &ranges)
}

fn describe(l: &LayerSpec) -> String {
    format!("{:?} {}->{}", l.kind, l.in_channels, l.out_channels)
}
