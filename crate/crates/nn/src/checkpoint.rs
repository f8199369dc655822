//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SGNN1"                      magic, 5 bytes
//! u32                          layer count
//! per layer:
//!   u8                         type tag
//!   u32 * n                    layer dims (see below)
//!   f64 * ...                  weight values, then bias values
//! u64                          rng seed the network was initialised from
//! ```
//!
//! Dims per tag: dense(1) = in, out; conv2d(2) / conv_transpose2d(3) =
//! kernel, stride, padding, in_channels, out_channels; relu(4), sigmoid(5),
//! flatten(6) = none; reshape(7) = rank followed by the dims.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::layer::{Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer};
use crate::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SGNN1";

const TAG_DENSE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_CONV_T: u8 = 3;
const TAG_RELU: u8 = 4;
const TAG_SIGMOID: u8 = 5;
const TAG_FLATTEN: u8 = 6;
const TAG_RESHAPE: u8 = 7;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("dimension {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_values(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_geometry(buf: &mut Vec<u8>, g: &ConvGeometry) -> Result<()> {
    for v in [g.kernel, g.stride, g.padding, g.in_channels, g.out_channels] {
        put_u32(buf, v)?;
    }
    Ok(())
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, net.layers().len())?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                buf.push(TAG_DENSE);
                put_u32(&mut buf, d.inputs())?;
                put_u32(&mut buf, d.outputs())?;
                put_values(&mut buf, &d.weight);
                put_values(&mut buf, &d.bias);
            }
            Layer::Conv2d(c) => {
                buf.push(TAG_CONV);
                put_geometry(&mut buf, &c.geometry)?;
                put_values(&mut buf, &c.weight);
                put_values(&mut buf, &c.bias);
            }
            Layer::ConvTranspose2d(c) => {
                buf.push(TAG_CONV_T);
                put_geometry(&mut buf, &c.geometry)?;
                put_values(&mut buf, &c.weight);
                put_values(&mut buf, &c.bias);
            }
            Layer::Relu => buf.push(TAG_RELU),
            Layer::Sigmoid => buf.push(TAG_SIGMOID),
            Layer::Flatten => buf.push(TAG_FLATTEN),
            Layer::Reshape(shape) => {
                buf.push(TAG_RESHAPE);
                put_u32(&mut buf, shape.len())?;
                for &d in shape {
                    put_u32(&mut buf, d)?;
                }
            }
        }
    }
    buf.extend_from_slice(&net.rng_seed().to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }

    fn geometry(&mut self) -> Result<ConvGeometry> {
        Ok(ConvGeometry {
            kernel: self.u32()?,
            stride: self.u32()?,
            padding: self.u32()?,
            in_channels: self.u32()?,
            out_channels: self.u32()?,
        })
    }
}

/// Parses a checkpoint; returns the network and the number of bytes consumed.
pub fn from_bytes(bytes: &[u8]) -> Result<(Network, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count = cur.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match cur.u8()? {
            TAG_DENSE => {
                let (inputs, outputs) = (cur.u32()?, cur.u32()?);
                Layer::Dense(Dense {
                    weight: cur.tensor(vec![outputs, inputs])?,
                    bias: cur.tensor(vec![outputs])?,
                })
            }
            tag @ (TAG_CONV | TAG_CONV_T) => {
                let g = cur.geometry()?;
                let weight = cur.tensor(vec![g.kernel, g.kernel, g.in_channels, g.out_channels])?;
                let bias = cur.tensor(vec![g.out_channels])?;
                if tag == TAG_CONV {
                    Layer::Conv2d(Conv2d { geometry: g, weight, bias })
                } else {
                    Layer::ConvTranspose2d(ConvTranspose2d { geometry: g, weight, bias })
                }
            }
            TAG_RELU => Layer::Relu,
            TAG_SIGMOID => Layer::Sigmoid,
            TAG_FLATTEN => Layer::Flatten,
            TAG_RESHAPE => {
                let rank = cur.u32()?;
                let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
                Layer::Reshape(dims)
            }
            other => return Err(NnError::Checkpoint(format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    let seed = cur.u64()?;
    Ok((Network::from_layers(layers, seed), cur.pos))
}

pub fn write<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(&to_bytes(net)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (net, used) = from_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(net)
}
