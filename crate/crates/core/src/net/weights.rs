//! WTS1 weight files.
//!
//! Little-endian: magic `WTS1`, u32 record count, then per record a u16
//! name length, the name bytes, a u8 kind (0 = weights, 1 = bias), a u32
//! rank, `rank` u32 dims and the F32 payload in row-major order.

use std::fs;
use std::path::Path;

use super::{ConvWeights, LayerKind, NetworkGraph};
use crate::error::{Error, Result};

pub const WTS1_MAGIC: &[u8; 4] = b"WTS1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub is_bias: bool,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl WeightRecord {
    pub fn encoded_len(&self) -> usize {
        2 + self.name.len() + 1 + 4 + 4 * self.dims.len() + 4 * self.values.len()
    }
}

fn werr(msg: impl Into<String>) -> Error {
    Error::Weights(msg.into())
}

impl NetworkGraph {
    /// Tensors in file order: for each convolution, weights then bias.
    pub fn weight_records(&self) -> Result<Vec<WeightRecord>> {
        self.require_weights()?;
        let mut out = Vec::new();
        for (node, w) in self.nodes.iter().zip(&self.weights) {
            let (LayerKind::Conv(c), Some(w)) = (node.kind, w) else {
                continue;
            };
            out.push(WeightRecord {
                name: node.name.clone(),
                is_bias: false,
                dims: [c.cout, w.cin, c.k, c.k].iter().map(|&d| d as u32).collect(),
                values: w.weights.clone(),
            });
            if let Some(b) = &w.bias {
                out.push(WeightRecord {
                    name: node.name.clone(),
                    is_bias: true,
                    dims: vec![c.cout as u32],
                    values: b.clone(),
                });
            }
        }
        Ok(out)
    }

    pub fn to_wts1_bytes(&self) -> Result<Vec<u8>> {
        let records = self.weight_records()?;
        let mut buf = Vec::with_capacity(8 + records.iter().map(WeightRecord::encoded_len).sum::<usize>());
        buf.extend_from_slice(WTS1_MAGIC);
        buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for r in &records {
            let len = u16::try_from(r.name.len()).map_err(|_| werr(format!("layer name '{}' too long", r.name)))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(r.name.as_bytes());
            buf.push(r.is_bias as u8);
            buf.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for d in &r.dims {
                buf.extend_from_slice(&d.to_le_bytes());
            }
            for v in &r.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_wts1_bytes()?)?;
        Ok(())
    }

    pub fn load_weights(&self, path: impl AsRef<Path>) -> Result<NetworkGraph> {
        let bytes = fs::read(path)?;
        self.with_wts1_bytes(&bytes)
    }

    /// Attach weights decoded from a WTS1 payload; names and shapes must match.
    pub fn with_wts1_bytes(&self, bytes: &[u8]) -> Result<NetworkGraph> {
        self.with_weight_records(&decode_records(bytes)?)
    }

    /// Attach weights given in [`weight_records`](Self::weight_records) order.
    pub fn with_weight_records(&self, records: &[WeightRecord]) -> Result<NetworkGraph> {
        let mut weights: Vec<Option<ConvWeights>> = vec![None; self.nodes.len()];
        let mut expected = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            let LayerKind::Conv(c) = node.kind else { continue };
            let cin = self.nodes[node.parents[0]].channels;
            let take = |is_bias: bool, dims: Vec<u32>, idx: usize| -> Result<Vec<f32>> {
                let r = records
                    .get(idx)
                    .ok_or_else(|| werr(format!("missing record for layer '{}'", node.name)))?;
                if r.name != node.name || r.is_bias != is_bias {
                    return Err(werr(format!(
                        "record {idx} is '{}' ({}), expected '{}' ({})",
                        r.name,
                        if r.is_bias { "bias" } else { "weights" },
                        node.name,
                        if is_bias { "bias" } else { "weights" },
                    )));
                }
                if r.dims != dims {
                    return Err(werr(format!(
                        "layer '{}' has shape {:?}, expected {dims:?}",
                        node.name, r.dims
                    )));
                }
                if r.values.len() != dims.iter().map(|&d| d as usize).product::<usize>() {
                    return Err(werr(format!(
                        "layer '{}' has {} values for shape {dims:?}",
                        node.name,
                        r.values.len()
                    )));
                }
                Ok(r.values.clone())
            };
            let w = take(
                false,
                [c.cout, cin, c.k, c.k].iter().map(|&d| d as u32).collect(),
                expected,
            )?;
            expected += 1;
            let bias = if c.bias {
                let b = take(true, vec![c.cout as u32], expected)?;
                expected += 1;
                Some(b)
            } else {
                None
            };
            weights[i] = Some(ConvWeights { cin, weights: w, bias });
        }
        if records.len() != expected {
            return Err(werr(format!(
                "file has {} records, network needs {expected}",
                records.len()
            )));
        }
        Ok(NetworkGraph {
            weights,
            ..self.clone()
        })
    }
}

fn decode_records(bytes: &[u8]) -> Result<Vec<WeightRecord>> {
    struct Cursor<'a> {
        b: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let s = self
                .b
                .get(self.pos..self.pos + n)
                .ok_or_else(|| Error::format("truncated WTS1 file"))?;
            self.pos += n;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }

    let mut cur = Cursor { b: bytes, pos: 0 };
    if cur.take(4)? != WTS1_MAGIC {
        return Err(Error::format("bad WTS1 magic"));
    }
    let count = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::format("WTS1 layer name is not UTF-8"))?
            .to_string();
        let is_bias = match cur.take(1)?[0] {
            0 => false,
            1 => true,
            k => return Err(Error::format(format!("unknown WTS1 record kind {k}"))),
        };
        let rank = cur.u32()? as usize;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().map(|&d| d as usize).product::<usize>();
        let payload = cur.take(n.checked_mul(4).ok_or_else(|| Error::format("WTS1 tensor too large"))?)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::format("WTS1 payload contains NaN"));
        }
        records.push(WeightRecord {
            name,
            is_bias,
            dims,
            values,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("trailing bytes after WTS1 records"));
    }
    Ok(records)
}
