//! Forward pass.
//!
//! Convolution sums are accumulated as `bias, then taps in (cin, ky, kx)
//! order`, skipping taps that fall in the zero padding. Every output pixel
//! therefore sees the same sequence of floating-point additions no matter
//! where its patch was cut from, which makes stitched and full-tile results
//! comparable bit for bit.

use super::{ConvParams, ConvWeights, LayerKind, NetworkGraph};
use crate::buffers::{give_buf, take_buf};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Planar feature map `[c][h][w]`.
struct FeatureMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    fn plane(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }
}

impl NetworkGraph {
    pub fn forward(&self, input: &Raster) -> Result<Raster> {
        self.require_weights()?;
        if input.channels() != self.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.input_channels(),
                input.channels()
            )));
        }
        let data = input
            .as_f32()
            .ok_or_else(|| Error::shape("forward needs an F32 raster"))?;
        let geom = self.geometry()?;
        let widths = geom.node_sizes(input.width())?;
        let heights = geom.node_sizes(input.height())?;

        // drop intermediate maps once their last consumer has run
        let mut remaining = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &p in &node.parents {
                remaining[p] += 1;
            }
        }
        remaining[self.output] += 1;
        // a convolution whose only consumer is a ReLU rectifies rows while they are hot
        let fused: Vec<bool> = (0..self.nodes.len())
            .map(|i| {
                matches!(self.nodes[i].kind, LayerKind::Conv(_))
                    && remaining[i] == 1
                    && self
                        .nodes
                        .iter()
                        .any(|n| matches!(n.kind, LayerKind::Relu) && n.parents == [i])
            })
            .collect();

        let mut maps: Vec<Option<FeatureMap>> = (0..self.nodes.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            let (w, h) = (widths[i], heights[i]);
            // a sole consumer may take its parent's map over instead of copying it
            let sole = node.parents.len() == 1 && remaining[node.parents[0]] == 1;
            let parent = |k: usize| maps[node.parents[k]].as_ref().expect("parent computed");
            let out = match node.kind {
                LayerKind::Input { channels } => {
                    let mut buf = take_buf(data.len());
                    buf.extend_from_slice(data);
                    FeatureMap {
                        c: channels,
                        h,
                        w,
                        data: buf,
                    }
                }
                LayerKind::Conv(params) => conv(parent(0), &params, self.weights[i].as_ref().unwrap(), w, h, fused[i]),
                LayerKind::Relu if sole => {
                    let mut p = maps[node.parents[0]].take().expect("parent computed");
                    if !fused[node.parents[0]] {
                        p.data.iter_mut().for_each(relu_in_place);
                    }
                    p
                }
                LayerKind::Relu => {
                    let p = parent(0);
                    let mut buf = take_buf(p.data.len());
                    buf.extend(p.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
                    FeatureMap {
                        c: p.c,
                        h,
                        w,
                        data: buf,
                    }
                }
                LayerKind::MaxPool { k, s } => max_pool(parent(0), k, s, w, h),
                LayerKind::Upsample { f } => upsample(parent(0), f, w, h),
                LayerKind::CropConcat => crop_concat(parent(0), parent(1)),
                LayerKind::Output if sole => maps[node.parents[0]].take().expect("parent computed"),
                LayerKind::Output => {
                    let p = parent(0);
                    let mut buf = take_buf(p.data.len());
                    buf.extend_from_slice(&p.data);
                    FeatureMap {
                        c: p.c,
                        h,
                        w,
                        data: buf,
                    }
                }
            };
            debug_assert_eq!((out.w, out.h), (w, h), "node '{}'", node.name);
            for &p in &node.parents {
                remaining[p] -= 1;
                if remaining[p] == 0 {
                    if let Some(m) = maps[p].take() {
                        give_buf(m.data);
                    }
                }
            }
            maps[i] = Some(out);
        }
        let out = maps[self.output].take().expect("output computed");
        Raster::new_f32(out.w, out.h, out.c, out.data)
    }
}

// written negated so NaN also becomes 0
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn relu_in_place(v: &mut f32) {
    if !(*v > 0.0) {
        *v = 0.0;
    }
}

fn conv(input: &FeatureMap, c: &ConvParams, wts: &ConvWeights, ow: usize, oh: usize, rectify: bool) -> FeatureMap {
    let (iw, ih) = (input.w as i64, input.h as i64);
    let (k, s, d, p) = (c.k, c.s as i64, c.d as i64, c.p as i64);
    let cin = input.c;
    let mut out = take_buf(c.cout * oh * ow);
    out.resize(c.cout * oh * ow, 0.0);

    // horizontal tap ranges do not depend on the row
    let x_ranges: Vec<(usize, usize, i64)> = (0..k)
        .map(|v| {
            let off = d * v as i64 - p;
            let lo = (-off).max(0);
            let lo = (lo + s - 1) / s;
            let hi = if iw - 1 - off < 0 { 0 } else { (iw - 1 - off) / s + 1 };
            let hi = hi.min(ow as i64).max(lo);
            (lo as usize, hi as usize, off)
        })
        .collect();

    // Row-major over output channels so the few input rows a row needs stay
    // in cache, and each row is built in column chunks so every tap pass hits
    // a chunk that is already in L1. Neither changes any pixel's tap order.
    const CHUNK: usize = 256;
    for oy in 0..oh {
        for co in 0..c.cout {
            let bias = wts.bias.as_ref().map_or(0.0, |b| b[co]);
            let row = &mut out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
            for x0 in (0..ow).step_by(CHUNK) {
                let x1 = (x0 + CHUNK).min(ow);
                let chunk = &mut row[x0..x1];
                chunk.fill(bias);
                for ci in 0..cin {
                    let in_plane = input.plane(ci);
                    for u in 0..k {
                        let iy = s * oy as i64 + d * u as i64 - p;
                        if iy < 0 || iy >= ih {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * input.w..(iy as usize + 1) * input.w];
                        let base = ((co * cin + ci) * k + u) * k;
                        let wrow = &wts.weights[base..base + k];
                        for (&wv, &(lo, hi, off)) in wrow.iter().zip(&x_ranges) {
                            let (lo, hi) = (lo.max(x0), hi.min(x1));
                            if lo >= hi {
                                continue;
                            }
                            let dst = &mut chunk[lo - x0..hi - x0];
                            if s == 1 {
                                let start = (lo as i64 + off) as usize;
                                for (o, &x) in dst.iter_mut().zip(&in_row[start..start + (hi - lo)]) {
                                    *o += wv * x;
                                }
                            } else {
                                for (o, ox) in dst.iter_mut().zip(lo..hi) {
                                    *o += wv * in_row[(s * ox as i64 + off) as usize];
                                }
                            }
                        }
                    }
                }
                if rectify {
                    chunk.iter_mut().for_each(relu_in_place);
                }
            }
        }
    }
    FeatureMap {
        c: c.cout,
        h: oh,
        w: ow,
        data: out,
    }
}

fn max_pool(input: &FeatureMap, k: usize, s: usize, ow: usize, oh: usize) -> FeatureMap {
    let mut out = take_buf(input.c * oh * ow);
    for c in 0..input.c {
        let plane = input.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = plane[(s * oy) * input.w + s * ox];
                for u in 0..k {
                    let row = &plane[(s * oy + u) * input.w..];
                    for v in 0..k {
                        let x = row[s * ox + v];
                        if x > m {
                            m = x;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    FeatureMap {
        c: input.c,
        h: oh,
        w: ow,
        data: out,
    }
}

fn upsample(input: &FeatureMap, f: usize, ow: usize, oh: usize) -> FeatureMap {
    let mut out = take_buf(input.c * oh * ow);
    for c in 0..input.c {
        let plane = input.plane(c);
        for iy in 0..oh.div_ceil(f) {
            let row = &plane[iy * input.w..(iy + 1) * input.w];
            let start = out.len();
            for &v in row {
                out.extend(std::iter::repeat(v).take(f));
            }
            out.truncate(start + ow);
            // the remaining copies of this row are identical
            for _ in 1..f.min(oh - iy * f) {
                out.extend_from_within(start..start + ow);
            }
        }
    }
    FeatureMap {
        c: input.c,
        h: oh,
        w: ow,
        data: out,
    }
}

/// Centre-crop `a` to the size of `b`, then stack `a`'s channels before `b`'s.
fn crop_concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let cx = (a.w - b.w) / 2;
    let cy = (a.h - b.h) / 2;
    let mut out = take_buf((a.c + b.c) * b.h * b.w);
    for c in 0..a.c {
        let plane = a.plane(c);
        for y in 0..b.h {
            let start = (y + cy) * a.w + cx;
            out.extend_from_slice(&plane[start..start + b.w]);
        }
    }
    out.extend_from_slice(&b.data);
    FeatureMap {
        c: a.c + b.c,
        h: b.h,
        w: b.w,
        data: out,
    }
}
