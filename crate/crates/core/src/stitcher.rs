//! Executing a [`TilePlan`]: per-patch forward passes accumulated into
//! tile-sized score planes, then normalised and arg-maxed.
//!
//! Concat and clip plans write disjoint regions, so values are copied
//! verbatim. Average plans keep a weighted sum and a weight plane; patches
//! are always merged in entry order so the floating-point sums do not depend
//! on how many workers ran the forward passes.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::buffers::recycle;
use crate::error::{Error, Result};
use crate::net::NetworkGraph;
use crate::raster::{BorderPolicy, Raster, Window};
use crate::tiler::{AverageWeight, PlanEntry, StitchStrategy, TilePlan};

#[derive(Debug, Clone)]
pub struct StitchAccumulator {
    tile_w: usize,
    tile_h: usize,
    classes: usize,
    strategy: StitchStrategy,
    sums: Vec<f32>,
    weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    /// Per-class scores averaged over contributing patches (F32).
    pub prob: Raster,
    /// Arg-max class per pixel (U8).
    pub labels: Raster,
}

impl StitchAccumulator {
    pub fn new(tile_w: usize, tile_h: usize, classes: usize, strategy: StitchStrategy) -> Self {
        Self {
            tile_w,
            tile_h,
            classes,
            strategy,
            sums: vec![0.0; classes * tile_w * tile_h],
            weights: vec![0.0; tile_w * tile_h],
        }
    }

    pub fn strategy(&self) -> StitchStrategy {
        self.strategy
    }

    /// Add the clipped part of `patch` (the network output for `entry`).
    pub fn accumulate(&mut self, patch: &Raster, entry: &PlanEntry) -> Result<()> {
        let full = entry.patch_output();
        if patch.width() != full.w || patch.height() != full.h || patch.channels() != self.classes {
            return Err(Error::shape(format!(
                "patch is {}x{}x{}, entry expects {}x{}x{}",
                patch.width(),
                patch.height(),
                patch.channels(),
                full.w,
                full.h,
                self.classes
            )));
        }
        let out = entry.output;
        if !out.is_inside(self.tile_w, self.tile_h) {
            return Err(Error::shape("entry output window leaves the tile"));
        }
        let values = patch.as_f32().ok_or_else(|| Error::shape("patch scores must be F32"))?;
        let plane = self.tile_w * self.tile_h;
        let (cl, ct) = (entry.clip.left, entry.clip.top);

        for py in 0..out.h {
            let ty = out.y0 as usize + py;
            let sy = ct + py;
            let row_start = ty * self.tile_w + out.x0 as usize;
            match self.strategy {
                StitchStrategy::Concat | StitchStrategy::Clip(_) => {
                    for c in 0..self.classes {
                        let src = &values[(c * full.h + sy) * full.w + cl..][..out.w];
                        self.sums[c * plane + row_start..][..out.w].copy_from_slice(src);
                    }
                    for w in &mut self.weights[row_start..row_start + out.w] {
                        *w += 1.0;
                    }
                }
                StitchStrategy::Average { weight, .. } => {
                    let dy = sy.min(full.h - 1 - sy);
                    let wt = |sx: usize| match weight {
                        AverageWeight::Uniform => 1.0,
                        AverageWeight::EdgeTaper => (1 + dy.min(sx).min(full.w - 1 - sx)) as f32,
                    };
                    for c in 0..self.classes {
                        let src = &values[(c * full.h + sy) * full.w..][..full.w];
                        let dst = &mut self.sums[c * plane + row_start..][..out.w];
                        for (px, d) in dst.iter_mut().enumerate() {
                            let sx = cl + px;
                            *d += wt(sx) * src[sx];
                        }
                    }
                    for (px, w) in self.weights[row_start..row_start + out.w].iter_mut().enumerate() {
                        *w += wt(cl + px);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<Stitched> {
        let plane = self.tile_w * self.tile_h;
        if let Some(i) = self.weights.iter().position(|&w| w <= 0.0) {
            return Err(Error::Coverage(format!(
                "pixel ({}, {}) received no patch output",
                i % self.tile_w,
                i / self.tile_w
            )));
        }
        if self.strategy.is_single_writer() {
            if let Some(i) = self.weights.iter().position(|&w| w != 1.0) {
                return Err(Error::Coverage(format!(
                    "pixel ({}, {}) written {} times by a single-writer plan",
                    i % self.tile_w,
                    i / self.tile_w,
                    self.weights[i]
                )));
            }
        }
        let mut prob = self.sums;
        for c in 0..self.classes {
            for (v, &w) in prob[c * plane..(c + 1) * plane].iter_mut().zip(&self.weights) {
                *v /= w;
            }
        }
        let prob = Raster::new_f32(self.tile_w, self.tile_h, self.classes, prob)?;
        let labels = argmax_labels(&prob)?;
        Ok(Stitched { prob, labels })
    }
}

/// Arg-max over channels; ties go to the lowest class index.
pub fn argmax_labels(scores: &Raster) -> Result<Raster> {
    let v = scores.as_f32().ok_or_else(|| Error::shape("scores must be F32"))?;
    if scores.channels() > 256 {
        return Err(Error::shape("more than 256 classes do not fit a U8 label map"));
    }
    let plane = scores.plane_len();
    let labels = (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..scores.channels() {
                if v[c * plane + i] > v[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Raster::new_u8(scores.width(), scores.height(), 1, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Timing {
    pub patches: usize,
    /// Time inside network forward passes (summed over workers).
    pub forward: Duration,
    /// Everything else: window reads, accumulation, finalisation.
    pub handling: Duration,
    pub total: Duration,
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(f, "patches={}", self.patches)?;
        writeln!(f, "forward_ms={:.3}", ms(self.forward))?;
        writeln!(f, "handling_ms={:.3}", ms(self.handling))?;
        writeln!(f, "total_ms={:.3}", ms(self.total))
    }
}

#[derive(Debug, Clone)]
pub struct StitchOutput {
    pub prob: Raster,
    pub labels: Raster,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy)]
pub struct StitchOptions {
    pub workers: usize,
}

impl Default for StitchOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

pub fn stitch(tile: &Raster, net: &NetworkGraph, plan: &TilePlan) -> Result<StitchOutput> {
    stitch_with(tile, net, plan, &StitchOptions::default())
}

pub fn stitch_with(tile: &Raster, net: &NetworkGraph, plan: &TilePlan, opts: &StitchOptions) -> Result<StitchOutput> {
    let start = Instant::now();
    if tile.width() != plan.tile_w || tile.height() != plan.tile_h {
        return Err(Error::shape(format!(
            "tile is {}x{}, plan was made for {}x{}",
            tile.width(),
            tile.height(),
            plan.tile_w,
            plan.tile_h
        )));
    }
    if tile.channels() != net.input_channels() {
        return Err(Error::shape(format!(
            "tile has {} channels, network expects {}",
            tile.channels(),
            net.input_channels()
        )));
    }
    let mut acc = StitchAccumulator::new(plan.tile_w, plan.tile_h, net.output_channels(), plan.strategy);

    let run = |entry: &PlanEntry| -> Result<(Raster, Duration)> {
        let patch = tile.read_window(entry.input, BorderPolicy::Reflect)?;
        let t = Instant::now();
        let out = net.forward(&patch)?;
        let dt = t.elapsed();
        recycle(patch);
        Ok((out, dt))
    };

    let mut forward = Duration::ZERO;
    let workers = opts.workers.max(1);
    if workers == 1 {
        for entry in &plan.entries {
            let (out, dt) = run(entry)?;
            forward += dt;
            acc.accumulate(&out, entry)?;
            recycle(out);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        // at most `workers` patch outputs are alive at once
        for chunk in plan.entries.chunks(workers) {
            let outs: Vec<Result<(Raster, Duration)>> = pool.install(|| chunk.par_iter().map(run).collect());
            for (entry, res) in chunk.iter().zip(outs) {
                let (out, dt) = res?;
                forward += dt;
                acc.accumulate(&out, entry)?;
                recycle(out);
            }
        }
    }
    let Stitched { prob, labels } = acc.finalize()?;
    let total = start.elapsed();
    Ok(StitchOutput {
        prob,
        labels,
        timing: Timing {
            patches: plan.entries.len(),
            forward,
            handling: total.saturating_sub(forward),
            total,
        },
    })
}

/// Input window, along one axis, for a single pass whose output covers
/// `[0, tile)` with pixels untouched by zero padding.
fn oracle_axis(net_geom: &crate::net::NetGeometry, tile: usize) -> Result<(i64, usize)> {
    let p = net_geom.delta_tot();
    let m = net_geom.margin_in();
    let mut e = m.div_ceil(p) * p;
    while e < tile {
        if let Some(n) = net_geom.next_exact_size(tile + 2 * e) {
            let iv = net_geom.clean_interval(n)?;
            let first = (e - m) as i64;
            let last = first + tile as i64 - 1;
            let right_overhang = n.saturating_sub(e + tile);
            if first >= iv.lo && last < iv.hi && right_overhang < tile {
                return Ok((-(e as i64), n));
            }
        }
        e += p;
    }
    Err(Error::geometry(format!(
        "a {tile}-pixel tile is too small to give this network clean context by reflection"
    )))
}

/// The network applied to the whole tile in one pass.
///
/// The tile is extended by reflection far enough that every tile pixel's
/// output is both defined and clear of zero padding, with the extension a
/// multiple of the equivariance period so the result shares the pooling
/// phase of any period-aligned plan. Returns tile-sized class scores.
pub fn full_tile_forward(net: &NetworkGraph, tile: &Raster) -> Result<Raster> {
    let geom = net.geometry()?;
    geom.check_tileable()?;
    let (x0, w) = oracle_axis(&geom, tile.width())?;
    let (y0, h) = oracle_axis(&geom, tile.height())?;
    let input = tile.read_window(Window::new(x0, y0, w, h), BorderPolicy::Reflect)?;
    let out = net.forward(&input)?;
    let m = geom.margin_in() as i64;
    out.read_window(
        Window::new(-x0 - m, -y0 - m, tile.width(), tile.height()),
        BorderPolicy::Error,
    )
}
