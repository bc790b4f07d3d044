//! Patch-grid planning over a tile.
//!
//! Along each axis the planner places patch input windows at offsets
//! `origin + k * step` where `step` is a multiple of the network's
//! equivariance period `P`, so every patch sees the same pooling phase as a
//! single full-tile pass would. The last patch is pulled back towards the
//! tile edge and snapped to the period; whatever it would write twice is
//! trimmed (concat/clip) or averaged. Patches near the tile border overhang
//! it and are read with reflect padding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::NetGeometry;
use crate::raster::{Raster, Window};

/// Largest patch input side accepted by default (memory cap of the device
/// running the forward pass).
pub const DEFAULT_MAX_PATCH: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageWeight {
    Uniform,
    /// `1 + distance to the nearest output-patch border`.
    EdgeTaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StitchStrategy {
    Concat,
    /// Drop `c` output pixels on every side of each patch.
    Clip(usize),
    /// Overlapping patches every `stride` input pixels, averaged.
    Average {
        stride: usize,
        weight: AverageWeight,
    },
}

impl StitchStrategy {
    pub fn is_single_writer(&self) -> bool {
        !matches!(self, StitchStrategy::Average { .. })
    }
}

impl fmt::Display for StitchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StitchStrategy::Concat => write!(f, "concat"),
            StitchStrategy::Clip(c) => write!(f, "clip:{c}"),
            StitchStrategy::Average {
                stride,
                weight: AverageWeight::Uniform,
            } => write!(f, "avg:{stride}"),
            StitchStrategy::Average {
                stride,
                weight: AverageWeight::EdgeTaper,
            } => write!(f, "avg:{stride}:taper"),
        }
    }
}

impl FromStr for StitchStrategy {
    type Err = Error;

    /// `concat`, `clip:<c>`, `avg:<stride>` or `avg:<stride>:taper`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::plan(format!("bad number '{v}' in strategy '{s}'")))
        };
        match parts.as_slice() {
            ["concat"] => Ok(StitchStrategy::Concat),
            ["clip", c] => Ok(StitchStrategy::Clip(num(c)?)),
            ["avg", stride] => Ok(StitchStrategy::Average {
                stride: num(stride)?,
                weight: AverageWeight::Uniform,
            }),
            ["avg", stride, "taper"] => Ok(StitchStrategy::Average {
                stride: num(stride)?,
                weight: AverageWeight::EdgeTaper,
            }),
            _ => Err(Error::plan(format!(
                "unknown strategy '{s}' (expected concat, clip:<c>, avg:<stride>[:taper])"
            ))),
        }
    }
}

/// Output pixels removed from each side of a patch's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClipSides {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    /// Patch input window in tile coordinates; may overhang the tile.
    pub input: Window,
    /// Pixels this entry writes, in tile coordinates (after clipping).
    pub output: Window,
    pub clip: ClipSides,
}

impl PlanEntry {
    /// The full, unclipped output patch in tile coordinates.
    pub fn patch_output(&self) -> Window {
        Window::new(
            self.output.x0 - self.clip.left as i64,
            self.output.y0 - self.clip.top as i64,
            self.output.w + self.clip.left + self.clip.right,
            self.output.h + self.clip.top + self.clip.bottom,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub tile_w: usize,
    pub tile_h: usize,
    pub patch_input: usize,
    pub patch_output: usize,
    pub margin_in: usize,
    /// Equivariance period the grid is aligned to.
    pub alignment: usize,
    /// Grid phase: every input window offset is congruent to this modulo `alignment`.
    pub origin: (i64, i64),
    pub strategy: StitchStrategy,
    pub entries: Vec<PlanEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub max_patch: usize,
    pub origin: (i64, i64),
    /// Pull the first patch back by this many pixels per axis, moving every
    /// interior grid line with it. Must be a multiple of the period and
    /// smaller than the grid step.
    pub shift: (usize, usize),
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            max_patch: DEFAULT_MAX_PATCH,
            origin: (0, 0),
            shift: (0, 0),
        }
    }
}

/// One axis of the grid: input offset and the written range `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AxisSlot {
    input: i64,
    lo: i64,
    hi: i64,
}

struct AxisParams {
    tile: usize,
    patch: usize,
    out: usize,
    margin: usize,
    clip: usize,
    step: usize,
    period: usize,
    origin: i64,
    shift: usize,
    trim: bool,
}

fn plan_axis(a: &AxisParams) -> Result<Vec<AxisSlot>> {
    let p = a.period as i64;
    let tile = a.tile as i64;
    let lead = (a.margin + a.clip) as i64;
    let keep = (a.out - 2 * a.clip) as i64;

    let first = -lead - (-lead - a.origin).rem_euclid(p) - a.shift as i64;
    let t = tile - lead - keep;
    let last = (t + (a.origin - t).rem_euclid(p)).max(first);

    let mut offsets = Vec::new();
    let mut x = first;
    while x < last {
        offsets.push(x);
        x += a.step as i64;
    }
    offsets.push(last);

    let mut slots = Vec::with_capacity(offsets.len());
    let mut written = 0i64;
    for x in offsets {
        let lo = if a.trim {
            (x + lead).max(written)
        } else {
            (x + lead).max(0)
        };
        let hi = (x + lead + keep).min(tile);
        if lo > written {
            return Err(Error::plan(format!("gap in coverage at {written}..{lo}")));
        }
        if hi <= lo {
            continue;
        }
        written = written.max(hi);
        let overhang = (-x).max(x + a.patch as i64 - tile);
        if overhang >= tile {
            return Err(Error::plan(format!(
                "patch at {x} overhangs the {tile}-pixel tile by {overhang}; reflect padding cannot supply it"
            )));
        }
        slots.push(AxisSlot { input: x, lo, hi });
    }
    if written < tile {
        return Err(Error::plan(format!("coverage stops at {written} of {tile}")));
    }
    Ok(slots)
}

/// Plan a grid aligned to the origin with the default patch cap.
pub fn plan(
    tile_w: usize,
    tile_h: usize,
    geom: &NetGeometry,
    patch_input: usize,
    strategy: StitchStrategy,
) -> Result<TilePlan> {
    plan_with(tile_w, tile_h, geom, patch_input, strategy, &PlanOptions::default())
}

pub fn plan_with(
    tile_w: usize,
    tile_h: usize,
    geom: &NetGeometry,
    patch_input: usize,
    strategy: StitchStrategy,
    opts: &PlanOptions,
) -> Result<TilePlan> {
    geom.check_tileable().map_err(|e| Error::plan(e.to_string()))?;
    if tile_w == 0 || tile_h == 0 {
        return Err(Error::plan("tile must be at least 1x1"));
    }
    if patch_input > opts.max_patch {
        return Err(Error::plan(format!(
            "patch size {patch_input} exceeds the configured cap {}",
            opts.max_patch
        )));
    }
    let period = geom.delta_tot();
    if period > tile_w.min(tile_h) {
        return Err(Error::plan(format!(
            "equivariance period {period} exceeds the {tile_w}x{tile_h} tile"
        )));
    }
    let out = geom.output_size(patch_input).map_err(|e| Error::plan(e.to_string()))?;
    let inexact = geom.inexact_reasons(patch_input)?;
    if !inexact.is_empty() {
        let hint = geom
            .next_exact_size(patch_input)
            .map(|n| format!("; next exact size is {n}"))
            .unwrap_or_default();
        return Err(Error::plan(format!(
            "patch size {patch_input} is not exact for this network ({}){hint}",
            inexact.join(", ")
        )));
    }
    let margin = geom.margin_in();

    let (clip, step, trim) = match strategy {
        StitchStrategy::Concat | StitchStrategy::Clip(_) => {
            let c = match strategy {
                StitchStrategy::Clip(c) => c,
                _ => 0,
            };
            if 2 * c >= out {
                return Err(Error::plan(format!(
                    "clip {c} leaves nothing of a {out}-pixel output patch"
                )));
            }
            let keep = out - 2 * c;
            let step = keep / period * period;
            if step == 0 {
                return Err(Error::plan(format!(
                    "kept output extent {keep} is smaller than the period {period}"
                )));
            }
            (c, step, true)
        }
        StitchStrategy::Average { stride, .. } => {
            if stride == 0 || stride > out {
                return Err(Error::plan(format!(
                    "average stride {stride} must be in 1..={out} for full coverage"
                )));
            }
            let step = stride / period * period;
            if step == 0 {
                return Err(Error::plan(format!(
                    "average stride {stride} is smaller than the period {period}"
                )));
            }
            (0, step, false)
        }
    };

    for s in [opts.shift.0, opts.shift.1] {
        if s % period != 0 || s >= step {
            return Err(Error::plan(format!(
                "grid shift {s} must be a multiple of {period} below the step {step}"
            )));
        }
    }
    let axis = |tile: usize, origin: i64, shift: usize| {
        plan_axis(&AxisParams {
            tile,
            patch: patch_input,
            out,
            margin,
            clip,
            step,
            period,
            origin,
            shift,
            trim,
        })
    };
    let cols = axis(tile_w, opts.origin.0, opts.shift.0)?;
    let rows = axis(tile_h, opts.origin.1, opts.shift.1)?;

    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for r in &rows {
        for c in &cols {
            let patch_x = c.input + margin as i64;
            let patch_y = r.input + margin as i64;
            entries.push(PlanEntry {
                input: Window::new(c.input, r.input, patch_input, patch_input),
                output: Window::new(c.lo, r.lo, (c.hi - c.lo) as usize, (r.hi - r.lo) as usize),
                clip: ClipSides {
                    left: (c.lo - patch_x) as usize,
                    top: (r.lo - patch_y) as usize,
                    right: (patch_x + out as i64 - c.hi) as usize,
                    bottom: (patch_y + out as i64 - r.hi) as usize,
                },
            });
        }
    }

    Ok(TilePlan {
        tile_w,
        tile_h,
        patch_input,
        patch_output: out,
        margin_in: margin,
        alignment: period,
        origin: opts.origin,
        strategy,
        entries,
    })
}

/// Per-pixel count of entries writing each tile pixel (saturating at 255).
pub fn coverage_map(plan: &TilePlan) -> Raster {
    let mut counts = vec![0u8; plan.tile_w * plan.tile_h];
    for e in &plan.entries {
        let o = e.output;
        for y in o.y0..o.y1() {
            let row = &mut counts[y as usize * plan.tile_w..(y as usize + 1) * plan.tile_w];
            for c in &mut row[o.x0 as usize..o.x1() as usize] {
                *c = c.saturating_add(1);
            }
        }
    }
    Raster::new_u8(plan.tile_w, plan.tile_h, 1, counts).expect("tile dimensions are positive")
}

impl TilePlan {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# tilestitch plan v1\n");
        s += &format!("tile {} {}\n", self.tile_w, self.tile_h);
        s += &format!("patch {} {}\n", self.patch_input, self.patch_output);
        s += &format!("margin {}\n", self.margin_in);
        s += &format!("period {}\n", self.alignment);
        s += &format!("origin {} {}\n", self.origin.0, self.origin.1);
        s += &format!("strategy {}\n", self.strategy);
        for e in &self.entries {
            let (i, o, c) = (e.input, e.output, e.clip);
            s += &format!(
                "entry in {} {} {} {} out {} {} {} {} clip {} {} {} {}\n",
                i.x0, i.y0, i.w, i.h, o.x0, o.y0, o.w, o.h, c.left, c.top, c.right, c.bottom
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TilePlan> {
        let bad = |line: usize, msg: &str| Error::format(format!("plan line {line}: {msg}"));
        let mut tile = None;
        let mut patch = None;
        let mut margin = None;
        let mut period = None;
        let mut origin = (0, 0);
        let mut strategy = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let nums = |range: std::ops::Range<usize>| -> Result<Vec<i64>> {
                range
                    .map(|k| {
                        tok.get(k)
                            .and_then(|t| t.parse::<i64>().ok())
                            .ok_or_else(|| bad(ln, "expected an integer"))
                    })
                    .collect()
            };
            let unsigned = |v: i64| usize::try_from(v).map_err(|_| bad(ln, "negative size"));
            match tok[0] {
                "tile" => {
                    let v = nums(1..3)?;
                    tile = Some((unsigned(v[0])?, unsigned(v[1])?));
                }
                "patch" => {
                    let v = nums(1..3)?;
                    patch = Some((unsigned(v[0])?, unsigned(v[1])?));
                }
                "margin" => margin = Some(unsigned(nums(1..2)?[0])?),
                "period" => period = Some(unsigned(nums(1..2)?[0])?),
                "origin" => {
                    let v = nums(1..3)?;
                    origin = (v[0], v[1]);
                }
                "strategy" => {
                    strategy = Some(
                        tok.get(1)
                            .ok_or_else(|| bad(ln, "missing strategy"))?
                            .parse::<StitchStrategy>()
                            .map_err(|e| bad(ln, &e.to_string()))?,
                    )
                }
                "entry" => {
                    if tok.len() != 16 || tok[1] != "in" || tok[6] != "out" || tok[11] != "clip" {
                        return Err(bad(ln, "expected 'entry in x y w h out x y w h clip l t r b'"));
                    }
                    let a = nums(2..6)?;
                    let b = nums(7..11)?;
                    let c = nums(12..16)?;
                    entries.push(PlanEntry {
                        input: Window::new(a[0], a[1], unsigned(a[2])?, unsigned(a[3])?),
                        output: Window::new(b[0], b[1], unsigned(b[2])?, unsigned(b[3])?),
                        clip: ClipSides {
                            left: unsigned(c[0])?,
                            top: unsigned(c[1])?,
                            right: unsigned(c[2])?,
                            bottom: unsigned(c[3])?,
                        },
                    });
                }
                other => return Err(bad(ln, &format!("unknown record '{other}'"))),
            }
        }
        let (tile_w, tile_h) = tile.ok_or_else(|| Error::format("plan has no tile line"))?;
        let (patch_input, patch_output) = patch.ok_or_else(|| Error::format("plan has no patch line"))?;
        let plan = TilePlan {
            tile_w,
            tile_h,
            patch_input,
            patch_output,
            margin_in: margin.ok_or_else(|| Error::format("plan has no margin line"))?,
            alignment: period.ok_or_else(|| Error::format("plan has no period line"))?,
            origin,
            strategy: strategy.ok_or_else(|| Error::format("plan has no strategy line"))?,
            entries,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Structural checks for plans that did not come out of the planner.
    pub fn validate(&self) -> Result<()> {
        if self.tile_w == 0 || self.tile_h == 0 || self.entries.is_empty() {
            return Err(Error::plan("plan needs a non-empty tile and at least one entry"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let full = e.patch_output();
            if e.input.w != self.patch_input || e.input.h != self.patch_input {
                return Err(Error::plan(format!("entry {i}: input window is not the patch size")));
            }
            if full.w != self.patch_output || full.h != self.patch_output {
                return Err(Error::plan(format!(
                    "entry {i}: clip does not add up to the output patch"
                )));
            }
            if full.x0 != e.input.x0 + self.margin_in as i64 || full.y0 != e.input.y0 + self.margin_in as i64 {
                return Err(Error::plan(format!("entry {i}: output is not offset by the margin")));
            }
            if !e.output.is_inside(self.tile_w, self.tile_h) || e.output.w == 0 || e.output.h == 0 {
                return Err(Error::plan(format!("entry {i}: output window leaves the tile")));
            }
        }
        Ok(())
    }

    /// Every entry's input offset has the plan's phase modulo the period.
    pub fn is_aligned(&self) -> bool {
        let p = self.alignment.max(1) as i64;
        self.entries
            .iter()
            .all(|e| (e.input.x0 - self.origin.0).rem_euclid(p) == 0 && (e.input.y0 - self.origin.1).rem_euclid(p) == 0)
    }
}
