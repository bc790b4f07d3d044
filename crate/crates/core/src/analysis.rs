//! Measurements of translation variance and of stitching quality.
//!
//! "Error" throughout means disagreement with [`full_tile_forward`], which
//! stands in for ground truth: with untrained weights the only meaningful
//! reference is what the network would have produced in one pass.

use std::fmt::Write as _;
use std::time::Duration;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::NetworkGraph;
use crate::raster::{BorderPolicy, Raster, Window};
use crate::stitcher::{argmax_labels, full_tile_forward, stitch, stitch_with, StitchOptions};
use crate::tiler::{plan_with, PlanOptions, StitchStrategy, TilePlan};

fn same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if (a.width(), a.height(), a.channels()) != (b.width(), b.height(), b.channels()) {
        return Err(Error::shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

fn labels_of(r: &Raster) -> Result<&[u8]> {
    r.as_u8().ok_or_else(|| Error::shape("label rasters must be U8"))
}

/// Intersection over union of one class; 1 when neither raster has it.
pub fn iou(pred: &Raster, truth: &Raster, class_id: u8) -> Result<f64> {
    same_shape(pred, truth)?;
    let (p, t) = (labels_of(pred)?, labels_of(truth)?);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in p.iter().zip(t) {
        let (a, b) = (a == class_id, b == class_id);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean of [`iou`] over classes `0..classes`.
pub fn mean_iou(pred: &Raster, truth: &Raster, classes: usize) -> Result<f64> {
    let mut sum = 0.0;
    for c in 0..classes {
        sum += iou(pred, truth, c as u8)?;
    }
    Ok(sum / classes.max(1) as f64)
}

/// Pearson correlation of shifted-window class scores against the unshifted
/// window. Row index is the vertical shift, column index the horizontal one.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub max_shift: usize,
    pub region: Window,
    values: Vec<f64>,
    exact: Vec<bool>,
}

impl CorrelationMatrix {
    /// Correlation at shift `(di, dj)`. When either vector has zero variance
    /// the value is 1 for an exact match and 0 otherwise.
    pub fn get(&self, di: usize, dj: usize) -> f64 {
        self.values[di * self.max_shift + dj]
    }

    /// Scores at this shift are bit-identical to the reference.
    pub fn is_exact(&self, di: usize, dj: usize) -> bool {
        self.exact[di * self.max_shift + dj]
    }

    pub fn exact_shifts(&self) -> Vec<(usize, usize)> {
        let n = self.max_shift;
        (0..n * n).filter(|&i| self.exact[i]).map(|i| (i / n, i % n)).collect()
    }

    /// `di,dj,pearson,exact` rows; the reference is the (0,0) shift.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("di,dj,pearson,exact\n");
        for di in 0..self.max_shift {
            for dj in 0..self.max_shift {
                let _ = writeln!(s, "{di},{dj},{:.9},{}", self.get(di, dj), self.is_exact(di, dj) as u8);
            }
        }
        s
    }

    /// Heatmap with -1 mapped to 0 and 1 to 255.
    pub fn to_heatmap(&self) -> Raster {
        let px = self
            .values
            .iter()
            .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        Raster::new_u8(self.max_shift, self.max_shift, 1, px).expect("max_shift is positive")
    }
}

fn pearson(a: &[f32], b: &[f32]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Smallest exact input size whose output is at least `need` pixels.
fn input_for_output(net: &NetworkGraph, need: usize) -> Result<usize> {
    let geom = net.geometry()?;
    let mut n = need.max(1);
    for _ in 0..4096 {
        let n_exact = geom
            .next_exact_size(n)
            .ok_or_else(|| Error::geometry(format!("no exact input size near {n}")))?;
        if geom.output_size(n_exact).is_ok_and(|o| o >= need) {
            return Ok(n_exact);
        }
        n = n_exact + 1;
    }
    Err(Error::geometry(format!("no input size gives a {need}-pixel output")))
}

/// Each shift moves the input window up/left by `(di, dj)`, so the fixed
/// region sits `(di, dj)` pixels further into the output patch.
pub fn correlation_matrix(
    net: &NetworkGraph,
    tile: &Raster,
    region: Window,
    max_shift: usize,
) -> Result<CorrelationMatrix> {
    if max_shift == 0 {
        return Err(Error::geometry("max_shift must be at least 1"));
    }
    let geom = net.geometry()?;
    geom.check_tileable()?;
    let m = geom.margin_in() as i64;
    let nw = input_for_output(net, region.w + max_shift - 1)?;
    let nh = input_for_output(net, region.h + max_shift - 1)?;

    let scores = |di: usize, dj: usize| -> Result<Vec<f32>> {
        let win = Window::new(region.x0 - m - dj as i64, region.y0 - m - di as i64, nw, nh);
        if !win.is_inside(tile.width(), tile.height()) {
            return Err(Error::geometry(format!(
                "shift ({di}, {dj}) needs input window {win:?} outside the {}x{} tile",
                tile.width(),
                tile.height()
            )));
        }
        let out = net.forward(&tile.read_window(win, BorderPolicy::Error)?)?;
        let crop = out.read_window(
            Window::new(dj as i64, di as i64, region.w, region.h),
            BorderPolicy::Error,
        )?;
        Ok(crop.into_f32().expect("forward output is F32"))
    };

    let shifts: Vec<(usize, usize)> = (0..max_shift)
        .flat_map(|di| (0..max_shift).map(move |dj| (di, dj)))
        .collect();
    let vectors: Vec<Vec<f32>> = shifts
        .par_iter()
        .map(|&(di, dj)| scores(di, dj))
        .collect::<Result<_>>()?;
    let reference = &vectors[0];
    let exact: Vec<bool> = vectors.iter().map(|v| bits_equal(reference, v)).collect();
    let values = vectors
        .iter()
        .zip(&exact)
        .map(|(v, &ex)| pearson(reference, v).unwrap_or(if ex { 1.0 } else { 0.0 }))
        .collect();
    Ok(CorrelationMatrix {
        max_shift,
        region,
        values,
        exact,
    })
}

/// Disagreement rate binned by distance to the nearest border of the
/// (unclipped) output patch that produced each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeErrorProfile {
    pub counts: Vec<usize>,
    pub errors: Vec<usize>,
}

impl EdgeErrorProfile {
    /// `None` for distances no pixel had.
    pub fn rate(&self, d: usize) -> Option<f64> {
        let n = *self.counts.get(d)?;
        (n > 0).then(|| self.errors[d] as f64 / n as f64)
    }

    pub fn total_errors(&self) -> usize {
        self.errors.iter().sum()
    }

    /// Distances with at least one disagreeing pixel.
    pub fn nonzero_bins(&self) -> Vec<usize> {
        (0..self.errors.len()).filter(|&d| self.errors[d] > 0).collect()
    }

    /// `distance,count,errors,rate`; rate is empty for unpopulated bins.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("distance,count,errors,rate\n");
        for d in 0..self.counts.len() {
            let rate = self.rate(d).map(|r| format!("{r:.9}")).unwrap_or_default();
            let _ = writeln!(s, "{d},{},{},{rate}", self.counts[d], self.errors[d]);
        }
        s
    }
}

/// Profile of `labels` against `reference` for the pixels written by `plan`.
/// A pixel written by several entries takes its largest border distance.
pub fn edge_profile_of(labels: &Raster, reference: &Raster, plan: &TilePlan) -> Result<EdgeErrorProfile> {
    same_shape(labels, reference)?;
    let (a, b) = (labels_of(labels)?, labels_of(reference)?);
    let w = plan.tile_w;
    let mut dist: Vec<Option<usize>> = vec![None; w * plan.tile_h];
    for e in &plan.entries {
        let full = e.patch_output();
        for y in e.output.y0..e.output.y1() {
            let dy = (y - full.y0).min(full.y1() - 1 - y);
            for x in e.output.x0..e.output.x1() {
                let d = dy.min(x - full.x0).min(full.x1() - 1 - x) as usize;
                let slot = &mut dist[y as usize * w + x as usize];
                *slot = Some(slot.map_or(d, |s| s.max(d)));
            }
        }
    }
    let bins = dist.iter().flatten().max().map_or(0, |&d| d + 1);
    let mut counts = vec![0; bins];
    let mut errors = vec![0; bins];
    for (i, d) in dist.iter().enumerate() {
        if let Some(d) = *d {
            counts[d] += 1;
            errors[d] += (a[i] != b[i]) as usize;
        }
    }
    Ok(EdgeErrorProfile { counts, errors })
}

pub fn edge_error_profile(net: &NetworkGraph, tile: &Raster, plan: &TilePlan) -> Result<EdgeErrorProfile> {
    let stitched = stitch(tile, net, plan)?;
    let oracle = argmax_labels(&full_tile_forward(net, tile)?)?;
    edge_profile_of(&stitched.labels, &oracle, plan)
}

/// Bitwise disagreements between the output for `image` shifted by
/// `(ki, kj)` (rows, columns) and the correspondingly shifted output.
///
/// Both inputs are the largest exact crops of `image`, one starting at the
/// origin and one at the shift. When the shift is not a multiple of the
/// output stride the shifted output is compared at both neighbouring output
/// offsets and the smaller count is returned, so a positive result means the
/// output is not a translate of the original at all. Only outputs clear of
/// zero padding are compared.
pub fn equivariance_check(net: &NetworkGraph, image: &Raster, shift: (usize, usize)) -> Result<usize> {
    let geom = net.geometry()?;
    let (ki, kj) = shift;
    let largest_exact = |avail: Option<usize>| -> Result<usize> {
        let avail = avail
            .filter(|&a| a > 0)
            .ok_or_else(|| Error::geometry("shift leaves no input"))?;
        (1..=avail)
            .rev()
            .find(|&n| geom.is_exact(n) && geom.output_size(n).is_ok())
            .ok_or_else(|| Error::geometry(format!("no exact input size fits in {avail} pixels")))
    };
    let nw = largest_exact(image.width().checked_sub(kj))?;
    let nh = largest_exact(image.height().checked_sub(ki))?;
    let a = net.forward(&image.read_window(Window::new(0, 0, nw, nh), BorderPolicy::Error)?)?;
    let b = net.forward(&image.read_window(Window::new(kj as i64, ki as i64, nw, nh), BorderPolicy::Error)?)?;
    let (cx, cy) = (geom.clean_interval(nw)?, geom.clean_interval(nh)?);

    let s = geom.output_stride();
    let candidates = |k: usize| -> Vec<usize> {
        if k % s == 0 {
            vec![k / s]
        } else {
            vec![k / s, k / s + 1]
        }
    };
    let (av, bv) = (a.as_f32().unwrap(), b.as_f32().unwrap());
    let (ow, oh) = (a.width(), a.height());
    let mut best = usize::MAX;
    for &oy in &candidates(ki) {
        for &ox in &candidates(kj) {
            // b[y][x] should equal a[y + oy][x + ox]
            let (mut diff, mut compared) = (0, 0);
            for c in 0..a.channels() {
                for y in cy.lo.max(0) as usize..(cy.hi as usize).min(oh.saturating_sub(oy)) {
                    if !cy.contains(y + oy) {
                        continue;
                    }
                    for x in cx.lo.max(0) as usize..(cx.hi as usize).min(ow.saturating_sub(ox)) {
                        if !cx.contains(x + ox) {
                            continue;
                        }
                        let pa = av[(c * oh + y + oy) * ow + x + ox];
                        let pb = bv[(c * oh + y) * ow + x];
                        diff += (pa.to_bits() != pb.to_bits()) as usize;
                        compared += 1;
                    }
                }
            }
            if compared > 0 {
                best = best.min(diff);
            }
        }
    }
    if best == usize::MAX {
        return Err(Error::geometry(format!(
            "shift {shift:?} leaves no overlapping clean outputs"
        )));
    }
    Ok(best)
}

/// Exhaustive search over `width x 2` inputs (both rows equal) with pixel
/// values in `0..levels`, returning the first whose output is not a
/// translate under a horizontal shift of `shift`.
pub fn variance_witness(net: &NetworkGraph, width: usize, levels: u32, shift: usize) -> Result<Option<Raster>> {
    if net.input_channels() != 1 {
        return Err(Error::shape("witness search needs a single-channel network"));
    }
    let total = (levels as u64).checked_pow(width as u32).unwrap_or(u64::MAX);
    for code in 0..total {
        let mut c = code;
        let row: Vec<f32> = (0..width)
            .map(|_| {
                let v = (c % levels as u64) as f32;
                c /= levels as u64;
                v
            })
            .collect();
        let image = Raster::new_f32(width, 2, 1, [row.clone(), row].concat())?;
        if equivariance_check(net, &image, (0, shift))? > 0 {
            return Ok(Some(image));
        }
    }
    Ok(None)
}

/// Mask (U8, 1 = changed) over the output of `patch` alone, marking pixels
/// whose scores differ from the same pixels computed with real surrounding
/// context from `tile`.
pub fn context_sensitivity(net: &NetworkGraph, tile: &Raster, patch: Window) -> Result<Raster> {
    let geom = net.geometry()?;
    geom.check_tileable()?;
    let p = geom.delta_tot() as i64;
    let alone = net.forward(&tile.read_window(patch, BorderPolicy::Error)?)?;
    let (ow, oh) = (alone.width(), alone.height());

    // smallest period-multiple context whose clean outputs cover the patch output
    let context_for = |size: usize| -> Result<i64> {
        let mut e = p;
        loop {
            let n = size + 2 * e as usize;
            if geom.is_exact(n) {
                let iv = geom.clean_interval(n)?;
                if iv.lo <= e && e + (geom.output_size(size)? as i64) <= iv.hi {
                    return Ok(e);
                }
            }
            e += p;
            if e as usize > 4 * (size + geom.receptive_field()) {
                return Err(Error::geometry("no amount of context gives clean outputs"));
            }
        }
    };
    let (ex, ey) = (context_for(patch.w)?, context_for(patch.h)?);
    let ctx = Window::new(
        patch.x0 - ex,
        patch.y0 - ey,
        patch.w + 2 * ex as usize,
        patch.h + 2 * ey as usize,
    );
    if !ctx.is_inside(tile.width(), tile.height()) {
        return Err(Error::geometry(format!(
            "patch needs context window {ctx:?}, which leaves the {}x{} tile",
            tile.width(),
            tile.height()
        )));
    }
    let full = net.forward(&tile.read_window(ctx, BorderPolicy::Error)?)?;
    let full = full.read_window(Window::new(ex, ey, ow, oh), BorderPolicy::Error)?;
    let (a, b) = (alone.as_f32().unwrap(), full.as_f32().unwrap());
    let plane = ow * oh;
    let mask = (0..plane)
        .map(|i| (0..alone.channels()).any(|c| a[c * plane + i].to_bits() != b[c * plane + i].to_bits()) as u8)
        .collect();
    Raster::new_u8(ow, oh, 1, mask)
}

/// Smallest `c` such that no marked pixel is `c` or more pixels from the border.
pub fn margin_from_mask(mask: &Raster) -> Result<usize> {
    let m = labels_of(mask)?;
    let (w, h) = (mask.width(), mask.height());
    let mut margin = 0;
    for y in 0..h {
        for x in 0..w {
            if m[y * w + x] != 0 {
                let d = x.min(w - 1 - x).min(y).min(h - 1 - y);
                margin = margin.max(d + 1);
            }
        }
    }
    Ok(margin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// Grid shift added at this step.
    pub shift: (usize, usize),
    /// Mean IoU against the oracle labels after averaging all shifts so far.
    pub iou: f64,
}

/// Concat plan whose grid is moved back by `shift` pixels per axis: the
/// remainder modulo the period sets the grid phase, whole periods move the
/// grid lines. Shifts that are not multiples of the period give misaligned
/// plans.
pub fn shifted_plan(
    geom: &crate::net::NetGeometry,
    tile_w: usize,
    tile_h: usize,
    patch: usize,
    shift: (usize, usize),
) -> Result<TilePlan> {
    let p = geom.delta_tot();
    let phase = |s: usize| if s % p == 0 { 0 } else { (p - s % p) as i64 };
    let opts = PlanOptions {
        origin: (phase(shift.0), phase(shift.1)),
        shift: (shift.0 / p * p, shift.1 / p * p),
        ..Default::default()
    };
    plan_with(tile_w, tile_h, geom, patch, StitchStrategy::Concat, &opts)
}

/// Concat-stitch the tile once per grid shift and report oracle IoU of the
/// running average of class scores. Scores are summed in `f64`, so averaging
/// identical predictions reproduces them exactly.
pub fn averaging_sweep(
    net: &NetworkGraph,
    tile: &Raster,
    patch: usize,
    shifts: &[(usize, usize)],
) -> Result<Vec<SweepPoint>> {
    let geom = net.geometry()?;
    let oracle = argmax_labels(&full_tile_forward(net, tile)?)?;
    let classes = net.output_channels();
    let stitched: Vec<Raster> = shifts
        .par_iter()
        .map(|&shift| {
            let p = shifted_plan(&geom, tile.width(), tile.height(), patch, shift)?;
            Ok(stitch(tile, net, &p)?.prob)
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0f64; classes * tile.width() * tile.height()];
    let mut out = Vec::with_capacity(shifts.len());
    for (k, (prob, &shift)) in stitched.iter().zip(shifts).enumerate() {
        for (s, &v) in sum.iter_mut().zip(prob.as_f32().unwrap()) {
            *s += v as f64;
        }
        let n = (k + 1) as f64;
        let mean: Vec<f32> = sum.iter().map(|&s| (s / n) as f32).collect();
        let labels = argmax_labels(&Raster::new_f32(tile.width(), tile.height(), classes, mean)?)?;
        out.push(SweepPoint {
            shift,
            iou: mean_iou(&labels, &oracle, classes)?,
        });
    }
    Ok(out)
}

/// `n` shifts `(step*a, step*b)` in row-major order over a square of side
/// `ceil(sqrt(n))`, starting with `(0, 0)`. With `step` equal to the period
/// every shift keeps the grid aligned; with `step` 1 most do not.
pub fn grid_shifts(step: usize, n: usize) -> Vec<(usize, usize)> {
    let side = (1..).find(|s| s * s >= n).unwrap_or(1);
    (0..n).map(|i| (step * (i % side), step * (i / side))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRecord {
    pub patch: usize,
    pub entries: usize,
    /// Medians over the runs, in milliseconds.
    pub total_ms: f64,
    pub forward_ms: f64,
    pub handling_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Concat-stitch the tile at each patch size, `runs` times. Runs are
/// interleaved across sizes so slow drift in machine load hits every size.
pub fn bench_patch_sizes(
    net: &NetworkGraph,
    tile: &Raster,
    sizes: &[usize],
    runs: usize,
    workers: usize,
) -> Result<Vec<BenchRecord>> {
    let geom = net.geometry()?;
    let plans: Vec<TilePlan> = sizes
        .iter()
        .map(|&s| {
            plan_with(
                tile.width(),
                tile.height(),
                &geom,
                s,
                StitchStrategy::Concat,
                &PlanOptions::default(),
            )
        })
        .collect::<Result<_>>()?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mut samples = vec![(Vec::new(), Vec::new(), Vec::new()); sizes.len()];
    for _ in 0..runs.max(1) {
        for (p, s) in plans.iter().zip(&mut samples) {
            let t = stitch_with(tile, net, p, &StitchOptions { workers })?.timing;
            s.0.push(ms(t.total));
            s.1.push(ms(t.forward));
            s.2.push(ms(t.handling));
        }
    }
    Ok(sizes
        .iter()
        .zip(plans)
        .zip(samples)
        .map(|((&patch, p), (t, f, h))| BenchRecord {
            patch,
            entries: p.entries.len(),
            total_ms: median(t),
            forward_ms: median(f),
            handling_ms: median(h),
        })
        .collect())
}

/// `patch,entries,total_ms,forward_ms,handling_ms`.
pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from("patch,entries,total_ms,forward_ms,handling_ms\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{:.3},{:.3},{:.3}",
            r.patch, r.entries, r.total_ms, r.forward_ms, r.handling_ms
        );
    }
    s
}
