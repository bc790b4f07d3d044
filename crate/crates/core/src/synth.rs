//! Deterministic synthetic tiles: uniform noise with constant rectangles on
//! top, so networks see some spatial structure.
//!
//! Draw order (all from one SplitMix64 stream seeded with `seed`): every
//! noise value in planar order via the 24-bit unit mapping, then per
//! rectangle `x0`, `y0`, `w`, `h` and one value per channel.

use crate::raster::Raster;
use crate::rng::SeededStream;

/// F32 tile of `w x h x channels`. Panics if a dimension is zero.
pub fn synth_tile(seed: u64, w: usize, h: usize, channels: usize, rects: usize) -> Raster {
    assert!(
        w > 0 && h > 0 && channels > 0,
        "synthetic tile dimensions must be positive"
    );
    let mut rng = SeededStream::new(seed);
    let plane = w * h;
    let mut data: Vec<f32> = (0..plane * channels).map(|_| rng.next_unit_f32()).collect();
    for _ in 0..rects {
        let x0 = rng.next_below(w as u64) as usize;
        let y0 = rng.next_below(h as u64) as usize;
        let rw = 1 + rng.next_below((w / 3).max(1) as u64) as usize;
        let rh = 1 + rng.next_below((h / 3).max(1) as u64) as usize;
        for c in 0..channels {
            let v = rng.next_unit_f32();
            for y in y0..(y0 + rh).min(h) {
                data[c * plane + y * w + x0..c * plane + y * w + (x0 + rw).min(w)].fill(v);
            }
        }
    }
    Raster::new_f32(w, h, channels, data).expect("dimensions checked above")
}
