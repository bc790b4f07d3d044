//! Per-thread recycling of large `f32` buffers.
//!
//! First-touch page faults on fresh multi-megabyte allocations can cost more
//! than the arithmetic of a cheap layer, and they grow with patch area. Feature
//! maps and patch rasters are therefore handed back here once consumed and
//! reused by the next allocation of a similar size.

use std::cell::RefCell;

use crate::raster::Raster;

const POOL_BUFFERS: usize = 12;

thread_local! {
    static POOL: RefCell<Vec<Vec<f32>>> = const { RefCell::new(Vec::new()) };
}

/// Empty buffer with room for `len` values, recycled when possible.
pub(crate) fn take_buf(len: usize) -> Vec<f32> {
    POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= len)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let mut b = pool.swap_remove(i);
                b.clear();
                b
            }
            None => Vec::with_capacity(len),
        }
    })
}

pub(crate) fn give_buf(buf: Vec<f32>) {
    POOL.with(|pool| {
        let mut pool = pool.borrow_mut();
        pool.push(buf);
        if pool.len() > POOL_BUFFERS {
            let smallest = (0..pool.len()).min_by_key(|&i| pool[i].capacity()).unwrap();
            pool.swap_remove(smallest);
        }
    })
}

/// Hand a no longer needed F32 raster's storage to this thread's pool.
pub fn recycle(raster: Raster) {
    if let Some(v) = raster.into_f32() {
        give_buf(v);
    }
}
