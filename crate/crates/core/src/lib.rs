//! Tiled inference for segmentation of large rasters.
//!
//! The crate plans patch grids over a tile ([`tiler`]), runs a small
//! convolutional network on each patch ([`net`]), stitches the label patches
//! back together ([`stitcher`]) and measures how far a network is from being
//! translation equivariant ([`analysis`]).

pub mod analysis;
pub mod buffers;
pub mod error;
pub mod net;
pub mod raster;
pub mod rng;
pub mod stitcher;
pub mod synth;
pub mod tiler;

pub use error::{Error, Result};
pub use net::{NetGeometry, NetworkGraph};
pub use raster::{diff_count, BorderPolicy, DType, Raster, Window};

pub use stitcher::{full_tile_forward, stitch, stitch_with, StitchOptions, StitchOutput};
pub use tiler::{plan, plan_with, PlanOptions, StitchStrategy, TilePlan};
