//! Planar raster container, windowed reads and the on-disk formats.
//!
//! A [`Raster`] stores `channels` planes of `height` rows of `width` values.
//! Tiles, patches, feature maps, score maps and label maps all use it.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RAS1_MAGIC: &[u8; 4] = b"RAS1";
/// Magic (4) + width, height, channels (3 x u32) + dtype code (1).
pub const RAS1_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::U8),
            1 => Ok(DType::F32),
            other => Err(Error::format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl RasterData {
    fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: RasterData,
}

/// A rectangular region in the coordinates of some parent raster.
/// The origin may be negative and the window may extend past the far edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn new(x0: i64, y0: i64, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn x1(&self) -> i64 {
        self.x0 + self.w as i64
    }

    pub fn y1(&self) -> i64 {
        self.y0 + self.h as i64
    }

    pub fn is_inside(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1() <= width as i64 && self.y1() <= height as i64
    }

    /// Intersection with another window, `None` when empty.
    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x1 > x0 && y1 > y0).then(|| Window::new(x0, y0, (x1 - x0) as usize, (y1 - y0) as usize))
    }
}

/// How reads outside the raster are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderPolicy {
    Error,
    ZeroFill,
    /// Mirror without repeating the edge pixel: -1 reads 1, `n` reads `n - 2`.
    #[default]
    Reflect,
    Clamp,
}

/// Map a possibly out-of-range coordinate onto `[0, n)`; `None` means zero fill.
fn resolve(coord: i64, n: usize, policy: BorderPolicy) -> Option<usize> {
    let n_i = n as i64;
    if (0..n_i).contains(&coord) {
        return Some(coord as usize);
    }
    match policy {
        BorderPolicy::ZeroFill | BorderPolicy::Error => None,
        BorderPolicy::Clamp => Some(coord.clamp(0, n_i - 1) as usize),
        BorderPolicy::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let c = if coord < 0 { -coord } else { 2 * (n_i - 1) - coord };
            debug_assert!((0..n_i).contains(&c));
            Some(c as usize)
        }
    }
}

impl Raster {
    pub fn new_u8(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        Self::check_dims(width, height, channels, data.len())?;
        Ok(Self {
            width,
            height,
            channels,
            data: RasterData::U8(data),
        })
    }

    pub fn new_f32(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_dims(width, height, channels, data.len())?;
        Ok(Self {
            width,
            height,
            channels,
            data: RasterData::F32(data),
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize, dtype: DType) -> Self {
        let n = width * height * channels;
        let data = match dtype {
            DType::U8 => RasterData::U8(vec![0; n]),
            DType::F32 => RasterData::F32(vec![0.0; n]),
        };
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    fn check_dims(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "raster dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::shape("raster dimensions overflow"))?;
        if expected != len {
            return Err(Error::shape(format!(
                "{width}x{height}x{channels} raster needs {expected} values, got {len}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            RasterData::U8(_) => DType::U8,
            RasterData::F32(_) => DType::F32,
        }
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            RasterData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Some(v),
            RasterData::U8(_) => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut [f32]> {
        match &mut self.data {
            RasterData::F32(v) => Some(v),
            RasterData::U8(_) => None,
        }
    }

    pub fn as_u8_mut(&mut self) -> Option<&mut [u8]> {
        match &mut self.data {
            RasterData::U8(v) => Some(v),
            RasterData::F32(_) => None,
        }
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            RasterData::F32(v) => Some(v),
            RasterData::U8(_) => None,
        }
    }

    /// Single F32 plane of channel `c`.
    pub fn plane_f32(&self, c: usize) -> Option<&[f32]> {
        let n = self.plane_len();
        self.as_f32().map(|v| &v[c * n..(c + 1) * n])
    }

    /// Value at `(c, y, x)` widened to `f32`.
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        let i = (c * self.height + y) * self.width + x;
        match &self.data {
            RasterData::U8(v) => v[i] as f32,
            RasterData::F32(v) => v[i],
        }
    }

    /// Copy `win` out of this raster, resolving out-of-range pixels per `policy`.
    pub fn read_window(&self, win: Window, policy: BorderPolicy) -> Result<Raster> {
        if win.w == 0 || win.h == 0 {
            return Err(Error::shape("window must be at least 1x1"));
        }
        if !win.is_inside(self.width, self.height) {
            match policy {
                BorderPolicy::Error => {
                    return Err(Error::OutOfBounds {
                        x0: win.x0,
                        y0: win.y0,
                        w: win.w,
                        h: win.h,
                        width: self.width,
                        height: self.height,
                    })
                }
                BorderPolicy::Reflect => {
                    let overhang_x = (-win.x0).max(win.x1() - self.width as i64).max(0) as usize;
                    let overhang_y = (-win.y0).max(win.y1() - self.height as i64).max(0) as usize;
                    if overhang_x > 0 && overhang_x >= self.width {
                        return Err(Error::UnsupportedReflect {
                            overhang: overhang_x,
                            dim: self.width,
                        });
                    }
                    if overhang_y > 0 && overhang_y >= self.height {
                        return Err(Error::UnsupportedReflect {
                            overhang: overhang_y,
                            dim: self.height,
                        });
                    }
                }
                BorderPolicy::ZeroFill | BorderPolicy::Clamp => {}
            }
        }

        let xs: Vec<Option<usize>> = (0..win.w)
            .map(|i| resolve(win.x0 + i as i64, self.width, policy))
            .collect();
        let ys: Vec<Option<usize>> = (0..win.h)
            .map(|j| resolve(win.y0 + j as i64, self.height, policy))
            .collect();

        fn gather<T: Copy + Default>(
            src: &[T],
            width: usize,
            height: usize,
            channels: usize,
            xs: &[Option<usize>],
            ys: &[Option<usize>],
            mut out: Vec<T>,
        ) -> Vec<T> {
            for c in 0..channels {
                let plane = &src[c * width * height..(c + 1) * width * height];
                for y in ys {
                    match y {
                        Some(y) => {
                            let row = &plane[y * width..(y + 1) * width];
                            out.extend(xs.iter().map(|x| x.map_or(T::default(), |x| row[x])));
                        }
                        None => out.extend(std::iter::repeat(T::default()).take(xs.len())),
                    }
                }
            }
            out
        }

        let data = match &self.data {
            RasterData::U8(v) => {
                let out = Vec::with_capacity(win.w * win.h * self.channels);
                RasterData::U8(gather(v, self.width, self.height, self.channels, &xs, &ys, out))
            }
            RasterData::F32(v) => {
                let out = crate::buffers::take_buf(win.w * win.h * self.channels);
                RasterData::F32(gather(v, self.width, self.height, self.channels, &xs, &ys, out))
            }
        };
        Ok(Raster {
            width: win.w,
            height: win.h,
            channels: self.channels,
            data,
        })
    }

    /// Keep only channels `[start, start + count)`.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Raster> {
        if count == 0 || start + count > self.channels {
            return Err(Error::shape(format!(
                "channel range {start}..{} outside {} channels",
                start + count,
                self.channels
            )));
        }
        let n = self.plane_len();
        let data = match &self.data {
            RasterData::U8(v) => RasterData::U8(v[start * n..(start + count) * n].to_vec()),
            RasterData::F32(v) => RasterData::F32(v[start * n..(start + count) * n].to_vec()),
        };
        Ok(Raster {
            width: self.width,
            height: self.height,
            channels: count,
            data,
        })
    }

    pub fn write_ras1(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        self.encode_ras1(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ras1(path: impl AsRef<Path>) -> Result<Raster> {
        let bytes = fs::read(path)?;
        Self::decode_ras1(&bytes)
    }

    pub fn encode_ras1<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(RAS1_MAGIC)?;
        for dim in [self.width, self.height, self.channels] {
            let dim = u32::try_from(dim).map_err(|_| Error::format("dimension exceeds u32"))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        out.write_all(&[self.dtype().code()])?;
        match &self.data {
            RasterData::U8(v) => out.write_all(v)?,
            RasterData::F32(v) => {
                let mut buf = Vec::with_capacity(v.len() * 4);
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                out.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn to_ras1_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(RAS1_HEADER_LEN + self.data.len() * self.dtype().size_of());
        self.encode_ras1(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn decode_ras1(bytes: &[u8]) -> Result<Raster> {
        if bytes.len() < RAS1_HEADER_LEN {
            return Err(Error::format("truncated RAS1 header"));
        }
        if &bytes[..4] != RAS1_MAGIC {
            return Err(Error::format(format!("bad RAS1 magic {:?}", &bytes[..4])));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, channels) = (dim(0), dim(1), dim(2));
        let dtype = DType::from_code(bytes[16])?;
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::format("RAS1 dimensions must be positive"));
        }
        let count = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::format("RAS1 dimensions overflow"))?;
        let payload = &bytes[RAS1_HEADER_LEN..];
        let expected = count * dtype.size_of();
        if payload.len() != expected {
            return Err(Error::format(format!(
                "RAS1 payload has {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let data = match dtype {
            DType::U8 => RasterData::U8(payload.to_vec()),
            DType::F32 => {
                let mut v = Vec::with_capacity(count);
                for chunk in payload.chunks_exact(4) {
                    let x = f32::from_le_bytes(chunk.try_into().unwrap());
                    if x.is_nan() {
                        return Err(Error::format("RAS1 payload contains NaN"));
                    }
                    v.push(x);
                }
                RasterData::F32(v)
            }
        };
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Binary 8-bit PGM (`P5`), single-channel U8 rasters only.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = match (&self.data, self.channels) {
            (RasterData::U8(v), 1) => v,
            _ => return Err(Error::format("PGM export needs a single-channel U8 raster")),
        };
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(data)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Raster> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode_pgm(&bytes)
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format("truncated PGM header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("PGM header is not ASCII"))?);
        }
        if tokens[0] != "P5" {
            return Err(Error::format(format!("unsupported PGM magic {}", tokens[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(format!("bad PGM field {s}")))
        };
        let (width, height, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::format("only 8-bit PGM is supported"));
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let payload = bytes.get(pos..).unwrap_or_default();
        if payload.len() < width * height {
            return Err(Error::format("truncated PGM payload"));
        }
        Raster::new_u8(width, height, 1, payload[..width * height].to_vec()).map_err(|e| Error::format(e.to_string()))
    }
}

/// Number of positions whose values differ; F32 compares bit patterns.
pub fn diff_count(a: &Raster, b: &Raster) -> Result<usize> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    match (&a.data, &b.data) {
        (RasterData::U8(x), RasterData::U8(y)) => Ok(x.iter().zip(y).filter(|(p, q)| p != q).count()),
        (RasterData::F32(x), RasterData::F32(y)) => {
            Ok(x.iter().zip(y).filter(|(p, q)| p.to_bits() != q.to_bits()).count())
        }
        _ => Err(Error::shape("dtype mismatch")),
    }
}
