//! Raster buffers and the pixel operations the feature extractors build on.
//!
//! All operations use edge replication at borders and round-half-up when a
//! real value is brought back to 8 bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted side length.
pub const MAX_SIDE: usize = 1 << 16;

/// Row-major interleaved 8-bit raster with `C` channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Image<const C: usize> {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub type RgbImage = Image<3>;
pub type GrayImage = Image<1>;

impl<const C: usize> std::fmt::Debug for Image<C> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("channels", &C)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::param(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::param(format!(
            "image side exceeds {MAX_SIDE}: {width}x{height}"
        )));
    }
    Ok(())
}

impl<const C: usize> Image<C> {
    pub const CHANNELS: usize = C;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * C {
            return Err(Error::param(format!(
                "expected {} samples for {width}x{height}x{C}, got {}",
                width * height * C,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: [u8; C]) -> Result<Self> {
        check_dims(width, height)?;
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * C)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; C],
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; C] {
        let i = (y * self.width + x) * C;
        let mut px = [0u8; C];
        px.copy_from_slice(&self.data[i..i + C]);
        px
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, px: [u8; C]) {
        let i = (y * self.width + x) * C;
        self.data[i..i + C].copy_from_slice(&px);
    }

    /// Sample at signed coordinates with edge replication.
    #[inline]
    pub fn sample_clamped(&self, x: isize, y: isize, c: usize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[(y * self.width + x) * C + c]
    }
}

impl RgbImage {
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(&self.data, self.width, self.height, image::ExtendedColorType::Rgb8)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.into_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }
}

impl GrayImage {
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        encode_png(&self.data, self.width, self.height, image::ExtendedColorType::L8)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Replicates the single channel into RGB.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }
}

fn encode_png(
    data: &[u8],
    width: usize,
    height: usize,
    color: image::ExtendedColorType,
) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        data,
        width as u32,
        height as u32,
        color,
    )?;
    Ok(out)
}

/// Partition of a raster into `cols × rows` non-overlapping blocks.
///
/// When a side is not divisible, the last `side % count` blocks along it are
/// one pixel wider, so block extents differ by at most one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGrid {
    pub cols: usize,
    pub rows: usize,
}

impl BlockGrid {
    pub fn new(cols: usize, rows: usize) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(Error::param(format!("grid must be at least 1x1, got {cols}x{rows}")));
        }
        if cols > MAX_SIDE || rows > MAX_SIDE {
            return Err(Error::param(format!("grid side exceeds {MAX_SIDE}")));
        }
        Ok(Self { cols, rows })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn cell_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.cols <= width && self.rows <= height
    }

    /// Pixel range `[start, end)` covered by block `index` out of `count`
    /// along a side of `len` pixels.
    pub fn span(len: usize, count: usize, index: usize) -> (usize, usize) {
        let base = len / count;
        let wide_from = count - len % count;
        let start = index * base + index.saturating_sub(wide_from);
        let extent = base + usize::from(index >= wide_from);
        (start, start + extent)
    }

    /// Block column/row containing pixel coordinate `p`.
    pub fn block_of(len: usize, count: usize, p: usize) -> usize {
        let base = len / count;
        let wide_from = count - len % count;
        let narrow_len = wide_from * base;
        if p < narrow_len {
            p / base
        } else {
            wide_from + (p - narrow_len) / (base + 1)
        }
    }
}

/// Integer round-half-up of `num / den` for non-negative operands.
#[inline]
pub fn div_round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

/// Rounds a non-negative real half-up and clamps to `[0, 255]`.
#[inline]
pub fn round_to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// BT.601 luma, rounded half-up.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .as_raw()
        .chunks_exact(3)
        .map(|p| {
            let weighted = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Allowed median window radii (window sides 3, 5, 7).
pub const MEDIAN_RADII: [usize; 3] = [1, 2, 3];

/// Per-channel median over a `(2r+1)²` window with edge replication.
pub fn median_filter<const C: usize>(img: &Image<C>, radius: usize) -> Result<Image<C>> {
    if !MEDIAN_RADII.contains(&radius) {
        return Err(Error::param(format!(
            "median radius must be one of {MEDIAN_RADII:?}, got {radius}"
        )));
    }
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let mut out = img.clone();
    let mut hist = [0u32; 256];
    for c in 0..C {
        for y in 0..img.height {
            // Sliding histogram along the row.
            hist.fill(0);
            for dy in -r..=r {
                for dx in -r..=r {
                    hist[img.sample_clamped(dx, y as isize + dy, c) as usize] += 1;
                }
            }
            for x in 0..img.width {
                if x > 0 {
                    let left = x as isize - 1 - r;
                    let right = x as isize + r;
                    for dy in -r..=r {
                        let yy = y as isize + dy;
                        hist[img.sample_clamped(left, yy, c) as usize] -= 1;
                        hist[img.sample_clamped(right, yy, c) as usize] += 1;
                    }
                }
                let mut seen = 0usize;
                let median = hist
                    .iter()
                    .position(|&n| {
                        seen += n as usize;
                        seen > mid
                    })
                    .expect("window is never empty");
                out.data[(y * img.width + x) * C + c] = median as u8;
            }
        }
    }
    Ok(out)
}

/// Block-mean downsampling to `grid`, rounded half-up per channel.
pub fn block_mean_downsample<const C: usize>(img: &Image<C>, grid: BlockGrid) -> Result<Image<C>> {
    if !grid.fits(img.width, img.height) {
        return Err(Error::param(format!(
            "grid {}x{} larger than image {}x{}",
            grid.cols, grid.rows, img.width, img.height
        )));
    }
    let mut sums = vec![0u64; grid.cell_count() * C];
    let col_of: Vec<usize> = (0..img.width)
        .map(|x| BlockGrid::block_of(img.width, grid.cols, x))
        .collect();
    for y in 0..img.height {
        let row = BlockGrid::block_of(img.height, grid.rows, y);
        for (x, &col) in col_of.iter().enumerate() {
            let src = (y * img.width + x) * C;
            let dst = (row * grid.cols + col) * C;
            for c in 0..C {
                sums[dst + c] += img.data[src + c] as u64;
            }
        }
    }
    let mut data = Vec::with_capacity(sums.len());
    for row in 0..grid.rows {
        let (y0, y1) = BlockGrid::span(img.height, grid.rows, row);
        for col in 0..grid.cols {
            let (x0, x1) = BlockGrid::span(img.width, grid.cols, col);
            let area = ((y1 - y0) * (x1 - x0)) as u64;
            let base = (row * grid.cols + col) * C;
            data.extend(sums[base..base + C].iter().map(|&s| div_round_half_up(s, area) as u8));
        }
    }
    Image::new(grid.cols, grid.rows, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    Nearest,
    Bilinear,
}

/// Enlarges `img` to `target_w × target_h`.
///
/// Nearest maps output `x` to source `floor(x · w / target_w)`. Bilinear
/// samples at pixel centers with edge clamping.
pub fn upsample<const C: usize>(
    img: &Image<C>,
    target_w: usize,
    target_h: usize,
    mode: Resample,
) -> Result<Image<C>> {
    if target_w < img.width || target_h < img.height {
        return Err(Error::param(format!(
            "upsample cannot shrink {}x{} to {target_w}x{target_h}",
            img.width, img.height
        )));
    }
    check_dims(target_w, target_h)?;
    match mode {
        Resample::Nearest => {
            let xs: Vec<usize> = (0..target_w).map(|x| x * img.width / target_w).collect();
            let mut data = Vec::with_capacity(target_w * target_h * C);
            for y in 0..target_h {
                let sy = y * img.height / target_h;
                for &sx in &xs {
                    let i = (sy * img.width + sx) * C;
                    data.extend_from_slice(&img.data[i..i + C]);
                }
            }
            Image::new(target_w, target_h, data)
        }
        Resample::Bilinear => {
            let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
                let s = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, s - lo as f64)
            };
            let xs: Vec<_> = (0..target_w).map(|x| coord(x, img.width, target_w)).collect();
            let mut data = Vec::with_capacity(target_w * target_h * C);
            for y in 0..target_h {
                let (y0, y1, fy) = coord(y, img.height, target_h);
                for &(x0, x1, fx) in &xs {
                    for c in 0..C {
                        let at = |x: usize, y: usize| img.data[(y * img.width + x) * C + c] as f64;
                        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                        data.push(round_to_u8(top * (1.0 - fy) + bottom * fy));
                    }
                }
            }
            Image::new(target_w, target_h, data)
        }
    }
}
