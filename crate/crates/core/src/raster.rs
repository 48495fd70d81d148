//! Dense 8-bit images and boolean masks, plus the handful of pixel
//! operations every later stage relies on: Cr extraction, the 5×5 Gaussian,
//! rotation and backward-mapped resampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, BackwardMap, Point};

/// Standard deviation of the 5×5 smoothing kernel.
pub const GAUSSIAN_SIGMA: f64 = 1.1;

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("image must be non-empty, got {width}×{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                actual: channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(Error::Size(format!(
                "data length {} does not match {width}×{height}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: &[u8]) -> Result<Self> {
        let data = value.iter().copied().cycle().take(width * height * value.len()).collect();
        Self::new(width, height, value.len(), data)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// 256-bin intensity histogram of a single-channel image.
    pub fn histogram(&self) -> Result<[u64; 256]> {
        self.expect_channels(1)?;
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[v as usize] += 1;
        }
        Ok(hist)
    }

    pub(crate) fn expect_channels(&self, expected: usize) -> Result<()> {
        if self.channels == expected {
            Ok(())
        } else {
            Err(Error::ChannelMismatch {
                expected,
                actual: self.channels,
            })
        }
    }
}

/// Row-major boolean raster; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("mask must be non-empty, got {width}×{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Size(format!(
                "data length {} does not match {width}×{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// All-background mask. Panics on a zero dimension.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.data[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Like [`get`](Self::get) but anything outside the canvas is background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_size(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Exact half-turn: pixel `(x, y)` moves to `(w−1−x, h−1−y)`.
    pub fn rotate_180(&self) -> BinaryMask {
        let mut data = self.data.clone();
        data.reverse();
        BinaryMask {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// The `width × height` window centered on this mask's center. Pixels of
    /// the window outside this mask are background.
    pub fn crop_centered(&self, width: usize, height: usize) -> BinaryMask {
        let ox = (self.width as i64 - width as i64) / 2;
        let oy = (self.height as i64 - height as i64) / 2;
        BinaryMask::from_fn(width, height, |x, y| self.get_signed(x as i64 + ox, y as i64 + oy))
    }

    /// Renders the mask as a gray image with foreground 255.
    pub fn to_image(&self) -> Image {
        let data = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        Image::new(self.width, self.height, 1, data).expect("mask dimensions are valid")
    }

    /// Any non-zero gray level counts as foreground.
    pub fn from_image(image: &Image) -> Result<BinaryMask> {
        image.expect_channels(1)?;
        BinaryMask::new(
            image.width(),
            image.height(),
            image.data().iter().map(|&v| v > 0).collect(),
        )
    }
}

/// Cr of a single RGB triple under full-range BT.601.
pub fn cr_of(r: u8, g: u8, b: u8) -> u8 {
    let cr = 128.0 + 0.5 * r as f64 - 0.418688 * g as f64 - 0.081312 * b as f64;
    cr.round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_cr(image: &Image) -> Result<Image> {
    image.expect_channels(3)?;
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| cr_of(p[0], p[1], p[2]))
        .collect();
    Image::new(image.width(), image.height(), 1, data)
}

/// Normalized 1-D taps; the 5×5 kernel is their outer product.
pub fn gaussian_taps5() -> [f64; 5] {
    let mut taps = [0.0; 5];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *t = (-d * d / (2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

pub fn gaussian_kernel5() -> [[f64; 5]; 5] {
    let taps = gaussian_taps5();
    let mut k = [[0.0; 5]; 5];
    for (r, row) in k.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = taps[r] * taps[c];
        }
    }
    k
}

/// 5×5 Gaussian smoothing of a gray image with edge replication.
pub fn gaussian_blur5(image: &Image) -> Result<Image> {
    image.expect_channels(1)?;
    let (w, h) = (image.width(), image.height());
    if w < 5 || h < 5 {
        return Err(Error::Size(format!("image {w}×{h} is smaller than the 5×5 kernel")));
    }
    let taps = gaussian_taps5();
    let src = image.data();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut rows = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[y * w + clamp(x as i64 + k as i64 - 2, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[clamp(y as i64 + k as i64 - 2, h) * w + x])
                .sum();
            out[y * w + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::new(w, h, 1, out)
}

/// Rasters that can be resampled through a backward map: images sample
/// bilinearly, masks by nearest neighbor. Samples that fall outside the
/// source are 0 / background.
pub trait Resample: Sized {
    fn dimensions(&self) -> (usize, usize);
    fn resample(&self, width: usize, height: usize, map: &dyn BackwardMap) -> Self;
}

const EDGE_EPS: f64 = 1e-9;

impl Resample for Image {
    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn resample(&self, width: usize, height: usize, map: &dyn BackwardMap) -> Image {
        let ch = self.channels;
        let (sw, sh) = (self.width as f64, self.height as f64);
        let mut data = vec![0u8; width * height * ch];
        data.par_chunks_mut(width * ch).enumerate().for_each(|(y, row)| {
            for x in 0..width {
                let s = map.source_of(Point::new(x as f64, y as f64));
                if !(s.x >= -EDGE_EPS && s.y >= -EDGE_EPS && s.x <= sw - 1.0 + EDGE_EPS && s.y <= sh - 1.0 + EDGE_EPS) {
                    continue;
                }
                let sx = s.x.clamp(0.0, sw - 1.0);
                let sy = s.y.clamp(0.0, sh - 1.0);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for c in 0..ch {
                    let at = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * ch + c] as f64;
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    row[x * ch + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        });
        Image {
            width,
            height,
            channels: ch,
            data,
        }
    }
}

impl Resample for BinaryMask {
    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn resample(&self, width: usize, height: usize, map: &dyn BackwardMap) -> BinaryMask {
        let mut data = vec![false; width * height];
        data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let s = map.source_of(Point::new(x as f64, y as f64));
                let (sx, sy) = (s.x.round(), s.y.round());
                *out = sx.is_finite() && sy.is_finite() && self.get_signed(sx as i64, sy as i64);
            }
        });
        BinaryMask { width, height, data }
    }
}

/// Geometry of a rotation about the raster center onto an enlarged canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFrame {
    pub angle_deg: f64,
    pub src_size: (usize, usize),
    pub dst_size: (usize, usize),
    /// Source pixel coordinates to output pixel coordinates.
    pub forward: AffineTransform,
}

impl RotationFrame {
    /// Frame that turns content lying at `angle_deg` onto the +x axis, i.e.
    /// rotates by `−angle_deg`.
    pub fn new(width: usize, height: usize, angle_deg: f64) -> RotationFrame {
        if angle_deg.rem_euclid(360.0) == 0.0 {
            return RotationFrame {
                angle_deg,
                src_size: (width, height),
                dst_size: (width, height),
                forward: AffineTransform::IDENTITY,
            };
        }
        let (s, c) = angle_deg.to_radians().sin_cos();
        let (w, h) = (width as f64, height as f64);
        // Matching parity keeps both centers on the same sub-pixel grid, so a
        // round trip crops back without a half-pixel shift.
        let fit = |extent: f64, src: usize| {
            let n = (extent - 1e-9).ceil().max(1.0) as usize;
            n + (n + src) % 2
        };
        let dw = fit(w * c.abs() + h * s.abs(), width);
        let dh = fit(w * s.abs() + h * c.abs(), height);
        let src_c = Point::new((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        let dst_c = Point::new((dw as f64 - 1.0) / 2.0, (dh as f64 - 1.0) / 2.0);
        let forward = AffineTransform::similarity_about(src_c, -angle_deg, 1.0, dst_c.x - src_c.x, dst_c.y - src_c.y);
        RotationFrame {
            angle_deg,
            src_size: (width, height),
            dst_size: (dw, dh),
            forward,
        }
    }

    pub fn backward(&self) -> AffineTransform {
        self.forward.inverse().expect("rotations are invertible")
    }

    pub fn apply<R: Resample>(&self, raster: &R) -> R {
        if self.forward == AffineTransform::IDENTITY && self.src_size == self.dst_size {
            return raster.resample(self.dst_size.0, self.dst_size.1, &AffineTransform::IDENTITY);
        }
        raster.resample(self.dst_size.0, self.dst_size.1, &self.backward())
    }
}

/// Rotates by `−angle_deg` about the raster center. The canvas grows to the
/// rotated bounding box.
pub fn rotate_image<R: Resample>(raster: &R, angle_deg: f64) -> R {
    let (w, h) = raster.dimensions();
    RotationFrame::new(w, h, angle_deg).apply(raster)
}
