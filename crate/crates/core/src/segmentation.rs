//! Skin mask extraction: Cr channel, 5×5 Gaussian, OTSU, then a small
//! morphological cleanup keeping the largest 4-connected region.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur5, rgb_to_cr, BinaryMask, Image};

/// Side of the square structuring element used for open/close.
pub const MORPH_ELEMENT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuResult {
    /// Intensities strictly above this value are foreground.
    pub threshold: u8,
    pub between_class_variance: f64,
}

/// Threshold maximizing ω₀ω₁(μ₀−μ₁)² over all 256 cut points, where class 0
/// holds the bins `≤ t`. Ties go to the smallest `t`.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<OtsuResult> {
    let total: u64 = histogram.iter().sum();
    let populated = histogram.iter().filter(|&&c| c > 0).count();
    if total < 2 || populated < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let n = total as i128;
    let sum: i128 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as i128 * c as i128)
        .sum();

    // With n₀, S₀ the count and intensity mass of class 0, the between-class
    // variance is (S₀·N − S·n₀)² / (N²·n₀·n₁). Candidates are compared as
    // exact fractions d²/(n₀n₁) so ties are real ties.
    let (mut n0, mut s0) = (0i128, 0i128);
    let mut best: Option<(u8, u128, u128)> = None;
    for (t, &c) in histogram.iter().enumerate() {
        n0 += c as i128;
        s0 += t as i128 * c as i128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 * n - sum * n0).unsigned_abs();
        let num = d * d;
        let den = (n0 * n1) as u128;
        if best.is_none_or(|(_, bn, bd)| mul_wide(num, bd) > mul_wide(bn, den)) {
            best = Some((t as u8, num, den));
        }
    }
    let best = best.map(|(t, num, den)| (t, num as f64 / (den as f64 * (n * n) as f64)));
    let (threshold, between_class_variance) = best.ok_or(Error::DegenerateHistogram)?;
    Ok(OtsuResult {
        threshold,
        between_class_variance,
    })
}

/// Full 256-bit product as `(high, low)` halves.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let lo = a0 * b0;
    let mid1 = a1 * b0;
    let mid2 = a0 * b1;
    let hi = a1 * b1;
    let (mid, mid_carry) = mid1.overflowing_add(mid2);
    let (low, low_carry) = lo.overflowing_add(mid << 64);
    let high = hi + (mid >> 64) + ((mid_carry as u128) << 64) + low_carry as u128;
    (high, low)
}

pub fn binarize(image: &Image, threshold: u8) -> Result<BinaryMask> {
    image.expect_channels(1)?;
    BinaryMask::new(
        image.width(),
        image.height(),
        image.data().iter().map(|&v| v > threshold).collect(),
    )
}

/// Separable square min/max filter. Outside the canvas is background for
/// both erosion and dilation.
fn square_filter(mask: &BinaryMask, size: usize, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = (size / 2) as i64;
    let pass = |get: &dyn Fn(i64) -> bool, len: usize| -> Vec<bool> {
        (0..len as i64)
            .map(|i| {
                let mut window = (i - r..=i + r).map(get);
                if erode {
                    window.all(|v| v)
                } else {
                    window.any(|v| v)
                }
            })
            .collect()
    };
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        let row = pass(&|x| mask.get_signed(x, y as i64), w);
        horizontal[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    let mut out = BinaryMask::empty(w, h);
    for x in 0..w {
        let get = |y: i64| y >= 0 && (y as usize) < h && horizontal[y as usize * w + x];
        for (y, v) in pass(&get, h).into_iter().enumerate() {
            out.set(x, y, v);
        }
    }
    out
}

pub fn erode(mask: &BinaryMask, size: usize) -> BinaryMask {
    square_filter(mask, size, true)
}

pub fn dilate(mask: &BinaryMask, size: usize) -> BinaryMask {
    square_filter(mask, size, false)
}

/// Opening followed by closing, both with a 5×5 square.
pub fn morphological_open_close(mask: &BinaryMask) -> BinaryMask {
    let opened = dilate(&erode(mask, MORPH_ELEMENT), MORPH_ELEMENT);
    erode(&dilate(&opened, MORPH_ELEMENT), MORPH_ELEMENT)
}

/// Keeps only the largest 4-connected foreground component. The earliest
/// component in raster order wins a size tie.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0u32; w * h];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let data = label.iter().map(|&l| l != 0 && l == best.0).collect();
    BinaryMask::new(w, h, data).expect("dimensions unchanged")
}

/// Full skin extraction on an RGB image.
pub fn extract_skin_mask(image: &Image) -> Result<BinaryMask> {
    Ok(extract_skin_mask_detailed(image)?.0)
}

/// As [`extract_skin_mask`], also returning the OTSU decision.
pub fn extract_skin_mask_detailed(image: &Image) -> Result<(BinaryMask, OtsuResult)> {
    let cr = rgb_to_cr(image)?;
    let smooth = gaussian_blur5(&cr)?;
    let otsu = otsu_threshold(&smooth.histogram()?)?;
    let raw = binarize(&smooth, otsu.threshold)?;
    let mask = largest_component(&morphological_open_close(&raw));
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok((mask, otsu))
}
