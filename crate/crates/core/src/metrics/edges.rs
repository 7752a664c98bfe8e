//! Integer Canny edge detector.
//!
//! Every stage before thresholding is exact integer arithmetic, so an
//! independent implementation with the same definitions must agree pixel
//! for pixel:
//! luminance `(299 R + 587 G + 114 B + 500) / 1000`; 5x5 binomial blur
//! `[1 4 6 4 1]` in both axes, normalized by `(sum + 128) >> 8`; 3x3 Sobel;
//! borders clamp to the nearest pixel. Gradient direction is quantized with
//! integer tangent tests (tan 22.5 deg ~ 0.4142, tan 67.5 deg ~ 2.4142).
//! Non-maximum suppression keeps a pixel whose squared magnitude is at
//! least both neighbours' along the gradient; the outer 1-pixel ring is
//! never an edge. Hysteresis follows 8-connectivity from strong pixels
//! (`mag >= high`) through weak ones (`mag >= low`).

use image::imageops::{self, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig<T> {
    /// Thresholds on gradient magnitude, 0-255 scale.
    pub low: T,
    pub high: T,
    /// Frame every image is resized to before detection; `None` keeps the
    /// native size.
    pub canonical_size: Option<(u32, u32)>,
}

impl<T: Scalar> Default for EdgeConfig<T> {
    fn default() -> Self {
        Self {
            low: T::from_f64_lossy(100.0),
            high: T::from_f64_lossy(200.0),
            canonical_size: Some((512, 512)),
        }
    }
}

impl<T: Scalar> EdgeConfig<T> {
    pub fn native(low: T, high: T) -> Self {
        Self {
            low,
            high,
            canonical_size: None,
        }
    }

    fn check(&self) -> Result<(f64, f64), MetricsError> {
        let (lo, hi) = (self.low.lossy_f64(), self.high.lossy_f64());
        if !(0.0 <= lo && lo < hi && hi <= 255.0) {
            return Err(MetricsError::Precondition(format!(
                "thresholds must satisfy 0 <= low < high <= 255, got ({lo}, {hi})"
            )));
        }
        if matches!(self.canonical_size, Some((0, _)) | Some((_, 0))) {
            return Err(MetricsError::Precondition("canonical size must be non-zero".into()));
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore<T> {
    pub edge_density: T,
    pub edge_pixels: u64,
    pub total_pixels: u64,
}

pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

pub fn to_gray(img: &image::DynamicImage) -> GrayImage {
    let rgb = img.to_rgb8();
    GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y).0;
        image::Luma([luminance(p[0], p[1], p[2])])
    })
}

const KERNEL: [u32; 5] = [1, 4, 6, 4, 1];

fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn blur(px: &[u8], w: usize, h: usize) -> Vec<i32> {
    let mut horiz = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = KERNEL
                .iter()
                .enumerate()
                .map(|(k, c)| c * px[y * w + clamp_idx(x as i64 + k as i64 - 2, w)] as u32)
                .sum();
        }
    }
    let mut out = vec![0i32; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: u32 = KERNEL
                .iter()
                .enumerate()
                .map(|(k, c)| c * horiz[clamp_idx(y as i64 + k as i64 - 2, h) * w + x])
                .sum();
            out[y * w + x] = ((s + 128) >> 8) as i32;
        }
    }
    out
}

/// Edge map (row-major) of a grayscale buffer.
pub fn canny(px: &[u8], w: usize, h: usize, low: f64, high: f64) -> Vec<bool> {
    assert_eq!(px.len(), w * h, "buffer size mismatch");
    let mut edges = vec![false; w * h];
    if w < 3 || h < 3 {
        return edges;
    }
    let b = blur(px, w, h);
    let at = |x: i64, y: i64| b[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    let mut mag2 = vec![0i64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let sx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = sx as i64;
            gy[i] = sy as i64;
            mag2[i] = (sx as i64).pow(2) + (sy as i64).pow(2);
        }
    }
    let (lo2, hi2) = (low * low, high * high);
    // 0 = none, 1 = weak, 2 = strong
    let mut class = vec![0u8; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag2[i];
            if (m as f64) < lo2 {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let (dx, dy): (i64, i64) = if ay * 10000 <= ax * 4142 {
                (1, 0)
            } else if ay * 10000 >= ax * 24142 {
                (0, 1)
            } else if gx[i] * gy[i] > 0 {
                (1, 1)
            } else {
                (1, -1)
            };
            let n1 = mag2[((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
            let n2 = mag2[((y as i64 - dy) as usize) * w + (x as i64 - dx) as usize];
            if m >= n1 && m >= n2 {
                class[i] = if (m as f64) >= hi2 { 2 } else { 1 };
            }
        }
    }
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| class[i] == 2).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !edges[j] {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edges
}

pub fn edge_density_gray<T: Scalar>(gray: &GrayImage, cfg: &EdgeConfig<T>) -> Result<ComplexityScore<T>, MetricsError> {
    let (lo, hi) = cfg.check()?;
    let frame = match cfg.canonical_size {
        Some((w, h)) if (w, h) != gray.dimensions() => imageops::resize(gray, w, h, FilterType::Triangle),
        _ => gray.clone(),
    };
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let total = (w * h) as u64;
    if total == 0 {
        return Err(MetricsError::Precondition("image has no pixels".into()));
    }
    let edges = canny(frame.as_raw(), w, h, lo, hi);
    let count = edges.iter().filter(|e| **e).count() as u64;
    Ok(ComplexityScore {
        edge_density: T::from_u64(count).unwrap_or_default() / T::from_u64(total).unwrap_or_else(T::one),
        edge_pixels: count,
        total_pixels: total,
    })
}

/// Fraction of pixels Canny marks as edges, after grayscale conversion and
/// resizing to the canonical frame.
pub fn edge_density<T: Scalar>(bytes: &[u8], cfg: &EdgeConfig<T>) -> Result<ComplexityScore<T>, MetricsError> {
    let img = image::load_from_memory(bytes).map_err(|e| MetricsError::Undecodable(e.to_string()))?;
    edge_density_gray(&to_gray(&img), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luminance_endpoints() {
        assert_eq!(luminance(0, 0, 0), 0);
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(255, 0, 0), 76);
    }

    #[test]
    fn solid_image_has_no_edges() {
        let g = GrayImage::from_pixel(32, 32, image::Luma([90]));
        let s = edge_density_gray::<f64>(&g, &EdgeConfig::default()).unwrap();
        assert_eq!(s.edge_density, 0.0);
    }

    #[test]
    fn threshold_guard() {
        let g = GrayImage::from_pixel(8, 8, image::Luma([0]));
        assert!(edge_density_gray(&g, &EdgeConfig::native(200.0_f64, 100.0)).is_err());
        assert!(edge_density_gray(&g, &EdgeConfig::native(10.0_f64, 300.0)).is_err());
    }

    #[test]
    fn undecodable_bytes_rejected() {
        assert!(matches!(
            edge_density::<f64>(b"not an image", &EdgeConfig::default()),
            Err(MetricsError::Undecodable(_))
        ));
    }
}
