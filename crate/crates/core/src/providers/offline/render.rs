//! Procedural stand-in for a text-to-image model.
//!
//! Each positive sentence of the prompt becomes a labeled blob, consecutive
//! blobs are joined by arrows, and negative sentences draw nothing. Visual
//! complexity therefore grows with the number of positive constraints, which
//! is what the complexity ablation needs to be exercisable offline.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::derive_seed;
use crate::providers::{ImageProvider, ProviderError};

/// PNG text keyword carrying the prompt the image was rendered from.
pub(crate) const PROMPT_KEYWORD: &str = "prompt";

const SHEET: Rgb<u8> = Rgb([250, 248, 240]);
const INKS: [Rgb<u8>; 6] = [
    Rgb([20, 20, 20]),
    Rgb([30, 60, 160]),
    Rgb([170, 30, 30]),
    Rgb([20, 110, 40]),
    Rgb([110, 40, 120]),
    Rgb([140, 70, 10]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SentenceKind {
    Positive,
    Negative,
    Stylistic,
}

pub(crate) fn classify(sentence: &str) -> SentenceKind {
    let s = sentence.trim();
    if s.starts_with("Do NOT") || s.starts_with("Leave") || s.contains("do NOT") {
        SentenceKind::Negative
    } else if s.contains("Draw like a") || s.to_lowercase().contains("style") {
        SentenceKind::Stylistic
    } else {
        SentenceKind::Positive
    }
}

/// Splits on sentence punctuation followed by whitespace or end of text, so
/// abbreviations such as "e.g." inside a constraint stay attached.
/// A word like `e.g` or `i.e` (the final period not yet included).
fn is_abbreviation(before: &str) -> bool {
    let word = before.rsplit(|c: char| c.is_whitespace() || c == '(').next().unwrap_or("");
    word.contains('.') && word.chars().all(|c| c.is_ascii_alphabetic() || c == '.')
}

pub(crate) fn split_sentences(prompt: &str) -> Vec<&str> {
    let bytes = prompt.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        let end_here = matches!(b, b'.' | b'!' | b'?')
            && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace())
            && !is_abbreviation(&prompt[start..i]);
        if end_here {
            let s = prompt[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = prompt[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[derive(Debug, Clone)]
pub struct OfflineRenderer {
    pub width: u32,
    pub height: u32,
}

impl Default for OfflineRenderer {
    fn default() -> Self {
        Self { width: 512, height: 512 }
    }
}

struct Canvas {
    img: RgbImage,
    stroke: i64,
}

impl Canvas {
    fn stamp(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        let r = self.stroke / 2;
        for dy in -r..=(self.stroke - 1 - r) {
            for dx in -r..=(self.stroke - 1 - r) {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as u32) < self.img.width() && (py as u32) < self.img.height() {
                    self.img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.stamp(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn wobbly_ellipse(&mut self, rng: &mut ChaCha8Rng, c: (i64, i64), rx: f64, ry: f64, jitter: f64, color: Rgb<u8>) {
        const SEGMENTS: usize = 40;
        let pts: Vec<(i64, i64)> = (0..SEGMENTS)
            .map(|i| {
                let t = i as f64 / SEGMENTS as f64 * std::f64::consts::TAU;
                let j = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
                (
                    c.0 + ((rx + j) * t.cos()).round() as i64,
                    c.1 + ((ry + j) * t.sin()).round() as i64,
                )
            })
            .collect();
        for i in 0..SEGMENTS {
            self.line(pts[i], pts[(i + 1) % SEGMENTS], color);
        }
    }

    fn arrow(&mut self, from: (i64, i64), to: (i64, i64), color: Rgb<u8>) {
        self.line(from, to, color);
        let (dx, dy) = ((to.0 - from.0) as f64, (to.1 - from.1) as f64);
        let len = (dx * dx + dy * dy).sqrt().max(1.0);
        let (ux, uy) = (dx / len, dy / len);
        for side in [-1.0, 1.0] {
            let hx = to.0 as f64 - 14.0 * ux + side * 8.0 * -uy;
            let hy = to.1 as f64 - 14.0 * uy + side * 8.0 * ux;
            self.line(to, (hx.round() as i64, hy.round() as i64), color);
        }
    }

    /// A few uneven dashes standing in for handwritten label text.
    fn scribble_label(&mut self, rng: &mut ChaCha8Rng, x: i64, y: i64, color: Rgb<u8>) {
        let words = rng.gen_range(2..=4);
        let mut cx = x;
        for _ in 0..words {
            let w = rng.gen_range(8..=16);
            let tilt = rng.gen_range(-2..=2);
            self.line((cx, y), (cx + w, y + tilt), color);
            cx += w + 6;
        }
    }
}

/// Stroke width and radius jitter implied by the stylistic sentences.
fn style_of(stylistic: &[&str]) -> (i64, f64) {
    let s = stylistic.join(" ").to_lowercase();
    if s.contains("crayon") {
        (4, 4.0)
    } else if s.contains("marker") {
        (3, 2.5)
    } else if s.contains("pencil") {
        (2, 2.0)
    } else {
        (2, 1.0)
    }
}

pub(crate) fn encode_png(img: &RgbImage, prompt: &str, seed: u64) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width(), img.height());
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_itxt_chunk(PROMPT_KEYWORD.to_string(), prompt.to_string())?;
        enc.add_text_chunk("seed".to_string(), seed.to_string())?;
        let mut w = enc.write_header()?;
        w.write_image_data(img.as_raw())?;
        w.finish()?;
    }
    Ok(out)
}

impl OfflineRenderer {
    pub fn render(&self, prompt: &str, seed: u64) -> RgbImage {
        let sentences = split_sentences(prompt);
        let positives: Vec<&str> = sentences.iter().copied().filter(|s| classify(s) == SentenceKind::Positive).collect();
        let stylistic: Vec<&str> = sentences.iter().copied().filter(|s| classify(s) == SentenceKind::Stylistic).collect();
        let (stroke, jitter) = style_of(&stylistic);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&["render", prompt], seed));
        let mut canvas = Canvas {
            img: RgbImage::from_pixel(self.width, self.height, SHEET),
            stroke,
        };
        let (w, h) = (self.width as i64, self.height as i64);
        let (cw, ch) = (w / 3, h / 3);
        let mut cells: Vec<usize> = (0..9).collect();
        cells.shuffle(&mut rng);
        let mut centers: Vec<(i64, i64)> = Vec::new();
        for (i, _) in positives.iter().enumerate() {
            let cell = cells[i % 9];
            let color = INKS[rng.gen_range(0..INKS.len())];
            let base = ((cell % 3) as i64 * cw + cw / 2, (cell / 3) as i64 * ch + ch / 2 - 10);
            if i < 9 {
                let c = (base.0 + rng.gen_range(-10..=10), base.1 + rng.gen_range(-10..=10));
                let rx = rng.gen_range(28.0..46.0);
                let ry = rng.gen_range(22.0..38.0);
                canvas.wobbly_ellipse(&mut rng, c, rx, ry, jitter, color);
                canvas.scribble_label(&mut rng, c.0 - 30, c.1 + ry as i64 + 16, color);
                if let Some(&prev) = centers.last() {
                    let (dx, dy) = ((c.0 - prev.0) as f64, (c.1 - prev.1) as f64);
                    let len = (dx * dx + dy * dy).sqrt().max(1.0);
                    let off = 48.0;
                    let from = (prev.0 + (dx / len * off) as i64, prev.1 + (dy / len * off) as i64);
                    let to = (c.0 - (dx / len * off) as i64, c.1 - (dy / len * off) as i64);
                    canvas.arrow(from, to, INKS[0]);
                }
                centers.push(c);
            } else {
                // past nine elements, add inner detail to an existing blob
                let c = centers[i % 9];
                canvas.wobbly_ellipse(&mut rng, c, 10.0, 10.0, jitter / 2.0, color);
            }
        }
        canvas.img
    }
}

impl ImageProvider for OfflineRenderer {
    fn id(&self) -> String {
        format!("offline-renderer-{}x{}", self.width, self.height)
    }

    fn generate_image(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, ProviderError> {
        let img = self.render(prompt, seed);
        encode_png(&img, prompt, seed).map_err(|e| ProviderError::Unavailable(format!("png encoding failed: {e}")))
    }
}
