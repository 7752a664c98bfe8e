//! Token-hash projection embedder.
//!
//! Each lowercase token picks a few signed coordinates from its hash, so
//! texts with disjoint vocabularies land near-orthogonal and shared tokens
//! raise the cosine. Offline images carry their prompt in a PNG text chunk;
//! the embedder reads it back so text and image of one artifact share a
//! space. The numbers are for exercising the metric plumbing, not semantic
//! claims.

use std::io::Cursor;

use super::render::PROMPT_KEYWORD;
use crate::digest::sha256_u64;
use crate::providers::{EmbedInput, Embedder, ProviderError};

const TAPS_PER_TOKEN: usize = 4;

/// Scales `v` to unit L2 norm; the zero vector is returned unchanged.
pub fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
    }
    v
}

#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    dimension: usize,
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        Self::new(512)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() > 1)
        .map(str::to_lowercase)
}

fn prompt_chunk(bytes: &[u8]) -> Option<String> {
    let reader = png::Decoder::new(Cursor::new(bytes)).read_info().ok()?;
    let info = reader.info();
    info.utf8_text
        .iter()
        .find(|c| c.keyword == PROMPT_KEYWORD)
        .and_then(|c| c.get_text().ok())
        .or_else(|| {
            info.uncompressed_latin1_text
                .iter()
                .find(|c| c.keyword == PROMPT_KEYWORD)
                .map(|c| c.text.clone())
        })
}

impl OfflineEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn project_tokens<I: IntoIterator<Item = String>>(&self, toks: I, v: &mut [f32]) {
        for t in toks {
            let h = sha256_u64(t.as_bytes());
            for k in 0..TAPS_PER_TOKEN {
                let bits = h.rotate_left((k * 16) as u32);
                let idx = (bits as usize) % self.dimension;
                let sign = if (bits >> 40) & 1 == 0 { 1.0 } else { -1.0 };
                v[idx] += sign;
            }
        }
    }

    /// Coarse luminance grid hashed into the vector; used for images that
    /// carry no prompt chunk.
    fn project_pixels(&self, bytes: &[u8], v: &mut [f32]) -> Result<(), ProviderError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| ProviderError::Precondition(format!("image is not decodable: {e}")))?
            .to_luma8();
        let small = image::imageops::resize(&img, 8, 8, image::imageops::FilterType::Triangle);
        for (i, p) in small.pixels().enumerate() {
            let h = sha256_u64(format!("px{i}").as_bytes());
            v[(h as usize) % self.dimension] += (p.0[0] as f32 / 255.0) - 0.5;
        }
        Ok(())
    }
}

impl Embedder for OfflineEmbedder {
    fn id(&self) -> String {
        format!("offline-embedder-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ProviderError> {
        let mut v = vec![0.0f32; self.dimension];
        match input {
            EmbedInput::Text(t) => self.project_tokens(tokens(t), &mut v),
            EmbedInput::Image(b) => match prompt_chunk(b) {
                Some(p) => self.project_tokens(tokens(&p), &mut v),
                None => self.project_pixels(b, &mut v)?,
            },
        }
        if v.iter().all(|x| *x == 0.0) {
            // empty input still has to satisfy the unit-norm contract
            v[0] = 1.0;
        }
        Ok(normalize(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ImageProvider, OfflineRenderer};

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn unit_norm_and_identical_inputs() {
        let e = OfflineEmbedder::default();
        for text in ["", "a fish in a pond", "Arrows point up from the ocean"] {
            let v = e.embed(EmbedInput::Text(text)).unwrap();
            let n: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert_eq!(v, e.embed(EmbedInput::Text(text)).unwrap());
        }
    }

    #[test]
    fn disjoint_vocabularies_stay_below_floor() {
        let e = OfflineEmbedder::default();
        let a = e.embed(EmbedInput::Text("sun evaporation ocean vapor rising arrows")).unwrap();
        let b = e.embed(EmbedInput::Text("seed sprout flower petals wilting roots")).unwrap();
        assert!(cos(&a, &b) < 0.15, "{}", cos(&a, &b));
    }

    #[test]
    fn image_reads_back_its_prompt() {
        let prompt = "Draw a sun over the ocean. Draw like a Grade 6 student.";
        let png = OfflineRenderer::default().generate_image(prompt, 1).unwrap();
        let e = OfflineEmbedder::default();
        let vi = e.embed(EmbedInput::Image(&png)).unwrap();
        let vt = e.embed(EmbedInput::Text(prompt)).unwrap();
        assert!(cos(&vi, &vt) > 0.999);
    }
}
