//! Text-to-image and captioning backends.
//!
//! Real backends speak a small HTTP contract (see [`GenerateRequest`] and
//! [`CaptionResponse`]); the HTTP clients live in the networking crate. The
//! stubs here are pure functions of their inputs so replays and benchmarks
//! are reproducible.

use std::collections::hash_map::RandomState;
use std::fmt;
use std::hash::{BuildHasher, Hasher};
use std::io::Cursor;
use std::str::FromStr;
use std::time::Duration;

use bytes::Bytes;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("backend {endpoint} unavailable: {reason}")]
    BackendUnavailable { endpoint: String, reason: String },
    #[error("backend rejected prompt: {0}")]
    BackendRejectedPrompt(String),
    #[error("malformed image payload: {0}")]
    MalformedImagePayload(String),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
    /// `None` draws a fresh seed per request.
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            guidance_scale: 5.0,
            width: 1024,
            height: 1024,
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub const MIN_SIDE: u32 = 64;

    pub fn validate(&self) -> Result<(), GenError> {
        if self.steps == 0 {
            return Err(GenError::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale > 0.0) {
            return Err(GenError::InvalidConfig(
                "guidance_scale must be positive".into(),
            ));
        }
        for (name, side) in [("width", self.width), ("height", self.height)] {
            if side < Self::MIN_SIDE || side % 8 != 0 {
                return Err(GenError::InvalidConfig(format!(
                    "{name} {side} must be >= 64 and a multiple of 8"
                )));
            }
        }
        Ok(())
    }

    /// Copy with dimensions derived from an original image: rounded up to a
    /// multiple of 8, at least 64. Unknown (zero) dimensions keep the default.
    pub fn with_dimensions_of(&self, width: u32, height: u32) -> Self {
        let fit = |side: u32, fallback: u32| {
            if side == 0 {
                fallback
            } else {
                side.div_ceil(8).max(Self::MIN_SIDE / 8) * 8
            }
        };
        Self {
            width: fit(width, self.width),
            height: fit(height, self.height),
            ..self.clone()
        }
    }

    pub fn resolved_seed(&self) -> u64 {
        self.seed.unwrap_or_else(random_seed)
    }
}

fn random_seed() -> u64 {
    let mut h = RandomState::new().build_hasher();
    h.write_u64(0x5eed);
    h.finish()
}

/// Body of a generation request, field names fixed by the wire contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub steps: u32,
    pub guidance_scale: f64,
    pub width: u32,
    pub height: u32,
    pub seed: Option<u64>,
}

impl GenerateRequest {
    pub fn new(prompt: &str, config: &GenerationConfig) -> Self {
        Self {
            prompt: prompt.to_string(),
            steps: config.steps,
            guidance_scale: config.guidance_scale,
            width: config.width,
            height: config.height,
            seed: config.seed,
        }
    }

    pub fn config(&self) -> GenerationConfig {
        GenerationConfig {
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            width: self.width,
            height: self.height,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub png: Bytes,
    pub elapsed_ms: u64,
}

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str, config: &GenerationConfig) -> Result<GeneratedImage, GenError>;
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &[u8]) -> Result<String, GenError>;
}

/// Checks that `bytes` is a PNG of exactly `width`x`height`.
pub fn verify_png(bytes: &[u8], width: u32, height: u32) -> Result<(), GenError> {
    let reader = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png);
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| GenError::MalformedImagePayload(e.to_string()))?;
    if (w, h) != (width, height) {
        return Err(GenError::MalformedImagePayload(format!(
            "expected {width}x{height}, got {w}x{h}"
        )));
    }
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| GenError::MalformedImagePayload(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gpu {
    V100,
    A40,
    A100,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub name: Gpu,
    pub median_ms: u64,
    pub jitter_ms: u64,
}

impl LatencyProfile {
    pub const DEFAULT_JITTER_MS: u64 = 50;

    pub fn preset(gpu: Gpu) -> Option<Self> {
        let median_ms = match gpu {
            Gpu::V100 | Gpu::A40 => 1100,
            Gpu::A100 => 500,
            Gpu::Custom => return None,
        };
        Some(Self {
            name: gpu,
            median_ms,
            jitter_ms: Self::DEFAULT_JITTER_MS,
        })
    }

    pub fn custom(median_ms: u64, jitter_ms: u64) -> Result<Self, String> {
        if median_ms == 0 {
            return Err("median_ms must be > 0".into());
        }
        Ok(Self {
            name: Gpu::Custom,
            median_ms,
            jitter_ms,
        })
    }

    pub fn with_jitter(self, jitter_ms: u64) -> Self {
        Self { jitter_ms, ..self }
    }
}

impl FromStr for LatencyProfile {
    type Err = String;

    /// `v100`, `a40`, `a100`, or `custom:<median_ms>[:<jitter_ms>]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "v100" => Ok(Self::preset(Gpu::V100).unwrap()),
            "a40" => Ok(Self::preset(Gpu::A40).unwrap()),
            "a100" => Ok(Self::preset(Gpu::A100).unwrap()),
            other => {
                let rest = other
                    .strip_prefix("custom:")
                    .ok_or_else(|| format!("unknown latency profile `{s}`"))?;
                let mut parts = rest.split(':');
                let median = parts
                    .next()
                    .and_then(|p| p.parse::<u64>().ok())
                    .ok_or_else(|| format!("bad median in `{s}`"))?;
                let jitter = match parts.next() {
                    Some(p) => p.parse::<u64>().map_err(|_| format!("bad jitter in `{s}`"))?,
                    None => Self::DEFAULT_JITTER_MS,
                };
                Self::custom(median, jitter)
            }
        }
    }
}

impl fmt::Display for LatencyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            Gpu::V100 => write!(f, "v100"),
            Gpu::A40 => write!(f, "a40"),
            Gpu::A100 => write!(f, "a100"),
            Gpu::Custom => write!(f, "custom:{}:{}", self.median_ms, self.jitter_ms),
        }
    }
}

/// `median_ms` plus a uniform integer offset in `[-jitter_ms, +jitter_ms]`.
pub fn sample_latency(profile: &LatencyProfile, rng_seed: u64) -> u64 {
    if profile.jitter_ms == 0 {
        return profile.median_ms;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let j = profile.jitter_ms as i64;
    let offset = rng.gen_range(-j..=j);
    (profile.median_ms as i64 + offset).max(0) as u64
}

fn stub_digest(prompt: &str, seed: u64, width: u32, height: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"webforge-stub-v1\0");
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    h.finalize().into()
}

/// Renders the deterministic stub picture: a 4x4 grid of tiles, each either
/// the background or the accent color as selected by the digest.
pub fn render_stub_png(prompt: &str, seed: u64, width: u32, height: u32) -> Bytes {
    let d = stub_digest(prompt, seed, width, height);
    let background = Rgb([d[0], d[1], d[2]]);
    let pattern = u16::from_le_bytes([d[3], d[4]]);
    let accent = Rgb([d[5], d[6], d[7]]);
    let img = RgbImage::from_fn(width, height, |x, y| {
        let col = (x as u64 * 4 / width as u64) as u32;
        let row = (y as u64 * 4 / height as u64) as u32;
        if pattern & (1 << (row * 4 + col)) != 0 {
            accent
        } else {
            background
        }
    });
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::NoFilter)
        .write_image(img.as_raw(), width, height, image::ExtendedColorType::Rgb8)
        .expect("encoding an in-memory RGB buffer cannot fail");
    Bytes::from(out)
}

/// Deterministic generator. With a latency profile attached it sleeps for a
/// sampled inference time, emulating a GPU backend.
#[derive(Debug, Clone, Default)]
pub struct StubGenerator {
    latency: Option<LatencyProfile>,
}

impl StubGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn benchmarking(latency: LatencyProfile) -> Self {
        Self {
            latency: Some(latency),
        }
    }
}

impl ImageGenerator for StubGenerator {
    fn generate(&self, prompt: &str, config: &GenerationConfig) -> Result<GeneratedImage, GenError> {
        if prompt.trim().is_empty() {
            return Err(GenError::EmptyPrompt);
        }
        config.validate()?;
        let seed = config.resolved_seed();
        let png = render_stub_png(prompt, seed, config.width, config.height);
        let elapsed_ms = match self.latency {
            Some(profile) => {
                let d = stub_digest(prompt, seed, config.width, config.height);
                let ms = sample_latency(&profile, u64::from_le_bytes(d[8..16].try_into().unwrap()));
                std::thread::sleep(Duration::from_millis(ms));
                ms
            }
            None => 0,
        };
        Ok(GeneratedImage { png, elapsed_ms })
    }
}

/// Captions any decodable image as `a generated scene <hex8>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubCaptioner;

impl Captioner for StubCaptioner {
    fn caption(&self, image: &[u8]) -> Result<String, GenError> {
        image::load_from_memory(image).map_err(|e| GenError::UndecodableImage(e.to_string()))?;
        let digest = hex::encode(Sha256::digest(image));
        Ok(format!("a generated scene {}", &digest[..8]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(seed: u64, side: u32) -> GenerationConfig {
        GenerationConfig {
            seed: Some(seed),
            width: side,
            height: side,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_generation_parameters() {
        let c = GenerationConfig::default();
        assert_eq!((c.steps, c.guidance_scale, c.width, c.height), (20, 5.0, 1024, 1024));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = GenerationConfig {
            width: 100,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(GenError::InvalidConfig(_))));
        c.width = 56;
        assert!(c.validate().is_err());
        c.width = 64;
        c.steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dimensions_round_up() {
        let c = GenerationConfig::default().with_dimensions_of(301, 17);
        assert_eq!((c.width, c.height), (304, 64));
        let c = GenerationConfig::default().with_dimensions_of(0, 0);
        assert_eq!((c.width, c.height), (1024, 1024));
    }

    #[test]
    fn stub_is_deterministic_and_seed_sensitive() {
        let g = StubGenerator::new();
        let a = g.generate("red bicycle", &seeded(7, 1024)).unwrap();
        let b = g.generate("red bicycle", &seeded(7, 1024)).unwrap();
        let c = g.generate("red bicycle", &seeded(8, 1024)).unwrap();
        assert_eq!(a.png, b.png);
        assert_ne!(stub_digest("red bicycle", 7, 1024, 1024), stub_digest("red bicycle", 8, 1024, 1024));
        assert_ne!(a.png, c.png);
        verify_png(&a.png, 1024, 1024).unwrap();
    }

    #[test]
    fn empty_prompt_rejected() {
        assert_eq!(
            StubGenerator::new().generate("  ", &seeded(1, 64)),
            Err(GenError::EmptyPrompt)
        );
    }

    #[test]
    fn stub_caption_and_truncation() {
        let png = render_stub_png("x", 1, 64, 64);
        let caption = StubCaptioner.caption(&png).unwrap();
        let hex8 = &hex::encode(Sha256::digest(&png))[..8];
        assert_eq!(caption, format!("a generated scene {hex8}"));
        assert!(matches!(
            StubCaptioner.caption(&png[..png.len() / 2]),
            Err(GenError::UndecodableImage(_))
        ));
    }

    #[test]
    fn latency_presets() {
        let a100 = LatencyProfile::preset(Gpu::A100).unwrap().with_jitter(0);
        let a40 = LatencyProfile::preset(Gpu::A40).unwrap().with_jitter(0);
        let v100 = LatencyProfile::preset(Gpu::V100).unwrap();
        assert_eq!(sample_latency(&a100, 3), 500);
        assert_eq!(sample_latency(&a40, 3), 1100);
        assert_eq!(v100.median_ms, 1100);
        assert_eq!(v100.jitter_ms, 50);
    }

    #[test]
    fn latency_parsing() {
        assert_eq!("A100".parse::<LatencyProfile>().unwrap().median_ms, 500);
        let c: LatencyProfile = "custom:800:10".parse().unwrap();
        assert_eq!((c.median_ms, c.jitter_ms), (800, 10));
        assert!("custom:0".parse::<LatencyProfile>().is_err());
        assert!("h100".parse::<LatencyProfile>().is_err());
        assert_eq!(c.to_string().parse::<LatencyProfile>().unwrap(), c);
    }

    #[test]
    fn jitter_within_range_and_median_stable() {
        let p = LatencyProfile::preset(Gpu::A40).unwrap();
        let mut samples: Vec<u64> = (0..2001).map(|s| sample_latency(&p, s)).collect();
        assert!(samples.iter().all(|&v| (1050..=1150).contains(&v)));
        samples.sort_unstable();
        let median = samples[samples.len() / 2] as f64;
        assert!((median - 1100.0).abs() <= 0.02 * 1100.0);
    }
}
