use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Side length of the procedural mock images.
pub const MOCK_IMAGE_SIDE: u32 = 16;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a decodable PNG: {0}")]
    Decode(String),
    #[error("content hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
}

/// A generated image together with the prompt it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArtifact {
    bytes: Vec<u8>,
    format: ImageFormat,
    content_hash: String,
    source_prompt: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ImageArtifact {
    /// Wraps PNG bytes after checking that they decode.
    pub fn from_png(bytes: Vec<u8>, source_prompt: impl Into<String>) -> Result<Self, ImageError> {
        decode_dimensions(&bytes)?;
        let content_hash = sha256_hex(&bytes);
        Ok(ImageArtifact { bytes, format: ImageFormat::Png, content_hash, source_prompt: source_prompt.into() })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn format(&self) -> ImageFormat {
        self.format
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn source_prompt(&self) -> &str {
        &self.source_prompt
    }

    pub fn dimensions(&self) -> (u32, u32) {
        decode_dimensions(&self.bytes).expect("validated at construction")
    }

    pub fn to_data_url(&self) -> String {
        format!("data:image/png;base64,{}", BASE64.encode(&self.bytes))
    }
}

fn decode_dimensions(bytes: &[u8]) -> Result<(u32, u32), ImageError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| ImageError::Decode(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| ImageError::Decode("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Decode(e.to_string()))?;
    Ok((info.width, info.height))
}

#[derive(Serialize, Deserialize)]
struct ImageWire {
    format: ImageFormat,
    content_hash: String,
    source_prompt: String,
    bytes_b64: String,
}

impl Serialize for ImageArtifact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ImageWire {
            format: self.format,
            content_hash: self.content_hash.clone(),
            source_prompt: self.source_prompt.clone(),
            bytes_b64: BASE64.encode(&self.bytes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ImageArtifact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = ImageWire::deserialize(d)?;
        let bytes = BASE64.decode(wire.bytes_b64).map_err(D::Error::custom)?;
        let art = ImageArtifact::from_png(bytes, wire.source_prompt).map_err(D::Error::custom)?;
        if art.content_hash != wire.content_hash {
            return Err(D::Error::custom(ImageError::HashMismatch { recorded: wire.content_hash, computed: art.content_hash }));
        }
        Ok(art)
    }
}

/// Encodes a small RGB PNG whose pixels are drawn from a SHA-256 stream
/// seeded with `material`. Identical material gives identical bytes.
pub fn render_procedural(material: &[u8]) -> Vec<u8> {
    let side = MOCK_IMAGE_SIDE as usize;
    let mut pixels = Vec::with_capacity(side * side * 3);
    let mut block = Sha256::digest(material);
    while pixels.len() < side * side * 3 {
        pixels.extend_from_slice(&block);
        block = Sha256::digest(block);
    }
    pixels.truncate(side * side * 3);

    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(&pixels).expect("in-memory PNG data");
    }
    out
}
