//! Payload preparation pipeline: optional compression, optional keystream
//! encryption, then a DNS-label-safe text encoding. `recover` is the exact
//! inverse of `prepare` for the same configuration.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use sha2::{Digest, Sha256};

const DEFLATE_LEVEL: u8 = 6;
const KEYSTREAM_BLOCK: usize = 32;

/// Text encoding applied as the last pipeline stage.
///
/// All three alphabets are safe inside a DNS label: base64url emits
/// `A-Z a-z 0-9 - _`, base32 emits the RFC 4648 upper-case alphabet, hex
/// emits lower-case `0-9 a-f`. No padding characters are ever produced;
/// decoders re-derive padding from length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Base64Url,
    Base32,
    Hex,
}

impl Encoding {
    pub fn encode(&self, data: &[u8]) -> String {
        match self {
            Encoding::Base64Url => URL_SAFE_NO_PAD.encode(data),
            Encoding::Base32 => base32::encode(base32::Alphabet::Rfc4648 { padding: false }, data),
            Encoding::Hex => hex::encode(data),
        }
    }

    pub fn decode(&self, text: &str) -> Result<Vec<u8>, CodecError> {
        match self {
            Encoding::Base64Url => URL_SAFE_NO_PAD
                .decode(text)
                .map_err(|e| CodecError::Decode(e.to_string())),
            Encoding::Base32 => {
                base32::decode(base32::Alphabet::Rfc4648 { padding: false }, text)
                    .ok_or_else(|| CodecError::Decode("invalid base32".into()))
            }
            Encoding::Hex => hex::decode(text).map_err(|e| CodecError::Decode(e.to_string())),
        }
    }

    /// Characters a payload encoded with this encoding may contain.
    pub fn alphabet(&self) -> &'static str {
        match self {
            Encoding::Base64Url => {
                "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"
            }
            Encoding::Base32 => "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567",
            Encoding::Hex => "0123456789abcdef",
        }
    }
}

/// Settings for one direction of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub compression: bool,
    /// Keystream key; `None` disables encryption. Must be non-empty when set.
    pub encryption_key: Option<Vec<u8>>,
    pub encoding: Encoding,
}

impl PipelineConfig {
    pub fn plain(encoding: Encoding) -> Self {
        PipelineConfig {
            compression: false,
            encryption_key: None,
            encoding,
        }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if let Some(key) = &self.encryption_key {
            if key.is_empty() {
                return Err(CodecError::EmptyKey);
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("decompress failed: corrupt stream")]
    Decompress,
    #[error("encryption key must be non-empty")]
    EmptyKey,
}

/// Compress, encrypt, and encode `raw` per `cfg`.
pub fn prepare(raw: &[u8], cfg: &PipelineConfig) -> String {
    let mut bytes = raw.to_vec();
    if cfg.compression {
        bytes = miniz_oxide::deflate::compress_to_vec(&bytes, DEFLATE_LEVEL);
    }
    if let Some(key) = &cfg.encryption_key {
        keystream_xor(&mut bytes, key);
    }
    cfg.encoding.encode(&bytes)
}

/// Exact inverse of [`prepare`] for the same `cfg`.
pub fn recover(encoded: &str, cfg: &PipelineConfig) -> Result<Vec<u8>, CodecError> {
    let mut bytes = cfg.encoding.decode(encoded)?;
    if let Some(key) = &cfg.encryption_key {
        keystream_xor(&mut bytes, key);
    }
    if cfg.compression {
        bytes = miniz_oxide::inflate::decompress_to_vec(&bytes)
            .map_err(|_| CodecError::Decompress)?;
    }
    Ok(bytes)
}

/// XOR `data` with the keystream whose block i is SHA-256(key || i as u64 BE).
/// Length-preserving and self-inverse; not security-grade, the goal is a
/// reversible transform that destroys payload structure.
fn keystream_xor(data: &mut [u8], key: &[u8]) {
    for (block_index, block) in data.chunks_mut(KEYSTREAM_BLOCK).enumerate() {
        let mut hasher = Sha256::new();
        hasher.update(key);
        hasher.update((block_index as u64).to_be_bytes());
        let pad = hasher.finalize();
        for (b, k) in block.iter_mut().zip(pad.iter()) {
            *b ^= k;
        }
    }
}
