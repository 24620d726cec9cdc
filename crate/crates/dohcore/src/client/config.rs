//! Scenario configuration: the on-disk JSON schema and its validated
//! runtime form.
//!
//! The file schema accepts `doh_server`/`target_domain` as a single string
//! or as the list forms `doh_servers`/`target_domains`; single-element lists
//! serialize back to the singular key.

use crate::chunk::FramingConfig;
use crate::codec::{Encoding, PipelineConfig};
use crate::dohwire::HttpMethod;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BASE_DELAY: f64 = 0.2;
pub const DEFAULT_DELAY_VARIANCE: f64 = 0.1;
pub const DEFAULT_BURST_SIZE: usize = 10;
pub const DEFAULT_CHUNK_SIZE: usize = 30;

/// Timing pattern governing inter-query delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingPattern {
    Regular,
    Random,
    Burst,
    Stealth,
}

impl TimingPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regular" => Some(TimingPattern::Regular),
            "random" => Some(TimingPattern::Random),
            "burst" => Some(TimingPattern::Burst),
            "stealth" => Some(TimingPattern::Stealth),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TimingPattern::Regular => "regular",
            TimingPattern::Random => "random",
            TimingPattern::Burst => "burst",
            TimingPattern::Stealth => "stealth",
        }
    }
}

/// Parse a config-file encoding name. `base64`, `base64url` and `custom`
/// all select URL-safe base64, which is what the custom variant is.
pub fn parse_encoding(s: &str) -> Option<Encoding> {
    match s.to_ascii_lowercase().as_str() {
        "base64" | "base64url" | "custom" => Some(Encoding::Base64Url),
        "base32" => Some(Encoding::Base32),
        "hex" => Some(Encoding::Hex),
        _ => None,
    }
}

pub fn encoding_name(e: Encoding) -> &'static str {
    match e {
        Encoding::Base64Url => "base64",
        Encoding::Base32 => "base32",
        Encoding::Hex => "hex",
    }
}

/// Validated scenario settings used by the exfiltration engine.
#[derive(Debug, Clone)]
pub struct ExfilConfig {
    pub name: String,
    pub description: String,
    pub doh_servers: Vec<String>,
    pub target_domains: Vec<String>,
    pub chunk_size: usize,
    pub encoding: Encoding,
    pub timing_pattern: TimingPattern,
    pub base_delay: f64,
    pub delay_variance: f64,
    pub burst_size: usize,
    pub compression: bool,
    /// `Some` enables encryption; the key must be non-empty.
    pub encryption_key: Option<String>,
    pub subdomain_randomization: bool,
    pub padding: bool,
    pub domain_rotation: bool,
    pub test_files: Vec<String>,
    /// `None` retries failed sends without bound.
    pub max_retries: Option<u32>,
    pub http_method: HttpMethod,
    pub rng_seed: u64,
    pub notes: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unreadable config: {0}")]
    Parse(#[from] serde_json::Error),
}

impl ExfilConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.doh_servers.is_empty() {
            return fail("at least one DoH server is required");
        }
        if self.target_domains.is_empty() {
            return fail("at least one target domain is required");
        }
        if self.chunk_size < 1 {
            return fail("chunk_size must be at least 1");
        }
        if self.base_delay < 0.0 || self.delay_variance < 0.0 {
            return fail("delays must be non-negative");
        }
        if self.burst_size < 1 {
            return fail("burst_size must be at least 1");
        }
        if matches!(&self.encryption_key, Some(k) if k.is_empty()) {
            return fail("encryption key must be non-empty");
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            compression: self.compression,
            encryption_key: self
                .encryption_key
                .as_ref()
                .map(|k| k.as_bytes().to_vec()),
            encoding: self.encoding,
        }
    }

    pub fn framing_config(&self) -> FramingConfig {
        FramingConfig {
            chunk_size: self.chunk_size,
            padding: self.padding,
            subdomain_randomization: self.subdomain_randomization,
            target_domains: self.target_domains.clone(),
            domain_rotation: self.domain_rotation,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text)?;
        let cfg = file.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ConfigFile::from_config(self))
            .expect("config serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(v: &[String]) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v[0].clone())
        } else {
            OneOrMany::Many(v.to_vec())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ExfilSection {
    #[serde(rename = "doh_server", alias = "doh_servers")]
    doh_server: OneOrMany,
    #[serde(rename = "target_domain", alias = "target_domains")]
    target_domain: OneOrMany,
    chunk_size: usize,
    encoding: String,
    timing_pattern: TimingPattern,
    base_delay: f64,
    compression: bool,
    encryption: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    encryption_key: Option<String>,
    subdomain_randomization: bool,
    padding: bool,
    domain_rotation: bool,
    #[serde(default = "default_variance")]
    delay_variance: f64,
    #[serde(default = "default_burst", skip_serializing_if = "Option::is_none")]
    burst_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    http_method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
}

fn default_variance() -> f64 {
    0.0
}

fn default_burst() -> Option<usize> {
    None
}

/// On-disk JSON layout of a scenario file.
#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    name: String,
    #[serde(default)]
    description: String,
    exfiltration_config: ExfilSection,
    #[serde(default)]
    test_files: Vec<String>,
    #[serde(default)]
    notes: String,
}

impl ConfigFile {
    fn into_config(self) -> Result<ExfilConfig, ConfigError> {
        let s = self.exfiltration_config;
        let encoding = parse_encoding(&s.encoding)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown encoding {:?}", s.encoding)))?;
        let http_method = match s.http_method.as_deref() {
            None => HttpMethod::Post,
            Some(m) if m.eq_ignore_ascii_case("post") => HttpMethod::Post,
            Some(m) if m.eq_ignore_ascii_case("get") => HttpMethod::Get,
            Some(m) => {
                return Err(ConfigError::Invalid(format!("unknown http_method {m:?}")));
            }
        };
        if s.encryption && s.encryption_key.is_none() {
            return Err(ConfigError::Invalid(
                "encryption enabled without encryption_key".into(),
            ));
        }
        Ok(ExfilConfig {
            name: self.name,
            description: self.description,
            doh_servers: s.doh_server.into_vec(),
            target_domains: s.target_domain.into_vec(),
            chunk_size: s.chunk_size,
            encoding,
            timing_pattern: s.timing_pattern,
            base_delay: s.base_delay,
            delay_variance: s.delay_variance,
            burst_size: s.burst_size.unwrap_or(DEFAULT_BURST_SIZE),
            compression: s.compression,
            encryption_key: if s.encryption { s.encryption_key } else { None },
            subdomain_randomization: s.subdomain_randomization,
            padding: s.padding,
            domain_rotation: s.domain_rotation,
            test_files: self.test_files,
            max_retries: s.max_retries,
            http_method,
            rng_seed: s.rng_seed.unwrap_or(0),
            notes: self.notes,
        })
    }

    fn from_config(cfg: &ExfilConfig) -> Self {
        ConfigFile {
            name: cfg.name.clone(),
            description: cfg.description.clone(),
            exfiltration_config: ExfilSection {
                doh_server: OneOrMany::from_vec(&cfg.doh_servers),
                target_domain: OneOrMany::from_vec(&cfg.target_domains),
                chunk_size: cfg.chunk_size,
                encoding: encoding_name(cfg.encoding).to_string(),
                timing_pattern: cfg.timing_pattern,
                base_delay: cfg.base_delay,
                compression: cfg.compression,
                encryption: cfg.encryption_key.is_some(),
                encryption_key: cfg.encryption_key.clone(),
                subdomain_randomization: cfg.subdomain_randomization,
                padding: cfg.padding,
                domain_rotation: cfg.domain_rotation,
                delay_variance: cfg.delay_variance,
                burst_size: (cfg.timing_pattern == TimingPattern::Burst
                    || cfg.burst_size != DEFAULT_BURST_SIZE)
                    .then_some(cfg.burst_size),
                max_retries: cfg.max_retries,
                http_method: (cfg.http_method == HttpMethod::Get).then(|| "GET".to_string()),
                rng_seed: (cfg.rng_seed != 0).then_some(cfg.rng_seed),
            },
            test_files: cfg.test_files.clone(),
            notes: cfg.notes.clone(),
        }
    }
}
