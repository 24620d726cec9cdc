//! Minimal DNS wire-format codec (single-question queries, fixed answers)
//! and RFC 8484 DoH request framing for GET and POST.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;

pub const CONTENT_TYPE: &str = "application/dns-message";

const FLAGS_QUERY_RD: u16 = 0x0100;
const FLAGS_RESPONSE: u16 = 0x8180;
const MAX_LABEL_WIRE: usize = 63;
const MAX_NAME_WIRE: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QType {
    A = 1,
    Txt = 16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsQuestion {
    pub qname: String,
    pub qtype: QType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HttpMethod {
    Get,
    Post,
}

/// One DoH exchange as handed to a transport. GET carries the message in the
/// `dns` query parameter; POST carries it verbatim in the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DohRequest {
    pub method: HttpMethod,
    pub url: String,
    pub body: Option<Vec<u8>>,
    pub query_param: Option<String>,
}

impl DohRequest {
    /// Full request URL, including the `dns` parameter for GET.
    pub fn full_url(&self) -> String {
        match &self.query_param {
            Some(param) => format!("{}?dns={param}", self.url),
            None => self.url.clone(),
        }
    }
}

/// Header fields of a response, enough to judge well-formedness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseSummary {
    pub id: u16,
    pub is_response: bool,
    pub answer_count: u16,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("label exceeds {MAX_LABEL_WIRE} octets")]
    LabelTooLong,
    #[error("name exceeds {MAX_NAME_WIRE} octets on the wire")]
    NameTooLong,
    #[error("message truncated")]
    Truncated,
    #[error("bad message format: {0}")]
    BadFormat(&'static str),
}

fn push_name(out: &mut Vec<u8>, qname: &str) -> Result<(), WireError> {
    let start = out.len();
    if !qname.is_empty() {
        for label in qname.split('.') {
            if label.is_empty() {
                return Err(WireError::BadFormat("empty label"));
            }
            if label.len() > MAX_LABEL_WIRE {
                return Err(WireError::LabelTooLong);
            }
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
    }
    out.push(0);
    if out.len() - start > MAX_NAME_WIRE {
        return Err(WireError::NameTooLong);
    }
    Ok(())
}

fn push_header(out: &mut Vec<u8>, id: u16, flags: u16, counts: [u16; 4]) {
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&flags.to_be_bytes());
    for c in counts {
        out.extend_from_slice(&c.to_be_bytes());
    }
}

/// Encode a recursion-desired query for one question.
pub fn encode_query(q: &DnsQuestion, txn_id: u16) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(16 + q.qname.len() + 6);
    push_header(&mut out, txn_id, FLAGS_QUERY_RD, [1, 0, 0, 0]);
    push_name(&mut out, &q.qname)?;
    out.extend_from_slice(&(q.qtype as u16).to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    Ok(out)
}

struct Reader<'a> {
    wire: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        if end > self.wire.len() {
            return Err(WireError::Truncated);
        }
        let s = &self.wire[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

/// Decode a single-question query produced by [`encode_query`] or a plain
/// DNS client. Compression pointers are not supported in questions.
pub fn decode_query(wire: &[u8]) -> Result<(DnsQuestion, u16), WireError> {
    let mut r = Reader { wire, pos: 0 };
    let id = r.u16()?;
    let _flags = r.u16()?;
    let qdcount = r.u16()?;
    let (_an, _ns, _ar) = (r.u16()?, r.u16()?, r.u16()?);
    if qdcount != 1 {
        return Err(WireError::BadFormat("expected exactly one question"));
    }
    let mut labels: Vec<String> = Vec::new();
    loop {
        let len = r.take(1)?[0] as usize;
        if len == 0 {
            break;
        }
        if len > MAX_LABEL_WIRE {
            return Err(WireError::BadFormat("compression pointers unsupported"));
        }
        let raw = r.take(len)?;
        let label =
            std::str::from_utf8(raw).map_err(|_| WireError::BadFormat("non-ASCII label"))?;
        labels.push(label.to_string());
    }
    let qtype = match r.u16()? {
        1 => QType::A,
        16 => QType::Txt,
        _ => return Err(WireError::BadFormat("unsupported qtype")),
    };
    if r.u16()? != 1 {
        return Err(WireError::BadFormat("unsupported qclass"));
    }
    Ok((
        DnsQuestion {
            qname: labels.join("."),
            qtype,
        },
        id,
    ))
}

/// Build the fixed response to a question: A answers carry 127.0.0.1 with
/// TTL 0, TXT answers carry one empty string. The channel is query-direction
/// only, so the answer content is immaterial beyond well-formedness.
pub fn encode_answer(q: &DnsQuestion, txn_id: u16) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    push_header(&mut out, txn_id, FLAGS_RESPONSE, [1, 1, 0, 0]);
    push_name(&mut out, &q.qname)?;
    out.extend_from_slice(&(q.qtype as u16).to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    push_name(&mut out, &q.qname)?;
    out.extend_from_slice(&(q.qtype as u16).to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&0u32.to_be_bytes());
    match q.qtype {
        QType::A => {
            out.extend_from_slice(&4u16.to_be_bytes());
            out.extend_from_slice(&[127, 0, 0, 1]);
        }
        QType::Txt => {
            out.extend_from_slice(&1u16.to_be_bytes());
            out.push(0);
        }
    }
    Ok(out)
}

/// Read the header of a response; enough for connectivity checks.
pub fn decode_response(wire: &[u8]) -> Result<ResponseSummary, WireError> {
    let mut r = Reader { wire, pos: 0 };
    let id = r.u16()?;
    let flags = r.u16()?;
    let _qd = r.u16()?;
    let answer_count = r.u16()?;
    Ok(ResponseSummary {
        id,
        is_response: flags & 0x8000 != 0,
        answer_count,
    })
}

/// Wrap a wire message as an RFC 8484 GET (`?dns=` base64url, no padding).
pub fn build_doh_get(wire: &[u8], server_url: &str) -> DohRequest {
    DohRequest {
        method: HttpMethod::Get,
        url: server_url.to_string(),
        body: None,
        query_param: Some(URL_SAFE_NO_PAD.encode(wire)),
    }
}

/// Wrap a wire message as an RFC 8484 POST (`application/dns-message` body).
pub fn build_doh_post(wire: &[u8], server_url: &str) -> DohRequest {
    DohRequest {
        method: HttpMethod::Post,
        url: server_url.to_string(),
        body: Some(wire.to_vec()),
        query_param: None,
    }
}

/// Recover the wire message from a GET `dns` parameter.
pub fn decode_doh_get_param(param: &str) -> Result<Vec<u8>, WireError> {
    URL_SAFE_NO_PAD
        .decode(param)
        .map_err(|_| WireError::BadFormat("bad dns query parameter"))
}
