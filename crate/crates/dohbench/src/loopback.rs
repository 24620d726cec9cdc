//! In-process transport that hands client requests straight to the server
//! while recording synthetic packet events for the flow meter.

use std::cell::Cell;
use std::rc::Rc;

use dohcore::client::{Transport, TransportError};
use dohcore::dohwire::{decode_doh_get_param, decode_query, DohRequest, HttpMethod};
use dohcore::flowmeter::PacketEvent;
use dohcore::server::ExfilServer;

/// Address the simulated client sends from.
pub const CLIENT_IP: &str = "172.18.0.2";
/// Ephemeral source port the simulated client keeps for a whole run.
pub const CLIENT_PORT: u16 = 40_000;
/// Address the simulated resolver listens on.
pub const RESOLVER_IP: &str = "172.18.0.5";
/// HTTPS port of the simulated resolver.
pub const RESOLVER_PORT: u16 = 443;

/// Default per-message framing overhead in bytes added on top of the DNS
/// payload, standing in for HTTP/2 and TLS record framing.
pub const DEFAULT_OVERHEAD: u64 = 120;

/// Fault callback: given the zero-based exchange index and the outgoing
/// request, return an error to inject instead of delivering it.
pub type FaultHook<'a> = Box<dyn FnMut(usize, &DohRequest) -> Option<TransportError> + 'a>;

/// Transport that short-circuits the network: each request is decoded,
/// ingested by the in-process [`ExfilServer`], and answered immediately.
///
/// Every successful exchange records two [`PacketEvent`]s at the current
/// virtual time: the query from client to resolver and the response back.
/// An injected fault fails the exchange before anything reaches the wire,
/// so no events are recorded for it.
pub struct LoopbackTransport<'a> {
    server: &'a ExfilServer,
    now: Rc<Cell<f64>>,
    overhead: u64,
    exchanges: usize,
    fault: Option<FaultHook<'a>>,
    /// Packet events recorded so far, in exchange order.
    pub events: Vec<PacketEvent>,
}

impl<'a> LoopbackTransport<'a> {
    pub fn new(server: &'a ExfilServer, now: Rc<Cell<f64>>) -> Self {
        LoopbackTransport {
            server,
            now,
            overhead: DEFAULT_OVERHEAD,
            exchanges: 0,
            fault: None,
            events: Vec::new(),
        }
    }

    /// Overrides the framing overhead added to each recorded packet length.
    pub fn with_overhead(mut self, overhead: u64) -> Self {
        self.overhead = overhead;
        self
    }

    /// Installs a fault hook consulted once per exchange.
    pub fn with_fault(mut self, hook: FaultHook<'a>) -> Self {
        self.fault = Some(hook);
        self
    }

    /// Number of exchanges attempted so far, including faulted ones.
    pub fn exchange_count(&self) -> usize {
        self.exchanges
    }

    /// Recorded bytes on the wire for a request, by method.
    ///
    /// POST carries the DNS message as the body; GET expands it to the
    /// base64url query parameter plus the `?dns=` separator.
    fn request_length(&self, request: &DohRequest, wire_len: usize) -> u64 {
        let framed = match request.method {
            HttpMethod::Post => wire_len,
            HttpMethod::Get => {
                let param_len = request.query_param.as_deref().map_or(0, str::len);
                5 + param_len
            }
        };
        framed as u64 + self.overhead
    }
}

impl Transport for LoopbackTransport<'_> {
    fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError> {
        let index = self.exchanges;
        self.exchanges += 1;
        if let Some(hook) = self.fault.as_mut() {
            if let Some(err) = hook(index, request) {
                return Err(err);
            }
        }
        let wire = match request.method {
            HttpMethod::Post => request
                .body
                .clone()
                .ok_or_else(|| TransportError("POST request without a body".into()))?,
            HttpMethod::Get => {
                let param = request
                    .query_param
                    .as_deref()
                    .ok_or_else(|| TransportError("GET request without a dns parameter".into()))?;
                decode_doh_get_param(param).map_err(|e| TransportError(e.to_string()))?
            }
        };
        let (question, txn_id) =
            decode_query(&wire).map_err(|e| TransportError(e.to_string()))?;
        let ts = self.now.get();
        let answer = self.server.ingest_query(&question, txn_id, ts, CLIENT_IP);
        self.events.push(PacketEvent {
            ts,
            src_ip: CLIENT_IP.to_string(),
            src_port: CLIENT_PORT,
            dst_ip: RESOLVER_IP.to_string(),
            dst_port: RESOLVER_PORT,
            length: self.request_length(request, wire.len()),
        });
        self.events.push(PacketEvent {
            ts,
            src_ip: RESOLVER_IP.to_string(),
            src_port: RESOLVER_PORT,
            dst_ip: CLIENT_IP.to_string(),
            dst_port: CLIENT_PORT,
            length: answer.len() as u64 + self.overhead,
        });
        Ok(answer)
    }
}
