//! Building blocks for a DNS-over-HTTPS exfiltration testbed: payload
//! codecs, QNAME chunk framing, DNS wire handling, client and server
//! engines, flow metering, and detection models.

pub mod chunk;
pub mod client;
pub mod codec;
pub mod detect;
pub mod dohwire;
pub mod flowmeter;
pub mod server;
